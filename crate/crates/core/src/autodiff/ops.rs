//! Differentiable operations on [`Var`].

use super::kernels::{self, BmmGeom, ConvGeom, DepthwiseGeom, PointwiseGeom};
use super::{Node, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    AddBroadcast,
    MulBroadcast,
    Scale,
    AddScalar,
    Reshape,
    Permute,
    Matmul,
    ConvPointwise,
    Conv1d,
    DepthwiseConv,
    Relu,
    Sigmoid,
    Softmax,
    BatchNorm,
    Mean,
    Sum,
    CrossEntropy,
}

pub(super) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBroadcast {
        a: usize,
        b: usize,
        map: Vec<usize>,
    },
    MulBroadcast {
        a: usize,
        b: usize,
        map: Vec<usize>,
    },
    Scale(usize, f64),
    AddScalar(usize),
    Reshape(usize),
    Permute {
        x: usize,
        perm: Vec<usize>,
    },
    Matmul {
        a: usize,
        b: usize,
        geom: BmmGeom,
    },
    ConvPointwise {
        x: usize,
        w: usize,
        bias: Option<usize>,
        geom: PointwiseGeom,
    },
    Conv1d {
        x: usize,
        w: usize,
        bias: Option<usize>,
        geom: ConvGeom,
    },
    DepthwiseConv {
        x: usize,
        kernels: usize,
        geom: DepthwiseGeom,
    },
    Relu(usize),
    Sigmoid(usize),
    Softmax {
        x: usize,
        outer: usize,
        n: usize,
        inner: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        outer: usize,
        features: usize,
        inner: usize,
        x_hat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Mean {
        x: usize,
        map: Vec<usize>,
        count: f64,
    },
    Sum(usize),
    CrossEntropy {
        logits: usize,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
}

type Contributions = Vec<(usize, Vec<f64>)>;

fn reduce_broadcast(dy_like: impl Iterator<Item = f64>, map: &[usize], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (g, &j) in dy_like.zip(map) {
        out[j] += g;
    }
    out
}

impl Op {
    pub(super) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddBroadcast { .. } => OpKind::AddBroadcast,
            Op::MulBroadcast { .. } => OpKind::MulBroadcast,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Permute { .. } => OpKind::Permute,
            Op::Matmul { .. } => OpKind::Matmul,
            Op::ConvPointwise { .. } => OpKind::ConvPointwise,
            Op::Conv1d { .. } => OpKind::Conv1d,
            Op::DepthwiseConv { .. } => OpKind::DepthwiseConv,
            Op::Relu(..) => OpKind::Relu,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Mean { .. } => OpKind::Mean,
            Op::Sum(..) => OpKind::Sum,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }

    pub(super) fn backward(&self, nodes: &[Node], y: &Tensor, dy: &[f64]) -> Contributions {
        let val = |i: usize| nodes[i].value.data();
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, dy.to_vec()), (*b, dy.to_vec())],
            Op::Sub(a, b) => vec![(*a, dy.to_vec()), (*b, dy.iter().map(|g| -g).collect())],
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                vec![
                    (*a, dy.iter().zip(bv).map(|(g, b)| g * b).collect()),
                    (*b, dy.iter().zip(av).map(|(g, a)| g * a).collect()),
                ]
            }
            Op::AddBroadcast { a, b, map } => vec![
                (*a, dy.to_vec()),
                (*b, reduce_broadcast(dy.iter().copied(), map, val(*b).len())),
            ],
            Op::MulBroadcast { a, b, map } => {
                let (av, bv) = (val(*a), val(*b));
                let da = dy.iter().zip(map).map(|(g, &j)| g * bv[j]).collect();
                let db = reduce_broadcast(dy.iter().zip(av).map(|(g, a)| g * a), map, bv.len());
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(x, s) => vec![(*x, dy.iter().map(|g| g * s).collect())],
            Op::AddScalar(x) | Op::Reshape(x) => vec![(*x, dy.to_vec())],
            Op::Permute { x, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                vec![(*x, kernels::permute(dy, y.shape(), &inverse))]
            }
            Op::Matmul { a, b, geom } => {
                let (da, db) = kernels::bmm_backward(geom, val(*a), val(*b), dy);
                vec![(*a, da), (*b, db)]
            }
            Op::ConvPointwise { x, w, bias, geom } => {
                let (dx, dw, db) = kernels::pointwise_backward(geom, val(*x), val(*w), dy);
                let mut out = vec![(*x, dx), (*w, dw)];
                if let Some(b) = bias {
                    out.push((*b, db));
                }
                out
            }
            Op::Conv1d { x, w, bias, geom } => {
                let (dx, dw, db) = kernels::conv_backward(geom, val(*x), val(*w), dy);
                let mut out = vec![(*x, dx), (*w, dw)];
                if let Some(b) = bias {
                    out.push((*b, db));
                }
                out
            }
            Op::DepthwiseConv { x, kernels: k, geom } => {
                let (dx, dk) = kernels::depthwise_backward(geom, val(*x), val(*k), dy);
                vec![(*x, dx), (*k, dk)]
            }
            Op::Relu(x) => {
                let xv = val(*x);
                vec![(
                    *x,
                    dy.iter()
                        .zip(xv)
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            }
            Op::Sigmoid(x) => vec![(
                *x,
                dy.iter()
                    .zip(y.data())
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect(),
            )],
            Op::Softmax { x, outer, n, inner } => vec![(
                *x,
                kernels::softmax_backward(y.data(), dy, *outer, *n, *inner),
            )],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                outer,
                features,
                inner,
                x_hat,
                inv_std,
                batch_stats,
            } => {
                let gv = val(*gamma);
                let m = (outer * inner) as f64;
                let mut dgamma = vec![0.0; *features];
                let mut dbeta = vec![0.0; *features];
                for o in 0..*outer {
                    for f in 0..*features {
                        let r = (o * features + f) * inner;
                        for i in r..r + inner {
                            dgamma[f] += dy[i] * x_hat[i];
                            dbeta[f] += dy[i];
                        }
                    }
                }
                let mut dx = vec![0.0; dy.len()];
                for o in 0..*outer {
                    for f in 0..*features {
                        let r = (o * features + f) * inner;
                        let scale = gv[f] * inv_std[f];
                        for i in r..r + inner {
                            dx[i] = if *batch_stats {
                                scale / m * (m * dy[i] - dbeta[f] - x_hat[i] * dgamma[f])
                            } else {
                                scale * dy[i]
                            };
                        }
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::Mean { x, map, count } => {
                vec![(*x, map.iter().map(|&j| dy[j] / count).collect())]
            }
            Op::Sum(x) => vec![(*x, vec![dy[0]; val(*x).len()])],
            Op::CrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let batch = labels.len();
                let classes = probs.len() / batch;
                let mut g = probs.clone();
                for (b, &l) in labels.iter().enumerate() {
                    g[b * classes + l] -= 1.0;
                }
                let s = dy[0] / batch as f64;
                g.iter_mut().for_each(|v| *v *= s);
                vec![(*logits, g)]
            }
        }
    }
}

fn dim_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{what}: shapes {a:?} and {b:?} are incompatible"))
}

fn check_axis(axis: usize, rank: usize, what: &str) -> Result<()> {
    if axis >= rank {
        return Err(Error::Argument(format!(
            "{what}: axis {axis} out of range for rank {rank}"
        )));
    }
    Ok(())
}

impl<'t> Var<'t> {
    fn record(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'t> {
        let needs = self.tape.needs_grad(inputs);
        self.tape.push(value, op, needs)
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    fn elementwise(
        &self,
        other: Var<'t>,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        self.same_tape(&other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.shape() != b.shape() {
                return Err(dim_err(what, a.shape(), b.shape()));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(self.record(value, op, &[self.id, other.id]))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    fn broadcast(&self, other: Var<'t>, what: &str) -> Result<(Vec<usize>, Vec<usize>)> {
        self.same_tape(&other);
        let (a, b) = (self.shape(), other.shape());
        let ok = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x == y || *y == 1);
        if !ok {
            return Err(dim_err(what, &a, &b));
        }
        Ok((kernels::broadcast_map(&a, &b), a))
    }

    /// `self + other`, where `other` has the same rank and extent 1 on every
    /// broadcast axis.
    pub fn add_broadcast(self, other: Var<'t>) -> Result<Var<'t>> {
        let (map, shape) = self.broadcast(other, "add_broadcast")?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (nodes[self.id].value.data(), nodes[other.id].value.data());
            let data = a.iter().zip(&map).map(|(x, &j)| x + b[j]).collect();
            Tensor::new(shape, data)?
        };
        let op = Op::AddBroadcast {
            a: self.id,
            b: other.id,
            map,
        };
        Ok(self.record(value, op, &[self.id, other.id]))
    }

    /// `self ⊙ other` with the same broadcasting rule as [`Var::add_broadcast`].
    pub fn mul_broadcast(self, other: Var<'t>) -> Result<Var<'t>> {
        let (map, shape) = self.broadcast(other, "mul_broadcast")?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (nodes[self.id].value.data(), nodes[other.id].value.data());
            let data = a.iter().zip(&map).map(|(x, &j)| x * b[j]).collect();
            Tensor::new(shape, data)?
        };
        let op = Op::MulBroadcast {
            a: self.id,
            b: other.id,
            map,
        };
        Ok(self.record(value, op, &[self.id, other.id]))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let value = self.with_value(|t| t.map(|v| v * s));
        self.record(value, Op::Scale(self.id, s), &[self.id])
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let value = self.with_value(|t| t.map(|v| v + c));
        self.record(value, Op::AddScalar(self.id), &[self.id])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.value().reshape(shape)?;
        Ok(self.record(value, Op::Reshape(self.id), &[self.id]))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Argument(format!(
                "permutation {perm:?} is invalid for rank {}",
                shape.len()
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let data = self.with_value(|t| kernels::permute(t.data(), &shape, perm));
        let value = Tensor::new(out_shape, data)?;
        let op = Op::Permute {
            x: self.id,
            perm: perm.to_vec(),
        };
        Ok(self.record(value, op, &[self.id]))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t>> {
        let r = self.shape().len();
        if r < 2 {
            return Err(Error::Argument("transpose needs rank >= 2".into()));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 1, r - 2);
        self.permute(&perm)
    }

    /// Matrix product. Each operand is `[m, k]` / `[k, n]` or carries a
    /// leading batch axis; an unbatched operand is shared across the batch.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.shape(), other.shape());
        let bad = || dim_err("matmul", &a, &b);
        if !(2..=3).contains(&a.len()) || !(2..=3).contains(&b.len()) {
            return Err(bad());
        }
        let (ab, bb) = (a.len() == 3, b.len() == 3);
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(bad());
        }
        let batch = match (ab, bb) {
            (true, true) if a[0] != b[0] => return Err(bad()),
            (true, _) => a[0],
            (false, true) => b[0],
            (false, false) => 1,
        };
        let geom = BmmGeom {
            batch,
            a_batched: ab,
            b_batched: bb,
            m,
            k,
            n,
        };
        let data = {
            let nodes = self.tape.nodes.borrow();
            kernels::bmm_forward(&geom, nodes[self.id].value.data(), nodes[other.id].value.data())
        };
        let shape = if ab || bb { vec![batch, m, n] } else { vec![m, n] };
        let value = Tensor::new(shape, data)?;
        let op = Op::Matmul {
            a: self.id,
            b: other.id,
            geom,
        };
        Ok(self.record(value, op, &[self.id, other.id]))
    }

    /// Per-position linear map across the channel axis `axis`, with weights
    /// `[C_out, C_in]` and optional bias `[C_out]`.
    pub fn conv_pointwise(self, w: Var<'t>, bias: Option<Var<'t>>, axis: usize) -> Result<Var<'t>> {
        let xs = self.shape();
        check_axis(axis, xs.len(), "conv_pointwise")?;
        let ws = w.shape();
        let (outer, cin, inner) = kernels::split_axis(&xs, axis);
        if ws.len() != 2 || ws[1] != cin {
            return Err(dim_err("conv_pointwise channels", &xs, &ws));
        }
        let cout = ws[0];
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(dim_err("conv_pointwise bias", &ws, &b.shape()));
            }
        }
        let geom = PointwiseGeom {
            outer,
            cin,
            cout,
            inner,
        };
        let data = {
            let nodes = self.tape.nodes.borrow();
            kernels::pointwise_forward(
                &geom,
                nodes[self.id].value.data(),
                nodes[w.id].value.data(),
                bias.map(|b| nodes[b.id].value.data()),
            )
        };
        let mut shape = xs;
        shape[axis] = cout;
        let value = Tensor::new(shape, data)?;
        let mut inputs = vec![self.id, w.id];
        inputs.extend(bias.map(|b| b.id));
        let op = Op::ConvPointwise {
            x: self.id,
            w: w.id,
            bias: bias.map(|b| b.id),
            geom,
        };
        Ok(self.record(value, op, &inputs))
    }

    /// Cross-correlation along `axis` with zero padding. The channel axis
    /// `channel_axis` must precede `axis`; weights are `[C_out, C_in, k]`.
    pub fn conv1d(
        self,
        w: Var<'t>,
        bias: Option<Var<'t>>,
        channel_axis: usize,
        axis: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t>> {
        let xs = self.shape();
        check_axis(axis, xs.len(), "conv1d")?;
        if channel_axis >= axis {
            return Err(Error::Argument(format!(
                "conv1d: channel axis {channel_axis} must precede convolved axis {axis}"
            )));
        }
        if stride == 0 {
            return Err(Error::Argument("conv1d: stride must be positive".into()));
        }
        let ws = w.shape();
        let cin = xs[channel_axis];
        if ws.len() != 3 || ws[1] != cin {
            return Err(dim_err("conv1d channels", &xs, &ws));
        }
        let (cout, k) = (ws[0], ws[2]);
        let len_in = xs[axis];
        if k > len_in + 2 * padding {
            return Err(Error::Argument(format!(
                "conv1d: kernel {k} exceeds padded length {} (empty output)",
                len_in + 2 * padding
            )));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(dim_err("conv1d bias", &ws, &b.shape()));
            }
        }
        let geom = ConvGeom {
            outer: xs[..channel_axis].iter().product(),
            cin,
            cout,
            mid: xs[channel_axis + 1..axis].iter().product(),
            len_in,
            len_out: (len_in + 2 * padding - k) / stride + 1,
            inner: xs[axis + 1..].iter().product(),
            k,
            stride,
            pad: padding,
        };
        let data = {
            let nodes = self.tape.nodes.borrow();
            kernels::conv_forward(
                &geom,
                nodes[self.id].value.data(),
                nodes[w.id].value.data(),
                bias.map(|b| nodes[b.id].value.data()),
            )
        };
        let mut shape = xs;
        shape[channel_axis] = cout;
        shape[axis] = geom.len_out;
        let value = Tensor::new(shape, data)?;
        let mut inputs = vec![self.id, w.id];
        inputs.extend(bias.map(|b| b.id));
        let op = Op::Conv1d {
            x: self.id,
            w: w.id,
            bias: bias.map(|b| b.id),
            geom,
        };
        Ok(self.record(value, op, &inputs))
    }

    /// Convolution along `axis` where every slice `x[i0, .., i_{axis-1}, :, ..]`
    /// has its own kernel `kernels[i0, .., i_{axis-1}, :]`. Channels never mix.
    pub fn depthwise_conv(self, kernels: Var<'t>, axis: usize, padding: usize) -> Result<Var<'t>> {
        self.same_tape(&kernels);
        let xs = self.shape();
        check_axis(axis, xs.len(), "depthwise_conv")?;
        let ks = kernels.shape();
        if ks.len() != axis + 1 || ks[..axis] != xs[..axis] {
            return Err(dim_err("depthwise_conv kernels", &xs, &ks));
        }
        let k = ks[axis];
        if k > xs[axis] + 2 * padding {
            return Err(Error::Argument("depthwise_conv: kernel exceeds padded length".into()));
        }
        let geom = DepthwiseGeom {
            rows: xs[..axis].iter().product(),
            len: xs[axis],
            inner: xs[axis + 1..].iter().product(),
            k,
            pad: padding,
        };
        let data = {
            let nodes = self.tape.nodes.borrow();
            kernels::depthwise_forward(&geom, nodes[self.id].value.data(), nodes[kernels.id].value.data())
        };
        let mut shape = xs;
        shape[axis] = geom.len_out();
        let value = Tensor::new(shape, data)?;
        let op = Op::DepthwiseConv {
            x: self.id,
            kernels: kernels.id,
            geom,
        };
        Ok(self.record(value, op, &[self.id, kernels.id]))
    }

    pub fn relu(self) -> Var<'t> {
        let value = self.with_value(|t| t.map(|v| v.max(0.0)));
        self.record(value, Op::Relu(self.id), &[self.id])
    }

    pub fn sigmoid(self) -> Var<'t> {
        let value = self.with_value(|t| t.map(sigmoid));
        self.record(value, Op::Sigmoid(self.id), &[self.id])
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let xs = self.shape();
        check_axis(axis, xs.len(), "softmax")?;
        let (outer, n, inner) = kernels::split_axis(&xs, axis);
        let data = self.with_value(|t| kernels::softmax_forward(t.data(), outer, n, inner));
        let value = Tensor::new(xs, data)?;
        let op = Op::Softmax {
            x: self.id,
            outer,
            n,
            inner,
        };
        Ok(self.record(value, op, &[self.id]))
    }

    /// Batch normalization with statistics of the current batch, reduced over
    /// every axis except `axis`. Returns the output together with the batch
    /// mean and the unbiased batch variance.
    pub fn batch_norm_train(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        axis: usize,
        eps: f64,
    ) -> Result<(Var<'t>, Vec<f64>, Vec<f64>)> {
        let xs = self.shape();
        check_axis(axis, xs.len(), "batch_norm")?;
        let (outer, features, inner) = kernels::split_axis(&xs, axis);
        let (mean, var) = self.with_value(|t| kernels::feature_moments(t.data(), outer, features, inner));
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let m = outer * inner;
        let unbiased = var
            .iter()
            .map(|v| if m > 1 { v * m as f64 / (m - 1) as f64 } else { *v })
            .collect();
        let y = self.normalize(gamma, beta, axis, &mean, &inv_std, true)?;
        Ok((y, mean, unbiased))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        axis: usize,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var<'t>> {
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.normalize(gamma, beta, axis, mean, &inv_std, false)
    }

    fn normalize(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        axis: usize,
        mean: &[f64],
        inv_std: &[f64],
        batch_stats: bool,
    ) -> Result<Var<'t>> {
        let xs = self.shape();
        check_axis(axis, xs.len(), "batch_norm")?;
        let (outer, features, inner) = kernels::split_axis(&xs, axis);
        for (what, len) in [
            ("gamma", gamma.shape().iter().product::<usize>()),
            ("beta", beta.shape().iter().product()),
            ("mean", mean.len()),
            ("inv_std", inv_std.len()),
        ] {
            if len != features {
                return Err(Error::Dimension(format!(
                    "batch_norm: {what} has {len} entries but axis {axis} of {xs:?} has {features}"
                )));
            }
        }
        let (data, x_hat) = {
            let nodes = self.tape.nodes.borrow();
            let x = nodes[self.id].value.data();
            let (g, b) = (nodes[gamma.id].value.data(), nodes[beta.id].value.data());
            let mut x_hat = vec![0.0; x.len()];
            let mut y = vec![0.0; x.len()];
            for o in 0..outer {
                for f in 0..features {
                    let r = (o * features + f) * inner;
                    for i in r..r + inner {
                        x_hat[i] = (x[i] - mean[f]) * inv_std[f];
                        y[i] = g[f] * x_hat[i] + b[f];
                    }
                }
            }
            (y, x_hat)
        };
        let value = Tensor::new(xs, data)?;
        let op = Op::BatchNorm {
            x: self.id,
            gamma: gamma.id,
            beta: beta.id,
            outer,
            features,
            inner,
            x_hat,
            inv_std: inv_std.to_vec(),
            batch_stats,
        };
        Ok(self.record(value, op, &[self.id, gamma.id, beta.id]))
    }

    /// Arithmetic mean over `axes`; those axes are removed from the shape.
    /// Reducing every axis yields shape `[1]`.
    pub fn mean(self, axes: &[usize]) -> Result<Var<'t>> {
        let xs = self.shape();
        let mut reduced = xs.clone();
        for &a in axes {
            check_axis(a, xs.len(), "mean")?;
            if reduced[a] == 0 {
                return Err(Error::Argument(format!("mean: axis {a} listed twice")));
            }
            reduced[a] = 0;
        }
        if axes.iter().any(|&a| xs[a] == 0) {
            return Err(Error::Argument("mean over an empty axis".into()));
        }
        let keep: Vec<usize> = reduced.iter().map(|&r| r.max(1)).collect();
        let count = (numel(&xs) / numel(&keep)) as f64;
        let map = kernels::broadcast_map(&xs, &keep);
        let mut out = vec![0.0; numel(&keep)];
        self.with_value(|t| {
            for (v, &j) in t.data().iter().zip(&map) {
                out[j] += v;
            }
        });
        out.iter_mut().for_each(|v| *v /= count);
        let mut shape: Vec<usize> = reduced.into_iter().filter(|&r| r != 0).collect();
        if shape.is_empty() {
            shape.push(1);
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.record(
            value,
            Op::Mean {
                x: self.id,
                map,
                count,
            },
            &[self.id],
        ))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.with_value(|t| t.data().iter().sum());
        self.record(Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    /// Mean softmax cross-entropy over a `[batch, classes]` logit matrix
    /// (a bare `[classes]` vector is a batch of one).
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t>> {
        let xs = self.shape();
        let (batch, classes) = match xs.as_slice() {
            [c] => (1, *c),
            [b, c] => (*b, *c),
            _ => return Err(Error::Dimension(format!("cross_entropy expects [batch, classes], got {xs:?}"))),
        };
        if labels.len() != batch {
            return Err(Error::Argument(format!(
                "cross_entropy: {} labels for a batch of {batch}",
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Argument(format!(
                "cross_entropy: label {l} out of range for {classes} classes"
            )));
        }
        let (loss, probs) = self.with_value(|t| {
            let probs = kernels::softmax_forward(t.data(), batch, classes, 1);
            let mut loss = 0.0;
            for (b, &l) in labels.iter().enumerate() {
                let row = &t.data()[b * classes..(b + 1) * classes];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - row[l];
            }
            (loss / batch as f64, probs)
        });
        let op = Op::CrossEntropy {
            logits: self.id,
            probs,
            labels: labels.to_vec(),
        };
        Ok(self.record(Tensor::scalar(loss), op, &[self.id]))
    }

    /// Sum of several same-shape values.
    pub fn sum_all(terms: &[Var<'t>]) -> Result<Var<'t>> {
        let (first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Argument("sum_all of no terms".into()))?;
        rest.iter().try_fold(*first, |acc, &t| acc.add(t))
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
