//! Fixed partition graphs and plain-tensor reference computations.

use super::config::PartitionStrategy;
use crate::error::{Error, Result};
use crate::skeleton::SkeletonTopology;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencySet {
    pub strategy: PartitionStrategy,
    /// Unnormalized 0/1 partitions, each `[N, N]`.
    pub raw: Vec<Tensor>,
    /// Degree-normalized partitions Ā_k.
    pub normalized: Vec<Tensor>,
}

impl AdjacencySet {
    pub fn k_v(&self) -> usize {
        self.normalized.len()
    }

    pub fn num_joints(&self) -> usize {
        self.normalized.first().map_or(0, |a| a.shape()[0])
    }

    /// Wraps already-normalized matrices, e.g. an identity graph in tests.
    pub fn from_normalized(strategy: PartitionStrategy, normalized: Vec<Tensor>) -> Result<Self> {
        let n = normalized.first().map_or(0, |a| a.shape()[0]);
        if normalized.is_empty() || normalized.iter().any(|a| a.shape() != [n, n]) {
            return Err(Error::Dimension("adjacency matrices must share one square shape".into()));
        }
        Ok(Self {
            strategy,
            raw: normalized.clone(),
            normalized,
        })
    }
}

/// `D_row^{-1/2} A D_col^{-1/2}`; zero degrees leave their rows and columns
/// zero. For symmetric `A` both degree vectors coincide.
pub fn normalize_partition(a: &Tensor) -> Tensor {
    let n = a.shape()[0];
    let inv_sqrt = |d: f64| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
    let row: Vec<f64> = (0..n).map(|i| inv_sqrt((0..n).map(|j| a.get(&[i, j])).sum())).collect();
    let col: Vec<f64> = (0..n).map(|j| inv_sqrt((0..n).map(|i| a.get(&[i, j])).sum())).collect();
    Tensor::from_fn(&[n, n], |idx| row[idx / n] * a.data()[idx] * col[idx % n])
}

pub fn build_adjacency(topo: &SkeletonTopology, strategy: PartitionStrategy, k_v: usize) -> Result<AdjacencySet> {
    topo.validate()?;
    let n = topo.num_joints;
    let hops = topo.hop_distances();
    let to_center: Vec<usize> = (0..n).map(|j| hops[topo.center][j]).collect();
    let mut raw = match (strategy, k_v) {
        (PartitionStrategy::Uniform, 1) => vec![Tensor::zeros(&[n, n])],
        (PartitionStrategy::Distance, k) if k >= 2 => vec![Tensor::zeros(&[n, n]); k],
        (PartitionStrategy::Spatial, 3) => vec![Tensor::zeros(&[n, n]); 3],
        _ => {
            return Err(Error::Config(format!(
                "partition {strategy:?} does not support k_v = {k_v}"
            )))
        }
    };
    for i in 0..n {
        for j in 0..n {
            let d = hops[i][j];
            let k = match strategy {
                PartitionStrategy::Uniform if d <= 1 => 0,
                PartitionStrategy::Distance if d < k_v => d,
                PartitionStrategy::Spatial if d == 0 => 0,
                PartitionStrategy::Spatial if d == 1 && to_center[i] < to_center[j] => 1,
                PartitionStrategy::Spatial if d == 1 => 2,
                _ => continue,
            };
            raw[k].set(&[i, j], 1.0);
        }
    }
    let normalized = raw.iter().map(normalize_partition).collect();
    Ok(AdjacencySet {
        strategy,
        raw,
        normalized,
    })
}

fn check_graph_args(f: &Tensor, n: usize, what: &str) -> Result<(usize, usize)> {
    match f.shape() {
        [c, t, fn_] if *fn_ == n => Ok((*c, *t)),
        s => Err(Error::Dimension(format!("{what}: input {s:?} does not end in {n} joints"))),
    }
}

/// `out[:, :, j] = Σ_i f[:, :, i] g[i, j]` for `f` of shape `[C, T, N]`.
fn graph_product(f: &Tensor, g: &Tensor) -> Tensor {
    let [c, t, n] = [f.shape()[0], f.shape()[1], f.shape()[2]];
    let mut out = Tensor::zeros(&[c, t, n]);
    for row in 0..c * t {
        let src = &f.data()[row * n..(row + 1) * n];
        let dst = &mut out.data_mut()[row * n..(row + 1) * n];
        for (i, &v) in src.iter().enumerate() {
            for (j, d) in dst.iter_mut().enumerate() {
                *d += v * g.data()[i * n + j];
            }
        }
    }
    out
}

/// Channel mix `out[o, ..] = Σ_c w[o, c] x[c, ..]`.
fn channel_mix(w: &Tensor, x: &Tensor) -> Tensor {
    let (co, ci) = (w.shape()[0], w.shape()[1]);
    let inner = x.len() / ci;
    let mut shape = x.shape().to_vec();
    shape[0] = co;
    let mut out = Tensor::zeros(&shape);
    for o in 0..co {
        for c in 0..ci {
            let wv = w.data()[o * ci + c];
            for i in 0..inner {
                out.data_mut()[o * inner + i] += wv * x.data()[c * inner + i];
            }
        }
    }
    out
}

/// Fixed-graph convolution with learnable masks:
/// `Σ_k W_k (f · (Ā_k ⊙ M_k))` for one sample `f` of shape `[C_in, T, N]`.
pub fn gcn_baseline_forward(f: &Tensor, adj: &AdjacencySet, masks: &[Tensor], weights: &[Tensor]) -> Result<Tensor> {
    let n = adj.num_joints();
    let (c_in, t) = check_graph_args(f, n, "gcn_baseline_forward")?;
    if masks.len() != adj.k_v() || weights.len() != adj.k_v() {
        return Err(Error::Dimension(format!(
            "{} masks and {} weights for {} subsets",
            masks.len(),
            weights.len(),
            adj.k_v()
        )));
    }
    let c_out = weights[0].shape()[0];
    let mut out = Tensor::zeros(&[c_out, t, n]);
    for ((a, m), w) in adj.normalized.iter().zip(masks).zip(weights) {
        if m.shape() != [n, n] || w.shape() != [c_out, c_in] {
            return Err(Error::Dimension(format!(
                "mask {:?} / weight {:?} for {n} joints, {c_in} -> {c_out} channels",
                m.shape(),
                w.shape()
            )));
        }
        let g = Tensor::from_fn(&[n, n], |i| a.data()[i] * m.data()[i]);
        let term = channel_mix(w, &graph_product(f, &g));
        out.data_mut().iter_mut().zip(term.data()).for_each(|(o, v)| *o += v);
    }
    Ok(out)
}

/// Row-stochastic sample graph `softmax_j(θ(f)ᵀ φ(f))` for one sample
/// `f` of shape `[C_in, T, N]` and embeddings `[C_e, C_in]`.
pub fn compute_sample_graph(f: &Tensor, w_theta: &Tensor, w_phi: &Tensor) -> Result<Tensor> {
    let n = f.shape().last().copied().unwrap_or(0);
    let (c_in, t) = check_graph_args(f, n, "compute_sample_graph")?;
    if w_theta.shape().len() != 2 || w_theta.shape() != w_phi.shape() || w_theta.shape()[1] != c_in {
        return Err(Error::Dimension(format!(
            "embeddings {:?} / {:?} for {c_in} input channels",
            w_theta.shape(),
            w_phi.shape()
        )));
    }
    let theta = channel_mix(w_theta, f);
    let phi = channel_mix(w_phi, f);
    let rows = w_theta.shape()[0] * t;
    let mut s = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let v = (0..rows).map(|r| theta.data()[r * n + i] * phi.data()[r * n + j]).sum();
            s.set(&[i, j], v);
        }
    }
    for i in 0..n {
        let row = &mut s.data_mut()[i * n..(i + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= z);
    }
    Ok(s)
}
