//! Forward and backward kernels on flat slices.
//!
//! Every layout is reduced to a handful of extents (`outer`, `channels`,
//! `inner`, ...) so the same loops serve any tensor rank.

#[inline]
fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(prod(shape[..axis]), shape[axis], prod(shape[axis+1..]))`
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// For every flat index of `full`, the flat index into `reduced`, where
/// `reduced` has the same rank and each extent is either equal or 1.
pub(crate) fn broadcast_map(full: &[usize], reduced: &[usize]) -> Vec<usize> {
    let rank = full.len();
    let mut rstrides = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        rstrides[d] = if reduced[d] == 1 { 0 } else { acc };
        acc *= reduced[d];
    }
    let total: usize = full.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        out.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += rstrides[d];
            if idx[d] < full[d] {
                break;
            }
            off -= rstrides[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}

pub(crate) fn permute(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let in_strides = crate::tensor::strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        out.push(data[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BmmGeom {
    pub batch: usize,
    pub a_batched: bool,
    pub b_batched: bool,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

pub(crate) fn bmm_forward(g: &BmmGeom, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; g.batch * g.m * g.n];
    for bi in 0..g.batch {
        let a0 = if g.a_batched { bi * g.m * g.k } else { 0 };
        let b0 = if g.b_batched { bi * g.k * g.n } else { 0 };
        for i in 0..g.m {
            let yrow = &mut y[(bi * g.m + i) * g.n..(bi * g.m + i + 1) * g.n];
            for p in 0..g.k {
                let aip = a[a0 + i * g.k + p];
                axpy(yrow, &b[b0 + p * g.n..b0 + (p + 1) * g.n], aip);
            }
        }
    }
    y
}

pub(crate) fn bmm_backward(
    g: &BmmGeom,
    a: &[f64],
    b: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut da = vec![0.0; a.len()];
    let mut db = vec![0.0; b.len()];
    for bi in 0..g.batch {
        let a0 = if g.a_batched { bi * g.m * g.k } else { 0 };
        let b0 = if g.b_batched { bi * g.k * g.n } else { 0 };
        for i in 0..g.m {
            let dyrow = &dy[(bi * g.m + i) * g.n..(bi * g.m + i + 1) * g.n];
            for p in 0..g.k {
                let brow = &b[b0 + p * g.n..b0 + (p + 1) * g.n];
                da[a0 + i * g.k + p] += dot(dyrow, brow);
                axpy(
                    &mut db[b0 + p * g.n..b0 + (p + 1) * g.n],
                    dyrow,
                    a[a0 + i * g.k + p],
                );
            }
        }
    }
    (da, db)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PointwiseGeom {
    pub outer: usize,
    pub cin: usize,
    pub cout: usize,
    pub inner: usize,
}

pub(crate) fn pointwise_forward(
    g: &PointwiseGeom,
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let mut y = vec![0.0; g.outer * g.cout * g.inner];
    for o in 0..g.outer {
        for co in 0..g.cout {
            let yrow = &mut y[(o * g.cout + co) * g.inner..(o * g.cout + co + 1) * g.inner];
            if let Some(b) = bias {
                yrow.fill(b[co]);
            }
            for ci in 0..g.cin {
                let xrow = &x[(o * g.cin + ci) * g.inner..(o * g.cin + ci + 1) * g.inner];
                axpy(yrow, xrow, w[co * g.cin + ci]);
            }
        }
    }
    y
}

pub(crate) fn pointwise_backward(
    g: &PointwiseGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; g.cout];
    for o in 0..g.outer {
        for co in 0..g.cout {
            let dyrow = &dy[(o * g.cout + co) * g.inner..(o * g.cout + co + 1) * g.inner];
            db[co] += dyrow.iter().sum::<f64>();
            for ci in 0..g.cin {
                let xr = (o * g.cin + ci) * g.inner..(o * g.cin + ci + 1) * g.inner;
                dw[co * g.cin + ci] += dot(dyrow, &x[xr.clone()]);
                axpy(&mut dx[xr], dyrow, w[co * g.cin + ci]);
            }
        }
    }
    (dx, dw, db)
}

/// Layout `[outer, channels, mid, len, inner]`; convolution runs along `len`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub outer: usize,
    pub cin: usize,
    pub cout: usize,
    pub mid: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub inner: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Output positions `lo` whose tap `kk` lands inside the input.
    #[inline]
    fn valid_range(&self, kk: usize) -> std::ops::Range<usize> {
        // li = lo * stride + kk - pad must lie in [0, len_in)
        let lo_min = if kk >= self.pad {
            0
        } else {
            (self.pad - kk).div_ceil(self.stride)
        };
        let lo_end = if self.len_in + self.pad > kk {
            ((self.len_in + self.pad - kk - 1) / self.stride + 1).min(self.len_out)
        } else {
            0
        };
        lo_min..lo_end.max(lo_min)
    }
}

pub(crate) fn conv_forward(g: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let row_in = g.len_in * g.inner;
    let row_out = g.len_out * g.inner;
    let mut y = vec![0.0; g.outer * g.cout * g.mid * row_out];
    for o in 0..g.outer {
        for co in 0..g.cout {
            for m in 0..g.mid {
                let y0 = ((o * g.cout + co) * g.mid + m) * row_out;
                let yrow = &mut y[y0..y0 + row_out];
                if let Some(b) = bias {
                    yrow.fill(b[co]);
                }
                for ci in 0..g.cin {
                    let x0 = ((o * g.cin + ci) * g.mid + m) * row_in;
                    let xrow = &x[x0..x0 + row_in];
                    for kk in 0..g.k {
                        let wv = w[(co * g.cin + ci) * g.k + kk];
                        for lo in g.valid_range(kk) {
                            let li = lo * g.stride + kk - g.pad;
                            axpy(
                                &mut yrow[lo * g.inner..(lo + 1) * g.inner],
                                &xrow[li * g.inner..(li + 1) * g.inner],
                                wv,
                            );
                        }
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let row_in = g.len_in * g.inner;
    let row_out = g.len_out * g.inner;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; g.cout];
    for o in 0..g.outer {
        for co in 0..g.cout {
            for m in 0..g.mid {
                let y0 = ((o * g.cout + co) * g.mid + m) * row_out;
                let dyrow = &dy[y0..y0 + row_out];
                db[co] += dyrow.iter().sum::<f64>();
                for ci in 0..g.cin {
                    let x0 = ((o * g.cin + ci) * g.mid + m) * row_in;
                    for kk in 0..g.k {
                        let widx = (co * g.cin + ci) * g.k + kk;
                        let wv = w[widx];
                        let mut acc = 0.0;
                        for lo in g.valid_range(kk) {
                            let li = lo * g.stride + kk - g.pad;
                            let dys = &dyrow[lo * g.inner..(lo + 1) * g.inner];
                            let xs = x0 + li * g.inner..x0 + (li + 1) * g.inner;
                            acc += dot(dys, &x[xs.clone()]);
                            axpy(&mut dx[xs], dys, wv);
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Per-row kernels: `x` is `[rows, len, inner]`, `kernels` is `[rows, k]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DepthwiseGeom {
    pub rows: usize,
    pub len: usize,
    pub inner: usize,
    pub k: usize,
    pub pad: usize,
}

impl DepthwiseGeom {
    fn as_conv(&self) -> ConvGeom {
        ConvGeom {
            outer: 1,
            cin: 1,
            cout: 1,
            mid: 1,
            len_in: self.len,
            len_out: self.len + 2 * self.pad + 1 - self.k,
            inner: self.inner,
            k: self.k,
            stride: 1,
            pad: self.pad,
        }
    }

    pub fn len_out(&self) -> usize {
        self.as_conv().len_out
    }
}

pub(crate) fn depthwise_forward(g: &DepthwiseGeom, x: &[f64], kernels: &[f64]) -> Vec<f64> {
    let c = g.as_conv();
    let row_in = g.len * g.inner;
    let row_out = c.len_out * g.inner;
    let mut y = Vec::with_capacity(g.rows * row_out);
    for r in 0..g.rows {
        y.extend(conv_forward(
            &c,
            &x[r * row_in..(r + 1) * row_in],
            &kernels[r * g.k..(r + 1) * g.k],
            None,
        ));
    }
    y
}

pub(crate) fn depthwise_backward(
    g: &DepthwiseGeom,
    x: &[f64],
    kernels: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let c = g.as_conv();
    let row_in = g.len * g.inner;
    let row_out = c.len_out * g.inner;
    let mut dx = Vec::with_capacity(x.len());
    let mut dk = Vec::with_capacity(kernels.len());
    for r in 0..g.rows {
        let (dxr, dkr, _) = conv_backward(
            &c,
            &x[r * row_in..(r + 1) * row_in],
            &kernels[r * g.k..(r + 1) * g.k],
            &dy[r * row_out..(r + 1) * row_out],
        );
        dx.extend(dxr);
        dk.extend(dkr);
    }
    (dx, dk)
}

pub(crate) fn softmax_forward(x: &[f64], outer: usize, n: usize, inner: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let max = (0..n).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..n {
                let e = (x[at(j)] - max).exp();
                y[at(j)] = e;
                total += e;
            }
            for j in 0..n {
                y[at(j)] /= total;
            }
        }
    }
    y
}

pub(crate) fn softmax_backward(
    y: &[f64],
    dy: &[f64],
    outer: usize,
    n: usize,
    inner: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let s: f64 = (0..n).map(|j| dy[at(j)] * y[at(j)]).sum();
            for j in 0..n {
                dx[at(j)] = y[at(j)] * (dy[at(j)] - s);
            }
        }
    }
    dx
}

/// Per-feature mean and biased variance over `[outer, features, inner]`.
pub(crate) fn feature_moments(
    x: &[f64],
    outer: usize,
    features: usize,
    inner: usize,
) -> (Vec<f64>, Vec<f64>) {
    let count = (outer * inner) as f64;
    let mut mean = vec![0.0; features];
    let mut var = vec![0.0; features];
    for (f, m) in mean.iter_mut().enumerate() {
        let mut s = 0.0;
        for o in 0..outer {
            let row = (o * features + f) * inner;
            s += x[row..row + inner].iter().sum::<f64>();
        }
        *m = s / count;
    }
    for (f, v) in var.iter_mut().enumerate() {
        let mut s = 0.0;
        for o in 0..outer {
            let row = (o * features + f) * inner;
            s += x[row..row + inner]
                .iter()
                .map(|&xi| (xi - mean[f]) * (xi - mean[f]))
                .sum::<f64>();
        }
        *v = s / count;
    }
    (mean, var)
}
