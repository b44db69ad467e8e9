//! Spatial, temporal and channel attention on `[batch, C, T, N]` features.
//!
//! The last layer of every attention map starts at zero, so a fresh module
//! produces constant maps (0.5 for sigmoid gates, uniform temporal kernels)
//! while every weight still receives gradient.

use rand::Rng;

use super::{he_normal, AttentionProbe, Ctx, StcConfig};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::param::{ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

fn check_features(f: &Var<'_>, channels: usize, what: &str) -> Result<[usize; 4]> {
    match f.shape()[..] {
        [b, c, t, n] if c == channels => Ok([b, c, t, n]),
        ref s => Err(Error::Dimension(format!("{what} expects [batch, {channels}, T, N], got {s:?}"))),
    }
}

fn reduced(channels: usize, r: usize) -> Result<usize> {
    if r == 0 || channels < r {
        return Err(Error::Config(format!(
            "{channels} channels cannot be reduced by a ratio of {r}"
        )));
    }
    Ok(channels / r)
}

/// Per-joint gate: mean over frames, convolution along the joint axis,
/// sigmoid, applied as `f ⊙ (1 + M_s)`.
#[derive(Debug, Clone)]
pub struct Sam {
    pub channels: usize,
    pub kernel: usize,
    /// `[1, C, k_s]`
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Sam {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("spatial attention kernel must be odd, got {kernel}")));
        }
        Ok(Self {
            channels,
            kernel,
            weight: store.add(format!("{name}.weight"), Tensor::zeros(&[1, channels, kernel]), ParamGroup::Weight)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1]), ParamGroup::Weight)?,
        })
    }

    /// Returns the output and the map `M_s` as `[batch, N]`.
    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, f: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let [b, _, _, n] = check_features(&f, self.channels, "spatial attention")?;
        let pooled = f.mean(&[2])?;
        let map = pooled
            .conv1d(ctx.p(self.weight), Some(ctx.p(self.bias)), 1, 2, 1, (self.kernel - 1) / 2)?
            .sigmoid()
            .reshape(&[b, n])?;
        let out = f.mul_broadcast(map.add_scalar(1.0).reshape(&[b, 1, 1, n])?)?;
        Ok((out, map))
    }
}

/// Temporal attention: a short-term sigmoid gate per frame followed by a
/// per-channel adaptive kernel applied as a depthwise temporal convolution.
#[derive(Debug, Clone)]
pub struct Tam {
    pub channels: usize,
    pub frames: usize,
    pub kernel: usize,
    /// `[C/r, C, 5]` and bias.
    pub reduce: (ParamId, ParamId),
    /// `[C, C/r, 1]` and bias.
    pub expand: (ParamId, ParamId),
    /// `[⌊T/4⌋, T]`
    pub fc1: ParamId,
    /// `[K, ⌊T/4⌋]`
    pub fc2: ParamId,
}

const TAM_REDUCE_KERNEL: usize = 5;

impl Tam {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        frames: usize,
        reduction: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = reduced(channels, reduction)?;
        if frames < 4 {
            return Err(Error::Config(format!("temporal attention needs at least 4 frames, got {frames}")));
        }
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("temporal attention kernel must be odd, got {kernel}")));
        }
        let fc_hidden = frames / 4;
        let w = ParamGroup::Weight;
        Ok(Self {
            channels,
            frames,
            kernel,
            reduce: (
                store.add(
                    format!("{name}.reduce.weight"),
                    he_normal(&[hidden, channels, TAM_REDUCE_KERNEL], channels * TAM_REDUCE_KERNEL, rng),
                    w,
                )?,
                store.add(format!("{name}.reduce.bias"), Tensor::zeros(&[hidden]), w)?,
            ),
            expand: (
                store.add(format!("{name}.expand.weight"), Tensor::zeros(&[channels, hidden, 1]), w)?,
                store.add(format!("{name}.expand.bias"), Tensor::zeros(&[channels]), w)?,
            ),
            fc1: store.add(format!("{name}.fc1"), he_normal(&[fc_hidden, frames], frames, rng), w)?,
            fc2: store.add(format!("{name}.fc2"), Tensor::zeros(&[kernel, fc_hidden]), w)?,
        })
    }

    /// Returns `F⁰ = W ⊙ F` and the pooled `F^S` (`[batch, C, T]`).
    pub fn short_branch<'t>(&self, ctx: &Ctx<'_, 't>, f: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let [b, c, t, _] = check_features(&f, self.channels, "temporal attention")?;
        let pooled = f.mean(&[3])?;
        let (rw, rb) = self.reduce;
        let (ew, eb) = self.expand;
        let gate = pooled
            .conv1d(ctx.p(rw), Some(ctx.p(rb)), 1, 2, 1, (TAM_REDUCE_KERNEL - 1) / 2)?
            .conv1d(ctx.p(ew), Some(ctx.p(eb)), 1, 2, 1, 0)?
            .sigmoid();
        let f0 = f.mul_broadcast(gate.reshape(&[b, c, t, 1])?)?;
        Ok((f0, pooled))
    }

    /// Returns `Z` and the per-channel kernels `z` (`[batch, C, K]`).
    pub fn long_branch<'t>(&self, ctx: &Ctx<'_, 't>, f0: Var<'t>, pooled: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let [_, _, t, _] = check_features(&f0, self.channels, "temporal attention")?;
        if t != self.frames {
            return Err(Error::Dimension(format!(
                "temporal attention built for {} frames, got {t}",
                self.frames
            )));
        }
        let kernels = pooled
            .conv_pointwise(ctx.p(self.fc1), None, 2)?
            .relu()
            .conv_pointwise(ctx.p(self.fc2), None, 2)?
            .softmax(2)?;
        let z = f0.depthwise_conv(kernels, 2, (self.kernel - 1) / 2)?;
        Ok((z, kernels))
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, f: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let (f0, pooled) = self.short_branch(ctx, f)?;
        self.long_branch(ctx, f0, pooled)
    }
}

/// Squeeze-excite style channel gate applied as `f ⊙ (1 + M_c)`.
#[derive(Debug, Clone)]
pub struct Cam {
    pub channels: usize,
    /// `[C/r, C]`
    pub w1: ParamId,
    /// `[C, C/r]`
    pub w2: ParamId,
}

impl Cam {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = reduced(channels, reduction)?;
        Ok(Self {
            channels,
            w1: store.add(format!("{name}.w1"), he_normal(&[hidden, channels], channels, rng), ParamGroup::Weight)?,
            w2: store.add(format!("{name}.w2"), Tensor::zeros(&[channels, hidden]), ParamGroup::Weight)?,
        })
    }

    /// Returns the output and the map `M_c` as `[batch, C]`.
    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, f: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let [b, c, _, _] = check_features(&f, self.channels, "channel attention")?;
        let map = f
            .mean(&[2, 3])?
            .conv_pointwise(ctx.p(self.w1), None, 1)?
            .relu()
            .conv_pointwise(ctx.p(self.w2), None, 1)?
            .sigmoid();
        let out = f.mul_broadcast(map.add_scalar(1.0).reshape(&[b, c, 1, 1])?)?;
        Ok((out, map))
    }
}

/// Spatial, then temporal, then channel attention.
#[derive(Debug, Clone)]
pub struct Stc {
    pub sam: Sam,
    pub tam: Tam,
    pub cam: Cam,
}

impl Stc {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        frames: usize,
        cfg: &StcConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            sam: Sam::new(store, &format!("{name}.sam"), channels, cfg.sam_kernel)?,
            tam: Tam::new(store, &format!("{name}.tam"), channels, frames, cfg.reduction, cfg.tam_kernel, rng)?,
            cam: Cam::new(store, &format!("{name}.cam"), channels, cfg.reduction, rng)?,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, f: Var<'t>) -> Result<Var<'t>> {
        let (f, sam) = self.sam.forward(ctx, f)?;
        let (f, tam) = self.tam.forward(ctx, f)?;
        let (f, cam) = self.cam.forward(ctx, f)?;
        if ctx.probing() {
            ctx.push_probe(AttentionProbe {
                sam: sam.value(),
                tam_kernels: tam.value(),
                cam: cam.value(),
            });
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::Tape;
    use crate::model::Mode;
    use crate::param::Binding;

    fn run<T>(store: &ParamStore, f: impl for<'t> FnOnce(&Ctx<'_, 't>) -> T) -> T {
        let tape = Tape::new();
        let bind = Binding::new(&tape, store);
        let ctx = Ctx::new(&bind, store, Mode::Eval);
        f(&ctx)
    }

    /// Centered moving average along T with zero padding, `[B, C, T, N]`.
    fn moving_average(x: &Tensor, k: usize) -> Tensor {
        let s = x.shape().to_vec();
        let half = (k / 2) as isize;
        Tensor::from_fn(&s, |i| {
            let (n, t) = (i % s[3], (i / s[3]) % s[2]);
            let base = i - n - t * s[3];
            let mut acc = 0.0;
            for d in -half..=half {
                let tt = t as isize + d;
                if tt >= 0 && (tt as usize) < s[2] {
                    acc += x.data()[base + tt as usize * s[3] + n];
                }
            }
            acc / k as f64
        })
    }

    #[test]
    fn zero_sam_scales_by_one_and_a_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let sam = Sam::new(&mut store, "s", 4, 9).unwrap();
        let x = Tensor::randn(&[2, 4, 5, 7], 1.0, &mut rng);
        let (out, map) = run(&store, |ctx| {
            let (o, m) = sam.forward(ctx, ctx.constant(x.clone())).unwrap();
            (o.value(), m.value())
        });
        assert!(map.data().iter().all(|&v| v == 0.5));
        for (o, v) in out.data().iter().zip(x.data()) {
            assert_eq!(*o, 1.5 * v);
        }
    }

    #[test]
    fn pointwise_sam_commutes_with_joint_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let sam = Sam::new(&mut store, "s", 3, 1).unwrap();
        store.get_mut(sam.weight).value = Tensor::randn(&[1, 3, 1], 1.0, &mut rng);
        store.get_mut(sam.bias).value = Tensor::from_vec(vec![0.3]);
        let x = Tensor::randn(&[1, 3, 4, 5], 1.0, &mut rng);
        let perm = [3, 0, 4, 1, 2];
        let permuted = Tensor::from_fn(&[1, 3, 4, 5], |i| x.data()[i - i % 5 + perm[i % 5]]);
        let (a, b) = run(&store, |ctx| {
            let a = sam.forward(ctx, ctx.constant(x.clone())).unwrap().0.value();
            let b = sam.forward(ctx, ctx.constant(permuted.clone())).unwrap().0.value();
            (a, b)
        });
        for i in 0..a.len() {
            assert!((b.data()[i] - a.data()[i - i % 5 + perm[i % 5]]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_tam_is_moving_average_of_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let tam = Tam::new(&mut store, "t", 4, 8, 4, 5, &mut rng).unwrap();
        for id in [tam.reduce.0, tam.fc1] {
            let shape = store.get(id).value.shape().to_vec();
            store.get_mut(id).value = Tensor::zeros(&shape);
        }
        let x = Tensor::randn(&[2, 4, 8, 3], 1.0, &mut rng);
        let (out, f0, kernels) = run(&store, |ctx| {
            let (f0, pooled) = tam.short_branch(ctx, ctx.constant(x.clone())).unwrap();
            let (z, k) = tam.long_branch(ctx, f0, pooled).unwrap();
            (z.value(), f0.value(), k.value())
        });
        assert!(f0.data().iter().zip(x.data()).all(|(a, b)| *a == 0.5 * b));
        assert!(kernels.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let expect = moving_average(&x.map(|v| 0.5 * v), 5);
        assert!(out.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn uniform_kernel_on_constant_sequence_scales_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let tam = Tam::new(&mut store, "t", 4, 8, 4, 5, &mut rng).unwrap();
        let f0 = Tensor::ones(&[1, 4, 8, 2]);
        let pooled = Tensor::randn(&[1, 4, 8], 1.0, &mut rng);
        let z = run(&store, |ctx| {
            tam.long_branch(ctx, ctx.constant(f0.clone()), ctx.constant(pooled.clone()))
                .unwrap()
                .0
                .value()
        });
        let expect = [0.6, 0.8, 1.0, 1.0, 1.0, 1.0, 0.8, 0.6];
        for c in 0..4 {
            for (t, e) in expect.iter().enumerate() {
                assert!((z.get(&[0, c, t, 1]) - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn trained_tam_kernels_sum_to_one_and_gates_are_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let tam = Tam::new(&mut store, "t", 8, 12, 4, 5, &mut rng).unwrap();
        for id in [tam.expand.0, tam.fc2] {
            let shape = store.get(id).value.shape().to_vec();
            store.get_mut(id).value = Tensor::randn(&shape, 1.0, &mut rng);
        }
        let x = Tensor::randn(&[2, 8, 12, 3], 1.0, &mut rng);
        let kernels = run(&store, |ctx| tam.forward(ctx, ctx.constant(x.clone())).unwrap().1.value());
        for row in kernels.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn constant_in_joints_pools_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let tam = Tam::new(&mut store, "t", 4, 8, 4, 5, &mut rng).unwrap();
        let per_frame = Tensor::randn(&[1, 4, 8, 1], 1.0, &mut rng);
        let x = Tensor::from_fn(&[1, 4, 8, 6], |i| per_frame.data()[i / 6]);
        let pooled = run(&store, |ctx| tam.short_branch(ctx, ctx.constant(x.clone())).unwrap().1.value());
        assert!(pooled.data().iter().zip(per_frame.data()).all(|(a, b)| (a - b).abs() <= 1e-15 * b.abs()));
    }

    #[test]
    fn tam_and_cam_reject_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        assert!(matches!(Tam::new(&mut store, "a", 3, 8, 4, 5, &mut rng), Err(Error::Config(_))));
        assert!(matches!(Tam::new(&mut store, "b", 8, 3, 4, 5, &mut rng), Err(Error::Config(_))));
        assert!(matches!(Cam::new(&mut store, "c", 3, 4, &mut rng), Err(Error::Config(_))));
        assert!(matches!(Sam::new(&mut store, "d", 3, 4), Err(Error::Config(_))));
    }

    #[test]
    fn zero_cam_scales_and_pooling_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let cam = Cam::new(&mut store, "c", 8, 4, &mut rng).unwrap();
        let x = Tensor::randn(&[2, 8, 3, 4], 1.0, &mut rng);
        let (out, map) = run(&store, |ctx| {
            let (o, m) = cam.forward(ctx, ctx.constant(x.clone())).unwrap();
            (o.value(), m.value())
        });
        assert!(map.data().iter().all(|&v| v == 0.5));
        assert!(out.data().iter().zip(x.data()).all(|(a, b)| *a == 1.5 * b));
        let pre = |s: f64| {
            run(&store, |ctx| {
                ctx.constant(x.map(|v| v * s))
                    .mean(&[2, 3])
                    .unwrap()
                    .conv_pointwise(ctx.p(cam.w1), None, 1)
                    .unwrap()
                    .value()
            })
        };
        let (a, b) = (pre(1.0), pre(2.5));
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| (2.5 * x - y).abs() < 1e-12));
    }

    #[test]
    fn zero_stc_composes_the_three_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let stc = Stc::new(&mut store, "s", 8, 10, &StcConfig::default(), &mut rng).unwrap();
        for id in [stc.tam.reduce.0, stc.tam.fc1, stc.cam.w1] {
            let shape = store.get(id).value.shape().to_vec();
            store.get_mut(id).value = Tensor::zeros(&shape);
        }
        let x = Tensor::randn(&[2, 8, 10, 5], 1.0, &mut rng);
        let out = run(&store, |ctx| stc.forward(ctx, ctx.constant(x.clone())).unwrap().value());
        let expect = moving_average(&x.map(|v| 0.5 * 1.5 * v), 5).map(|v| 1.5 * v);
        assert!(out.max_abs_diff(&expect) < 1e-12);
        assert_eq!(out.shape(), x.shape());
    }
}
