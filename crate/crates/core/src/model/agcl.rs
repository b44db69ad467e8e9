use rand::Rng;

use super::{he_normal, Ctx};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::param::{ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Adaptive graph convolution.
///
/// For every subset `k` the features are aggregated over the total graph
/// `Ā_k + B_k + α·C_k` and mixed by a pointwise convolution `W_k`; the subset
/// outputs are summed and a residual of the input is added. `B_k` is a free
/// `[N, N]` parameter, `C_k` the per-sample row-softmax of `θ_k(f)ᵀ φ_k(f)`
/// and `α` one scalar gate per layer.
#[derive(Debug, Clone)]
pub struct AgclLayer {
    pub c_in: usize,
    pub c_out: usize,
    pub c_e: usize,
    pub joints: usize,
    /// `W_k` as (`[C_out, C_in]`, bias `[C_out]`).
    pub weights: Vec<(ParamId, ParamId)>,
    /// `B_k`, each `[N, N]`.
    pub learned: Vec<ParamId>,
    /// `θ_k` as (`[C_e, C_in]`, bias `[C_e]`).
    pub theta: Vec<(ParamId, ParamId)>,
    pub phi: Vec<(ParamId, ParamId)>,
    /// `α`, shape `[1]`.
    pub gate: ParamId,
    /// Pointwise projection when `C_in ≠ C_out`; identity otherwise.
    pub residual: Option<(ParamId, ParamId)>,
}

impl AgclLayer {
    /// `learned_init` gives the starting `B_k`; `None` starts them at zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        c_e: usize,
        joints: usize,
        k_v: usize,
        learned_init: Option<&[Tensor]>,
        rng: &mut R,
    ) -> Result<Self> {
        if c_in == 0 || c_out == 0 || c_e == 0 || joints == 0 || k_v == 0 {
            return Err(Error::Config(format!(
                "{name}: empty layer ({c_in} -> {c_out}, C_e {c_e}, {joints} joints, {k_v} subsets)"
            )));
        }
        if let Some(init) = learned_init {
            if init.len() != k_v || init.iter().any(|b| b.shape() != [joints, joints]) {
                return Err(Error::Dimension(format!("{name}: learned graph init does not match")));
            }
        }
        let mut linear = |store: &mut ParamStore, what: String, o: usize, i: usize, fan_in: usize| {
            Ok::<_, Error>((
                store.add(format!("{what}.weight"), he_normal(&[o, i], fan_in, rng), ParamGroup::Weight)?,
                store.add(format!("{what}.bias"), Tensor::zeros(&[o]), ParamGroup::Weight)?,
            ))
        };
        let mut weights = Vec::with_capacity(k_v);
        let mut learned = Vec::with_capacity(k_v);
        let mut theta = Vec::with_capacity(k_v);
        let mut phi = Vec::with_capacity(k_v);
        for k in 0..k_v {
            weights.push(linear(store, format!("{name}.w{k}"), c_out, c_in, c_in * k_v)?);
            let b = learned_init.map_or_else(|| Tensor::zeros(&[joints, joints]), |init| init[k].clone());
            learned.push(store.add(format!("{name}.b{k}"), b, ParamGroup::Weight)?);
            theta.push(linear(store, format!("{name}.theta{k}"), c_e, c_in, c_in)?);
            phi.push(linear(store, format!("{name}.phi{k}"), c_e, c_in, c_in)?);
        }
        let gate = store.add(format!("{name}.gate"), Tensor::zeros(&[1]), ParamGroup::NormOrGate)?;
        let residual = if c_in == c_out {
            None
        } else {
            Some(linear(store, format!("{name}.residual"), c_out, c_in, c_in)?)
        };
        Ok(Self {
            c_in,
            c_out,
            c_e,
            joints,
            weights,
            learned,
            theta,
            phi,
            gate,
            residual,
        })
    }

    pub fn k_v(&self) -> usize {
        self.weights.len()
    }

    fn check_input(&self, f: &Var<'_>) -> Result<[usize; 4]> {
        match f.shape()[..] {
            [b, c, t, n] if c == self.c_in && n == self.joints => Ok([b, c, t, n]),
            ref s => Err(Error::Dimension(format!(
                "graph convolution expects [batch, {}, T, {}], got {s:?}",
                self.c_in, self.joints
            ))),
        }
    }

    /// The sample graphs `C_k`, each `[batch, N, N]`.
    pub fn sample_graphs<'t>(&self, ctx: &Ctx<'_, 't>, f: Var<'t>) -> Result<Vec<Var<'t>>> {
        let [b, _, t, n] = self.check_input(&f)?;
        (0..self.k_v())
            .map(|k| {
                let embed = |(w, bias): (ParamId, ParamId)| {
                    f.conv_pointwise(ctx.p(w), Some(ctx.p(bias)), 1)?
                        .reshape(&[b, self.c_e * t, n])
                };
                let theta = embed(self.theta[k])?;
                let phi = embed(self.phi[k])?;
                theta.transpose()?.matmul(phi)?.softmax(2)
            })
            .collect()
    }

    /// The residual branch alone.
    pub fn residual_forward<'t>(&self, ctx: &Ctx<'_, 't>, f: Var<'t>) -> Result<Var<'t>> {
        match self.residual {
            None => Ok(f),
            Some((w, b)) => f.conv_pointwise(ctx.p(w), Some(ctx.p(b)), 1),
        }
    }

    /// `f` is `[batch, C_in, T, N]`; `fixed` holds the `K_v` matrices Ā_k.
    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, f: Var<'t>, fixed: &[Var<'t>]) -> Result<Var<'t>> {
        let [b, c, t, n] = self.check_input(&f)?;
        if fixed.len() != self.k_v() || fixed.iter().any(|a| a.shape() != [n, n]) {
            return Err(Error::Dimension(format!(
                "graph convolution needs {} fixed [{n}, {n}] graphs",
                self.k_v()
            )));
        }
        let flat = f.reshape(&[b, c * t, n])?;
        let alpha = ctx.p(self.gate).reshape(&[1, 1, 1])?;
        let sample = self.sample_graphs(ctx, f)?;
        let mut terms = Vec::with_capacity(self.k_v() + 1);
        for k in 0..self.k_v() {
            let global = fixed[k].add(ctx.p(self.learned[k]))?;
            let gated = flat.matmul(sample[k])?.mul_broadcast(alpha)?;
            let aggregated = flat.matmul(global)?.add(gated)?.reshape(&[b, c, t, n])?;
            let (w, bias) = self.weights[k];
            terms.push(aggregated.conv_pointwise(ctx.p(w), Some(ctx.p(bias)), 1)?);
        }
        terms.push(self.residual_forward(ctx, f)?);
        Var::sum_all(&terms)
    }

    /// `Ā_k + B_k` with the current parameters.
    pub fn global_graph(&self, store: &ParamStore, fixed: &Tensor, k: usize) -> Tensor {
        let b = &store.get(self.learned[k]).value;
        Tensor::from_fn(fixed.shape(), |i| fixed.data()[i] + b.data()[i])
    }
}
