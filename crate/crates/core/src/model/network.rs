use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    build_adjacency, he_normal, AdjacencySet, AgclLayer, AttentionProbe, BatchNorm, Ctx, LearnedGraphInit,
    ModelConfig, Mode, Stc,
};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::param::{Binding, ParamGroup, ParamId, ParamStore};
use crate::skeleton::{SkeletonSequence, SkeletonTopology};
use crate::tensor::Tensor;

/// Graph convolution, attention and temporal convolution with a residual
/// link: `relu(bn(tconv(stc(relu(bn(agcl(f)))))) + res(f))`.
#[derive(Debug, Clone)]
pub struct Block {
    pub agcl: AgclLayer,
    pub bn_graph: BatchNorm,
    pub stc: Stc,
    /// `[C_out, C_out, k_t]` and bias.
    pub tconv: (ParamId, ParamId),
    pub bn_temporal: BatchNorm,
    /// `[C_out, C_in, 1]` strided projection when the shape changes.
    pub residual: Option<(ParamId, ParamId)>,
    pub stride: usize,
    pub padding: usize,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &ModelConfig,
        adj: &AdjacencySet,
        c_in: usize,
        c_out: usize,
        stride: usize,
        frames: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let learned_init = match cfg.learned_graph_init {
            LearnedGraphInit::Zero => None,
            LearnedGraphInit::CopyFixed => Some(adj.normalized.as_slice()),
        };
        let agcl = AgclLayer::new(
            store,
            &format!("{name}.agcl"),
            c_in,
            c_out,
            cfg.embed_width(c_out),
            adj.num_joints(),
            adj.k_v(),
            learned_init,
            rng,
        )?;
        let bn_graph = BatchNorm::new(store, &format!("{name}.bn_graph"), c_out)?;
        let stc = Stc::new(store, &format!("{name}.stc"), c_out, frames, &cfg.stc, rng)?;
        let k = cfg.temporal_kernel;
        let tconv = (
            store.add(
                format!("{name}.tconv.weight"),
                he_normal(&[c_out, c_out, k], c_out * k, rng),
                ParamGroup::Weight,
            )?,
            store.add(format!("{name}.tconv.bias"), Tensor::zeros(&[c_out]), ParamGroup::Weight)?,
        );
        let bn_temporal = BatchNorm::new(store, &format!("{name}.bn_temporal"), c_out)?;
        let residual = if c_in == c_out && stride == 1 {
            None
        } else {
            Some((
                store.add(
                    format!("{name}.residual.weight"),
                    he_normal(&[c_out, c_in, 1], c_in, rng),
                    ParamGroup::Weight,
                )?,
                store.add(format!("{name}.residual.bias"), Tensor::zeros(&[c_out]), ParamGroup::Weight)?,
            ))
        };
        Ok(Self {
            agcl,
            bn_graph,
            stc,
            tconv,
            bn_temporal,
            residual,
            stride,
            padding: cfg.temporal_padding(),
        })
    }

    /// `f` is `[batch, C_in, T, N]`; the result is `[batch, C_out, ⌈T/s⌉, N]`.
    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, f: Var<'t>, fixed: &[Var<'t>]) -> Result<Var<'t>> {
        let g = self.agcl.forward(ctx, f, fixed)?;
        let g = self.bn_graph.forward(ctx, g, 1)?.relu();
        let g = self.stc.forward(ctx, g)?;
        let (w, b) = self.tconv;
        let g = g.conv1d(ctx.p(w), Some(ctx.p(b)), 1, 2, self.stride, self.padding)?;
        let g = self.bn_temporal.forward(ctx, g, 1)?;
        let res = match self.residual {
            None => f,
            Some((w, b)) => f.conv1d(ctx.p(w), Some(ctx.p(b)), 1, 2, self.stride, 0)?,
        };
        Ok(g.add(res)?.relu())
    }
}

/// The full classifier on `[batch, C, T, N, M]` inputs.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub topology: SkeletonTopology,
    pub adjacency: AdjacencySet,
    pub store: ParamStore,
    pub input_bn: BatchNorm,
    pub blocks: Vec<Block>,
    /// `[num_classes, C_last]` and bias.
    pub classifier: (ParamId, ParamId),
}

impl Model {
    /// Builds a freshly initialized model; all randomness comes from `seed`.
    pub fn new(config: ModelConfig, topology: SkeletonTopology, seed: u64) -> Result<Self> {
        config.validate()?;
        let adjacency = build_adjacency(&topology, config.partition, config.k_v)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let n = topology.num_joints;
        let input_bn = BatchNorm::new(&mut store, "input_bn", config.in_channels * n)?;
        let frames = config.block_frames();
        let mut blocks = Vec::with_capacity(config.blocks.len());
        let mut c_in = config.in_channels;
        for (i, spec) in config.blocks.iter().enumerate() {
            blocks.push(Block::new(
                &mut store,
                &format!("blocks.{i}"),
                &config,
                &adjacency,
                c_in,
                spec.channels,
                spec.stride,
                frames[i],
                &mut rng,
            )?);
            c_in = spec.channels;
        }
        let classifier = (
            store.add(
                "classifier.weight",
                he_normal(&[config.num_classes, c_in], c_in, &mut rng),
                ParamGroup::Weight,
            )?,
            store.add("classifier.bias", Tensor::zeros(&[config.num_classes]), ParamGroup::Weight)?,
        );
        Ok(Self {
            config,
            topology,
            adjacency,
            store,
            input_bn,
            blocks,
            classifier,
        })
    }

    /// Expected input shape without the batch axis.
    pub fn input_dims(&self) -> [usize; 4] {
        [
            self.config.in_channels,
            self.config.window,
            self.topology.num_joints,
            self.config.bodies,
        ]
    }

    /// Logits `[batch, num_classes]` for `x` of shape `[batch, C, T, N, M]`.
    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, x: Var<'t>) -> Result<Var<'t>> {
        let [c, t, n, m] = self.input_dims();
        let b = match x.shape()[..] {
            [b, xc, xt, xn, xm] if [xc, xt, xn, xm] == [c, t, n, m] && b > 0 => b,
            ref s => {
                return Err(Error::Dimension(format!(
                    "model expects input [batch, {c}, {t}, {n}, {m}], got {s:?}"
                )))
            }
        };
        let h = x.permute(&[0, 4, 3, 1, 2])?.reshape(&[b * m, n * c, t])?;
        let h = self.input_bn.forward(ctx, h, 1)?;
        let mut h = h.reshape(&[b * m, n, c, t])?.permute(&[0, 2, 3, 1])?;
        let fixed: Vec<Var<'t>> = self.adjacency.normalized.iter().map(|a| ctx.constant(a.clone())).collect();
        for block in &self.blocks {
            h = block.forward(ctx, h, &fixed)?;
        }
        let width = h.shape()[1];
        let pooled = h.mean(&[2, 3])?.reshape(&[b, m, width])?.mean(&[1])?;
        let (w, bias) = self.classifier;
        pooled.conv_pointwise(ctx.p(w), Some(ctx.p(bias)), 1)
    }

    /// Eval-mode logits without gradient bookkeeping.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bind = Binding::new(&tape, &self.store);
        let ctx = Ctx::new(&bind, &self.store, Mode::Eval);
        Ok(self.forward(&ctx, tape.constant(x.clone()))?.value())
    }

    /// Eval-mode attention maps of every block.
    pub fn attention(&self, x: &Tensor) -> Result<Vec<AttentionProbe>> {
        let tape = Tape::new();
        let bind = Binding::new(&tape, &self.store);
        let ctx = Ctx::new(&bind, &self.store, Mode::Eval).with_probes();
        self.forward(&ctx, tape.constant(x.clone()))?;
        Ok(ctx.take_probes())
    }

    pub fn learned_graphs(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(|b| b.agcl.learned.iter().copied()).collect()
    }

    pub fn gates(&self) -> Vec<ParamId> {
        self.blocks.iter().map(|b| b.agcl.gate).collect()
    }

    /// Freezes or releases the learned global graphs.
    pub fn set_learned_graphs_frozen(&mut self, frozen: bool) {
        for id in self.learned_graphs() {
            self.store.get_mut(id).frozen = frozen;
        }
    }

    /// Stacks sequences of identical shape into `[batch, C, T, N, M]`.
    pub fn stack(seqs: &[&SkeletonSequence]) -> Result<Tensor> {
        let first = seqs
            .first()
            .ok_or_else(|| Error::Argument("cannot stack an empty batch".into()))?
            .dims();
        let mut data = Vec::with_capacity(seqs.len() * first.iter().product::<usize>());
        for s in seqs {
            if s.dims() != first {
                return Err(Error::Dimension(format!(
                    "sequence `{}` has shape {:?}, batch has {first:?}",
                    s.id,
                    s.dims()
                )));
            }
            data.extend_from_slice(s.data());
        }
        let mut shape = vec![seqs.len()];
        shape.extend(first);
        Tensor::new(shape, data)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterCount {
    pub total: usize,
    /// Scalar count per module path, in first-appearance order.
    pub modules: Vec<(String, usize)>,
}

/// Module path of a parameter name, e.g. `blocks.3.agcl` or
/// `blocks.3.stc.tam`.
pub fn module_path(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    let depth = match parts.as_slice() {
        ["blocks", _, "stc", ..] => 4,
        ["blocks", ..] => 3,
        _ => 1,
    };
    parts[..depth.min(parts.len() - 1).max(1)].join(".")
}

/// Exact scalar parameter count of a store, grouped by module.
pub fn count_parameters(store: &ParamStore) -> ParameterCount {
    let mut order = Vec::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for p in store.params() {
        let m = module_path(&p.name);
        if !counts.contains_key(&m) {
            order.push(m.clone());
        }
        *counts.entry(m).or_default() += p.value.len();
    }
    ParameterCount {
        total: store.num_scalars(),
        modules: order.into_iter().map(|m| (m.clone(), counts[&m])).collect(),
    }
}
