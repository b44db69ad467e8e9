//! The adaptive graph convolutional network with spatial, temporal and
//! channel attention.
//!
//! Layers own [`ParamId`]s into a shared [`ParamStore`]; a forward pass binds
//! them onto a tape through a [`Ctx`]. Feature maps inside the network are
//! `[batch, C, T, N]` with bodies folded into the batch.

mod agcl;
mod attention;
mod config;
mod graph;
mod network;

use std::cell::RefCell;

use rand::Rng;

use crate::autodiff::Var;
use crate::error::Result;
use crate::param::{Binding, BufferId, ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

pub use agcl::AgclLayer;
pub use attention::{Cam, Sam, Stc, Tam};
pub use config::{BlockSpec, LearnedGraphInit, ModelConfig, PartitionStrategy, StcConfig};
pub use graph::{build_adjacency, compute_sample_graph, gcn_baseline_forward, normalize_partition, AdjacencySet};
pub use network::{count_parameters, module_path, Block, Model, ParameterCount};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are collected for update.
    Train,
    /// Running statistics.
    Eval,
}

/// Batch statistics observed by one batch-norm layer in training mode.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub buffer: BufferId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Attention maps of one block for every element of the batch.
#[derive(Debug, Clone)]
pub struct AttentionProbe {
    /// `[batch, N]`
    pub sam: Tensor,
    /// `[batch, C, K]`
    pub tam_kernels: Tensor,
    /// `[batch, C]`
    pub cam: Tensor,
}

/// State of one forward pass.
pub struct Ctx<'a, 't> {
    pub bind: &'a Binding<'t>,
    pub store: &'a ParamStore,
    pub mode: Mode,
    bn_updates: RefCell<Vec<BnUpdate>>,
    probes: Option<RefCell<Vec<AttentionProbe>>>,
}

impl<'a, 't> Ctx<'a, 't> {
    pub fn new(bind: &'a Binding<'t>, store: &'a ParamStore, mode: Mode) -> Self {
        Self {
            bind,
            store,
            mode,
            bn_updates: RefCell::new(Vec::new()),
            probes: None,
        }
    }

    /// Also records attention maps during the pass.
    pub fn with_probes(mut self) -> Self {
        self.probes = Some(RefCell::new(Vec::new()));
        self
    }

    pub fn p(&self, id: ParamId) -> Var<'t> {
        self.bind.var(self.store, id)
    }

    pub fn constant(&self, t: Tensor) -> Var<'t> {
        self.bind.tape().constant(t)
    }

    pub fn take_bn_updates(&self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates.borrow_mut())
    }

    pub fn take_probes(&self) -> Vec<AttentionProbe> {
        self.probes.as_ref().map(|p| std::mem::take(&mut *p.borrow_mut())).unwrap_or_default()
    }

    pub(crate) fn probing(&self) -> bool {
        self.probes.is_some()
    }

    pub(crate) fn push_probe(&self, probe: AttentionProbe) {
        if let Some(p) = &self.probes {
            p.borrow_mut().push(probe);
        }
    }
}

/// Batch normalization over one feature axis.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BufferId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[features]), ParamGroup::NormOrGate)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[features]), ParamGroup::NormOrGate)?,
            stats: store.add_buffer(format!("{name}.running"), features)?,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, x: Var<'t>, axis: usize) -> Result<Var<'t>> {
        let (g, b) = (ctx.p(self.gamma), ctx.p(self.beta));
        match ctx.mode {
            Mode::Train => {
                let (y, mean, var) = x.batch_norm_train(g, b, axis, BN_EPS)?;
                ctx.bn_updates.borrow_mut().push(BnUpdate {
                    buffer: self.stats,
                    mean,
                    var,
                });
                Ok(y)
            }
            Mode::Eval => {
                let s = ctx.store.buffer(self.stats);
                x.batch_norm_eval(g, b, axis, &s.mean, &s.var, BN_EPS)
            }
        }
    }
}

/// Zero-mean normal weights with variance `2 / fan_in`.
pub(crate) fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    Tensor::randn(shape, (2.0 / fan_in.max(1) as f64).sqrt(), rng)
}

/// Applies collected batch statistics to the running buffers.
pub fn apply_bn_updates(store: &mut ParamStore, updates: &[BnUpdate], momentum: f64) {
    for u in updates {
        let s = store.buffer_mut(u.buffer);
        for (r, v) in s.mean.iter_mut().zip(&u.mean) {
            *r = (1.0 - momentum) * *r + momentum * v;
        }
        for (r, v) in s.var.iter_mut().zip(&u.var) {
            *r = (1.0 - momentum) * *r + momentum * v;
        }
    }
}
