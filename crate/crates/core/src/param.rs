//! Named trainable parameters and non-trainable buffers.

use std::collections::BTreeSet;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufferId(pub(crate) usize);

/// How weight decay treats a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Weight,
    /// Batch-norm scales/shifts and graph gates; optionally exempt from decay.
    NormOrGate,
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub momentum: Tensor,
    pub group: ParamGroup,
    /// Frozen parameters receive gradients but are not updated.
    pub frozen: bool,
}

/// Batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    buffers: Vec<RunningStats>,
    names: BTreeSet<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn claim(&mut self, name: &str) -> Result<()> {
        if !self.names.insert(name.to_string()) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        Ok(())
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup) -> Result<ParamId> {
        let name = name.into();
        self.claim(&name)?;
        let shape = value.shape().to_vec();
        self.params.push(Parameter {
            name,
            value,
            grad: Tensor::zeros(&shape),
            momentum: Tensor::zeros(&shape),
            group,
            frozen: false,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, features: usize) -> Result<BufferId> {
        let name = name.into();
        self.claim(&name)?;
        self.buffers.push(RunningStats {
            name,
            mean: vec![0.0; features],
            var: vec![1.0; features],
        });
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &RunningStats {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut RunningStats {
        &mut self.buffers[id.0]
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[RunningStats] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [RunningStats] {
        &mut self.buffers
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }
}

/// Parameters bound lazily onto a tape for one forward pass.
pub struct Binding<'t> {
    tape: &'t Tape,
    vars: std::cell::RefCell<Vec<Option<Var<'t>>>>,
}

impl<'t> Binding<'t> {
    pub fn new(tape: &'t Tape, store: &ParamStore) -> Self {
        Self {
            tape,
            vars: std::cell::RefCell::new(vec![None; store.params.len()]),
        }
    }

    /// Binds parameter `i` to `vars[i]` instead of fresh leaves.
    pub fn from_vars(tape: &'t Tape, vars: Vec<Var<'t>>) -> Self {
        Self {
            tape,
            vars: std::cell::RefCell::new(vars.into_iter().map(Some).collect()),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn var(&self, store: &ParamStore, id: ParamId) -> Var<'t> {
        let mut vars = self.vars.borrow_mut();
        *vars[id.0].get_or_insert_with(|| self.tape.param(store.params[id.0].value.clone()))
    }

    /// Copies the gradients of every bound parameter into the store.
    pub fn write_grads(&self, store: &mut ParamStore, grads: &Gradients) {
        for (i, v) in self.vars.borrow().iter().enumerate() {
            if let Some(v) = v {
                store.params[i].grad = grads.wrt(*v);
            }
        }
    }
}
