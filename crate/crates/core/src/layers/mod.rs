//! Spatial graph convolution, temporal convolution, batch norm, and the
//! residual spatio-temporal block.
//!
//! Layers only hold parameter handles into a [`ParamStore`]; a [`Ctx`]
//! supplies the tape variables those handles resolve to for one forward pass.

mod block;
mod norm;
mod spatial;
mod temporal;

pub use block::{BlockSpec, Residual, StBlock};
pub use norm::BatchNorm;
pub use spatial::{MaskMode, SpatialGraphConv};
pub use temporal::TemporalConv;

use crate::graph::{Partition, PartitionedAdjacency};
use crate::tensor::ops::Mode;
use crate::tensor::{BufferId, ParamId, ParamStore, Tape, Tensor, Var};
use crate::Scalar;

/// Default running-statistics momentum for batch norm.
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-pass binding of parameters and buffers to a tape.
pub struct Ctx<'t, S: Scalar> {
    pub tape: &'t mut Tape<S>,
    params: Vec<Var>,
    buffers: Vec<Tensor<S>>,
    mode: Mode,
    updates: Vec<StatUpdate<S>>,
}

impl<'t, S: Scalar> Ctx<'t, S> {
    /// Places every parameter of `store` on `tape` as a gradient leaf.
    pub fn bind(tape: &'t mut Tape<S>, store: &ParamStore<S>, mode: Mode) -> Self {
        let params = store.bind(tape);
        Self::from_vars(tape, params, store, mode)
    }

    /// Uses caller-provided variables for the parameters, in store order.
    pub fn from_vars(tape: &'t mut Tape<S>, params: Vec<Var>, store: &ParamStore<S>, mode: Mode) -> Self {
        assert_eq!(params.len(), store.len(), "one variable per parameter");
        Self {
            tape,
            params,
            buffers: store.buffers().map(|(_, t)| t.clone()).collect(),
            mode,
            updates: Vec::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.index()]
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<S> {
        &self.buffers[id.index()]
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Running-statistics updates gathered during the pass.
    pub fn take_updates(&mut self) -> Vec<StatUpdate<S>> {
        std::mem::take(&mut self.updates)
    }
}

/// Batch statistics observed by one batch-norm call in train mode.
#[derive(Clone, Debug)]
pub struct StatUpdate<S> {
    pub mean_buffer: BufferId,
    pub var_buffer: BufferId,
    pub batch_mean: Vec<S>,
    pub batch_var: Vec<S>,
    /// Elements per channel; the stored variance is the unbiased estimate.
    pub count: usize,
    pub momentum: S,
}

impl<S: Scalar> StatUpdate<S> {
    pub fn apply(&self, store: &mut ParamStore<S>) {
        let m = self.momentum;
        let unbias = if self.count > 1 {
            S::lit(self.count as f64 / (self.count - 1) as f64)
        } else {
            S::one()
        };
        let keep = S::one() - m;
        for (r, &b) in store
            .buffer_mut(self.mean_buffer)
            .data_mut()
            .iter_mut()
            .zip(&self.batch_mean)
        {
            *r = keep * *r + m * b;
        }
        for (r, &b) in store
            .buffer_mut(self.var_buffer)
            .data_mut()
            .iter_mut()
            .zip(&self.batch_var)
        {
            *r = keep * *r + m * b * unbias;
        }
    }
}

/// Puts the three normalized partition matrices on the tape as constants.
pub fn graph_constants<S: Scalar>(tape: &mut Tape<S>, graph: &PartitionedAdjacency<S>) -> [Var; 3] {
    Partition::ALL.map(|p| tape.constant(graph.normalized(p).clone()))
}

/// Fan-in scaled uniform initialization.
pub(crate) fn init_uniform<S: Scalar, R: rand::Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<S> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape, bound, rng)
}
