use super::{Ctx, StatUpdate};
use crate::error::Result;
use crate::tensor::ops::{Mode, BN_EPS};
use crate::tensor::{BufferId, Normalization, ParamId, ParamKind, ParamStore, Tensor, Var};
use crate::Scalar;

/// Per-channel batch normalization with running statistics kept as buffers.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    channels: usize,
    gamma: ParamId,
    beta: ParamId,
    running_mean: BufferId,
    running_var: BufferId,
    momentum: f64,
}

impl BatchNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, channels: usize, momentum: f64) -> Result<Self> {
        Ok(Self {
            channels,
            gamma: store.add(
                format!("{prefix}.gamma"),
                ParamKind::NormAffine,
                Tensor::ones(&[channels]),
            )?,
            beta: store.add(
                format!("{prefix}.beta"),
                ParamKind::NormAffine,
                Tensor::zeros(&[channels]),
            )?,
            running_mean: store.add_buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: store.add_buffer(format!("{prefix}.running_var"), Tensor::ones(&[channels]))?,
            momentum,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn gamma(&self) -> ParamId {
        self.gamma
    }

    pub fn beta(&self) -> ParamId {
        self.beta
    }

    pub fn running_mean(&self) -> BufferId {
        self.running_mean
    }

    pub fn running_var(&self) -> BufferId {
        self.running_var
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: Var) -> Result<Var> {
        let eps = S::lit(BN_EPS);
        let norm = match ctx.mode() {
            Mode::Train => Normalization::Batch { eps },
            Mode::Eval => Normalization::Fixed {
                mean: ctx.buffer(self.running_mean).data().to_vec(),
                var: ctx.buffer(self.running_var).data().to_vec(),
                eps,
            },
        };
        let (g, b) = (ctx.param(self.gamma), ctx.param(self.beta));
        let (y, mean, var) = ctx.tape.batch_norm(x, g, b, norm)?;
        if ctx.mode() == Mode::Train {
            let shape = ctx.tape.value(x).shape();
            let count = shape[0] * shape[2] * shape[3];
            ctx.updates.push(StatUpdate {
                mean_buffer: self.running_mean,
                var_buffer: self.running_var,
                batch_mean: mean,
                batch_var: var,
                count,
                momentum: S::lit(self.momentum),
            });
        }
        Ok(y)
    }
}
