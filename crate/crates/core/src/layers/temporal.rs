use rand::Rng;

use super::{init_uniform, Ctx};
use crate::error::{Error, Result};
use crate::tensor::kernels::ConvGeom;
use crate::tensor::{ParamId, ParamKind, ParamStore, Var};
use crate::Scalar;

/// Per-joint 1-D convolution along time, `(C, C, K_t, 1)` kernel plus bias.
#[derive(Clone, Debug)]
pub struct TemporalConv {
    channels: usize,
    k_t: usize,
    stride: usize,
    kernel: ParamId,
    bias: ParamId,
}

impl TemporalConv {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        prefix: &str,
        channels: usize,
        k_t: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if k_t.is_multiple_of(2) {
            return Err(Error::Config(format!("temporal kernel size must be odd, got {k_t}")));
        }
        if stride == 0 {
            return Err(Error::Config("temporal stride must be positive".into()));
        }
        let fan_in = channels * k_t;
        let kernel = init_uniform(&[channels, channels, k_t, 1], fan_in, rng);
        let bias = init_uniform(&[channels], fan_in, rng);
        Ok(Self {
            channels,
            k_t,
            stride,
            kernel: store.add(format!("{prefix}.kernel"), ParamKind::Weight, kernel)?,
            bias: store.add(format!("{prefix}.bias"), ParamKind::Bias, bias)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn k_t(&self) -> usize {
        self.k_t
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn pad(&self) -> usize {
        (self.k_t - 1) / 2
    }

    pub fn kernel(&self) -> ParamId {
        self.kernel
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn output_len(&self, t: usize) -> Option<usize> {
        ConvGeom::output_len(t, self.k_t, self.stride, self.pad())
    }

    pub fn param_count(&self) -> usize {
        self.channels * self.channels * self.k_t + self.channels
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: Var) -> Result<Var> {
        let (k, b) = (ctx.param(self.kernel), ctx.param(self.bias));
        ctx.tape.conv2d(x, k, Some(b), self.stride, self.pad())
    }
}
