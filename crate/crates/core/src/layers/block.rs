use rand::Rng;

use super::{init_uniform, BatchNorm, Ctx, MaskMode, SpatialGraphConv, TemporalConv};
use crate::error::{Error, Result};
use crate::tensor::kernels::ConvGeom;
use crate::tensor::{ParamId, ParamKind, ParamStore, Var};
use crate::Scalar;

/// Shape and options of one spatio-temporal block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub joints: usize,
    pub stride: usize,
    pub use_temporal: bool,
    pub use_residual: bool,
    pub k_t: usize,
    pub mask_mode: MaskMode,
    pub spatial_bias: bool,
    pub bn_momentum: f64,
}

impl BlockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.joints == 0 {
            return Err(Error::Config("block extents must be positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("block stride must be positive".into()));
        }
        if !self.use_temporal && self.stride != 1 {
            return Err(Error::Config(
                "a spatial-only block cannot change the temporal extent".into(),
            ));
        }
        if !self.use_temporal && self.use_residual {
            return Err(Error::Config("a residual path needs the temporal branch".into()));
        }
        if self.k_t.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "temporal kernel size must be odd, got {}",
                self.k_t
            )));
        }
        Ok(())
    }

    /// Temporal extent after the block, or `None` if the kernel does not fit.
    pub fn output_len(&self, t: usize) -> Option<usize> {
        if self.use_temporal {
            ConvGeom::output_len(t, self.k_t, self.stride, (self.k_t - 1) / 2)
        } else {
            Some(t)
        }
    }
}

/// Shortcut taken around the temporal branch.
#[derive(Clone, Debug)]
pub enum Residual {
    None,
    Identity,
    /// Bias-free 1×1 convolution carrying the block's stride.
    Projection {
        kernel: ParamId,
        stride: usize,
    },
}

/// spatial → BN → ReLU → [temporal → BN → + residual → ReLU].
#[derive(Clone, Debug)]
pub struct StBlock {
    spec: BlockSpec,
    spatial: SpatialGraphConv,
    bn_spatial: BatchNorm,
    temporal: Option<(TemporalConv, BatchNorm)>,
    residual: Residual,
}

impl StBlock {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        prefix: &str,
        spec: BlockSpec,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let spatial = SpatialGraphConv::new(
            store,
            &format!("{prefix}.spatial"),
            spec.c_in,
            spec.c_out,
            spec.joints,
            spec.mask_mode,
            spec.spatial_bias,
            rng,
        )?;
        let bn_spatial = BatchNorm::new(store, &format!("{prefix}.bn_spatial"), spec.c_out, spec.bn_momentum)?;
        let temporal = if spec.use_temporal {
            let conv = TemporalConv::new(
                store,
                &format!("{prefix}.temporal"),
                spec.c_out,
                spec.k_t,
                spec.stride,
                rng,
            )?;
            let bn = BatchNorm::new(store, &format!("{prefix}.bn_temporal"), spec.c_out, spec.bn_momentum)?;
            Some((conv, bn))
        } else {
            None
        };
        let residual = if !spec.use_residual {
            Residual::None
        } else if spec.c_in == spec.c_out && spec.stride == 1 {
            Residual::Identity
        } else {
            let w = init_uniform(&[spec.c_out, spec.c_in, 1, 1], spec.c_in, rng);
            let kernel = store.add(format!("{prefix}.residual"), ParamKind::Weight, w)?;
            Residual::Projection {
                kernel,
                stride: spec.stride,
            }
        };
        Ok(Self {
            spec,
            spatial,
            bn_spatial,
            temporal,
            residual,
        })
    }

    pub fn spec(&self) -> &BlockSpec {
        &self.spec
    }

    pub fn spatial(&self) -> &SpatialGraphConv {
        &self.spatial
    }

    pub fn bn_spatial(&self) -> &BatchNorm {
        &self.bn_spatial
    }

    pub fn temporal(&self) -> Option<&(TemporalConv, BatchNorm)> {
        self.temporal.as_ref()
    }

    pub fn residual(&self) -> &Residual {
        &self.residual
    }

    pub fn param_count(&self) -> usize {
        let mut n = self.spatial.param_count() + self.bn_spatial.param_count();
        if let Some((conv, bn)) = &self.temporal {
            n += conv.param_count() + bn.param_count();
        }
        if let Residual::Projection { .. } = self.residual {
            n += self.spec.c_in * self.spec.c_out;
        }
        n
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: Var, graph: &[Var; 3]) -> Result<Var> {
        let z = self.spatial.pre_activation(ctx, x, graph)?;
        let z = self.bn_spatial.forward(ctx, z)?;
        let h = ctx.tape.relu(z);
        let Some((conv, bn)) = &self.temporal else {
            return Ok(h);
        };
        let y = conv.forward(ctx, h)?;
        let mut y = bn.forward(ctx, y)?;
        match &self.residual {
            Residual::None => {}
            Residual::Identity => y = ctx.tape.add(y, x)?,
            Residual::Projection { kernel, stride } => {
                let k = ctx.param(*kernel);
                let r = ctx.tape.conv2d(x, k, None, *stride, 0)?;
                y = ctx.tape.add(y, r)?;
            }
        }
        Ok(ctx.tape.relu(y))
    }
}
