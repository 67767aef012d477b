use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{init_uniform, Ctx};
use crate::error::{shape_err, Result};
use crate::tensor::{ParamId, ParamKind, ParamStore, Tensor, Var};
use crate::Scalar;

/// How the learnable mask `M_p` combines with the normalized adjacency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// `Â_p ∘ M_p`, masks start at all-ones.
    Multiply,
    /// `Â_p + M_p`, masks start at zero.
    Add,
}

impl MaskMode {
    pub fn initial_mask<S: Scalar>(self, joints: usize) -> Tensor<S> {
        match self {
            MaskMode::Multiply => Tensor::ones(&[joints, joints]),
            MaskMode::Add => Tensor::zeros(&[joints, joints]),
        }
    }
}

/// Partitioned graph convolution: one 1×1 convolution per partition,
/// propagated along that partition's masked adjacency and summed.
#[derive(Clone, Debug)]
pub struct SpatialGraphConv {
    c_in: usize,
    c_out: usize,
    joints: usize,
    mode: MaskMode,
    weights: [ParamId; 3],
    masks: [ParamId; 3],
    bias: Option<ParamId>,
}

impl SpatialGraphConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        joints: usize,
        mode: MaskMode,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = 3 * c_in;
        let mut weights = Vec::with_capacity(3);
        let mut masks = Vec::with_capacity(3);
        for p in 0..3 {
            let w = init_uniform(&[c_out, c_in, 1, 1], fan_in, rng);
            weights.push(store.add(format!("{prefix}.weight{p}"), ParamKind::Weight, w)?);
        }
        for p in 0..3 {
            masks.push(store.add(format!("{prefix}.mask{p}"), ParamKind::Mask, mode.initial_mask(joints))?);
        }
        let bias = if with_bias {
            let b = init_uniform(&[c_out], fan_in, rng);
            Some(store.add(format!("{prefix}.bias"), ParamKind::Bias, b)?)
        } else {
            None
        };
        Ok(Self {
            c_in,
            c_out,
            joints,
            mode,
            weights: weights.try_into().unwrap(),
            masks: masks.try_into().unwrap(),
            bias,
        })
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn weight(&self, p: usize) -> ParamId {
        self.weights[p]
    }

    pub fn mask(&self, p: usize) -> ParamId {
        self.masks[p]
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.bias
    }

    pub fn param_count(&self) -> usize {
        3 * (self.c_out * self.c_in + self.joints * self.joints) + self.bias.map_or(0, |_| self.c_out)
    }

    /// `Σ_p conv_p(X) · (Â_p ⊛ M_p)ᵀ` plus bias, before any activation.
    pub fn pre_activation<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: Var, graph: &[Var; 3]) -> Result<Var> {
        let shape = ctx.tape.value(x).shape();
        if shape.len() != 4 || shape[1] != self.c_in || shape[3] != self.joints {
            return Err(shape_err!(
                "spatial layer expects (B, {}, T, {}), got {:?}",
                self.c_in,
                self.joints,
                shape
            ));
        }
        let mut acc: Option<Var> = None;
        for p in 0..3 {
            let w = ctx.param(self.weights[p]);
            let m = ctx.param(self.masks[p]);
            let y = ctx.tape.conv2d(x, w, None, 1, 0)?;
            let weighted = match self.mode {
                MaskMode::Multiply => ctx.tape.mul(graph[p], m)?,
                MaskMode::Add => ctx.tape.add(graph[p], m)?,
            };
            // rows of a partition matrix index the receiving joint
            let propagate = ctx.tape.transpose(weighted)?;
            let z = ctx.tape.matmul_last(y, propagate)?;
            acc = Some(match acc {
                Some(a) => ctx.tape.add(a, z)?,
                None => z,
            });
        }
        let mut out = acc.unwrap();
        if let Some(b) = self.bias {
            let bv = ctx.param(b);
            out = ctx.tape.channel_bias(out, bv)?;
        }
        Ok(out)
    }

    /// Pre-activation followed by ReLU.
    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: Var, graph: &[Var; 3]) -> Result<Var> {
        let z = self.pre_activation(ctx, x, graph)?;
        Ok(ctx.tape.relu(z))
    }
}
