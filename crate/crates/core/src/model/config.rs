use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{BlockSpec, MaskMode, BN_MOMENTUM};
use crate::streams::Stream;

/// One row of the layer plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub out_channels: usize,
    pub stride: usize,
    pub temporal: bool,
    pub residual: bool,
}

impl LayerPlan {
    pub const fn new(out_channels: usize, stride: usize, temporal: bool, residual: bool) -> Self {
        Self {
            out_channels,
            stride,
            temporal,
            residual,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TamConfig {
    /// Number of layers that run before the attention module.
    pub after_layer: usize,
    pub t_prime: usize,
    #[serde(default = "default_true")]
    pub preserve_order: bool,
}

fn default_true() -> bool {
    true
}

fn default_kernel() -> usize {
    9
}

fn default_scale() -> f64 {
    1.0
}

fn default_momentum() -> f64 {
    BN_MOMENTUM
}

/// Full architecture recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    /// Built-in topology name or path to a topology file.
    pub topology: String,
    pub stream: Stream,
    pub input_channels: usize,
    pub num_joints: usize,
    pub sequence_length: usize,
    pub num_classes: usize,
    pub layers: Vec<LayerPlan>,
    #[serde(default)]
    pub tam: Option<TamConfig>,
    pub mask_mode: MaskMode,
    #[serde(default = "default_scale")]
    pub width_scale: f64,
    #[serde(default = "default_kernel")]
    pub temporal_kernel: usize,
    #[serde(default = "default_true")]
    pub spatial_bias: bool,
    #[serde(default = "default_true")]
    pub classifier_bias: bool,
    #[serde(default = "default_momentum")]
    pub bn_momentum: f64,
    /// Seed for parameter initialization.
    #[serde(default)]
    pub seed: u64,
}

/// The six-layer attention network's channel and stride plan.
pub const TAGCN_PLAN: [LayerPlan; 6] = [
    LayerPlan::new(64, 1, false, false),
    LayerPlan::new(64, 1, false, false),
    LayerPlan::new(128, 2, true, true),
    LayerPlan::new(128, 1, true, true),
    LayerPlan::new(256, 2, true, true),
    LayerPlan::new(256, 1, true, true),
];

/// The nine-layer baseline plan.
pub const STGCN_PLAN: [LayerPlan; 9] = [
    LayerPlan::new(64, 1, true, true),
    LayerPlan::new(64, 1, true, true),
    LayerPlan::new(64, 1, true, true),
    LayerPlan::new(64, 1, true, true),
    LayerPlan::new(128, 2, true, true),
    LayerPlan::new(128, 1, true, true),
    LayerPlan::new(128, 1, true, true),
    LayerPlan::new(256, 2, true, true),
    LayerPlan::new(256, 1, true, true),
];

impl ModelConfig {
    /// Canonical attention network: fused joint-bone input, attention after
    /// the second layer, additive masks.
    pub fn tagcn(
        topology: &str,
        num_joints: usize,
        coord_channels: usize,
        frames: usize,
        t_prime: usize,
        num_classes: usize,
    ) -> Self {
        Self {
            name: "ta-gcn".into(),
            topology: topology.into(),
            stream: Stream::JointBone,
            input_channels: coord_channels * Stream::JointBone.channel_factor(),
            num_joints,
            sequence_length: frames,
            num_classes,
            layers: TAGCN_PLAN.to_vec(),
            tam: Some(TamConfig {
                after_layer: 2,
                t_prime,
                preserve_order: true,
            }),
            mask_mode: MaskMode::Add,
            width_scale: 1.0,
            temporal_kernel: 9,
            spatial_bias: true,
            classifier_bias: true,
            bn_momentum: BN_MOMENTUM,
            seed: 0,
        }
    }

    /// Nine-layer baseline on joint coordinates with multiplicative masks.
    pub fn stgcn_baseline(
        topology: &str,
        num_joints: usize,
        coord_channels: usize,
        frames: usize,
        num_classes: usize,
    ) -> Self {
        Self {
            name: "st-gcn".into(),
            topology: topology.into(),
            stream: Stream::Joint,
            input_channels: coord_channels,
            num_joints,
            sequence_length: frames,
            num_classes,
            layers: STGCN_PLAN.to_vec(),
            tam: None,
            mask_mode: MaskMode::Multiply,
            width_scale: 1.0,
            temporal_kernel: 9,
            spatial_bias: true,
            classifier_bias: true,
            bn_momentum: BN_MOMENTUM,
            seed: 0,
        }
    }

    /// NTU-style canonical configuration: 6×300×25 input, 60 classes.
    pub fn tagcn_ntu(t_prime: usize) -> Self {
        Self::tagcn("ntu-rgbd-25", 25, 3, 300, t_prime, 60)
    }

    pub fn stgcn_ntu() -> Self {
        Self::stgcn_baseline("ntu-rgbd-25", 25, 3, 300, 60)
    }

    /// Desk-scale attention network on the five-joint toy skeleton.
    pub fn tagcn_toy(frames: usize, t_prime: usize, num_classes: usize) -> Self {
        Self {
            width_scale: 1.0 / 16.0,
            temporal_kernel: 3,
            ..Self::tagcn("toy-5", 5, 3, frames, t_prime, num_classes)
        }
    }

    pub fn with_width_scale(mut self, scale: f64) -> Self {
        self.width_scale = scale;
        self
    }

    pub fn scaled_channels(&self, c: usize) -> usize {
        ((c as f64 * self.width_scale).floor() as usize).max(1)
    }

    /// Block specifications with channel widths already scaled.
    pub fn block_specs(&self) -> Vec<BlockSpec> {
        let mut c_in = self.input_channels;
        self.layers
            .iter()
            .map(|l| {
                let c_out = self.scaled_channels(l.out_channels);
                let spec = BlockSpec {
                    c_in,
                    c_out,
                    joints: self.num_joints,
                    stride: l.stride,
                    use_temporal: l.temporal,
                    use_residual: l.residual,
                    k_t: self.temporal_kernel,
                    mask_mode: self.mask_mode,
                    spatial_bias: self.spatial_bias,
                    bn_momentum: self.bn_momentum,
                };
                c_in = c_out;
                spec
            })
            .collect()
    }

    /// Temporal extent entering each layer, then the final extent.
    pub fn temporal_extents(&self) -> Result<Vec<usize>> {
        let mut t = self.sequence_length;
        let mut out = Vec::with_capacity(self.layers.len() + 1);
        for (i, spec) in self.block_specs().iter().enumerate() {
            if let Some(tam) = self.tam.filter(|tam| tam.after_layer == i) {
                t = tam.t_prime;
            }
            out.push(t);
            t = spec
                .output_len(t)
                .ok_or_else(|| Error::Config(format!("layer {} cannot convolve {t} frames", i + 1)))?;
        }
        out.push(t);
        Ok(out)
    }

    /// Frames seen by the attention module, if any.
    pub fn tam_frames(&self) -> Option<usize> {
        let tam = self.tam?;
        let mut t = self.sequence_length;
        for spec in self.block_specs().iter().take(tam.after_layer) {
            t = spec.output_len(t)?;
        }
        Some(t)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.layers.is_empty() {
            return fail("layer plan is empty".into());
        }
        if self.input_channels == 0 || self.num_joints == 0 || self.sequence_length == 0 || self.num_classes == 0 {
            return fail("channels, joints, frames and classes must be positive".into());
        }
        if !(self.width_scale.is_finite() && self.width_scale > 0.0) {
            return fail(format!("width_scale must be a positive real, got {}", self.width_scale));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return fail(format!("bn_momentum must lie in [0, 1], got {}", self.bn_momentum));
        }
        for (i, spec) in self.block_specs().iter().enumerate() {
            spec.validate()
                .map_err(|e| Error::Config(format!("layer {}: {}", i + 1, strip(&e))))?;
        }
        if let Some(tam) = self.tam {
            if tam.after_layer >= self.layers.len() {
                return fail(format!(
                    "attention after layer {} but the plan has only {} layers",
                    tam.after_layer,
                    self.layers.len()
                ));
            }
            let t = self
                .tam_frames()
                .ok_or_else(|| Error::Config("temporal extent collapses before attention".into()))?;
            if tam.t_prime == 0 || tam.t_prime > t {
                return fail(format!("T' = {} must lie in 1..={t}", tam.t_prime));
            }
        }
        self.temporal_extents()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_toml(text: &str, source_name: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| toml_error(&e, text, source_name))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_toml(&text, &path.as_ref().display().to_string())
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

pub(crate) fn toml_error(e: &toml::de::Error, text: &str, source_name: &str) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    Error::Parse {
        source_name: source_name.to_string(),
        line,
        message: e.message().to_string(),
    }
}
