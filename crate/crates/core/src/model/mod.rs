//! Network assembly: the six-layer attention network, the nine-layer
//! baseline, the classifier head, and multi-stream score fusion.

mod config;
mod network;

pub(crate) use config::toml_error;
pub use config::{LayerPlan, ModelConfig, TamConfig, STGCN_PLAN, TAGCN_PLAN};
pub use network::{argmax, ensemble, predict_logits, softmax, AttentionTrace, Forward, Network, Prediction};

use crate::error::{Error, Result};
use crate::streams::Stream;
use crate::Scalar;

/// Attention network; the config must carry an attention module.
pub fn build_tagcn<S: Scalar>(config: &ModelConfig) -> Result<Network<S>> {
    if config.tam.is_none() {
        return Err(Error::Config("attention network config has no attention module".into()));
    }
    Network::build(config)
}

/// Baseline network; the config must not carry an attention module.
pub fn build_stgcn_baseline<S: Scalar>(config: &ModelConfig) -> Result<Network<S>> {
    if config.tam.is_some() {
        return Err(Error::Config(
            "baseline config must not have an attention module".into(),
        ));
    }
    Network::build(config)
}

/// One independently parameterized network per input stream; predictions
/// sum the per-stream softmax scores.
#[derive(Clone, Debug)]
pub struct MultiStream<S: Scalar> {
    members: Vec<(Stream, Network<S>)>,
}

impl<S: Scalar> MultiStream<S> {
    /// `base` is copied per stream with the stream swapped in and the
    /// input channels adjusted; seeds are offset so members differ.
    pub fn build(base: &ModelConfig, coord_channels: usize, streams: &[Stream]) -> Result<Self> {
        if streams.is_empty() {
            return Err(Error::Config("multi-stream model needs at least one stream".into()));
        }
        let members = streams
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let cfg = ModelConfig {
                    stream: s,
                    input_channels: coord_channels * s.channel_factor(),
                    seed: base.seed.wrapping_add(i as u64),
                    ..base.clone()
                };
                Ok((s, Network::build(&cfg)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self { members })
    }

    pub fn members(&self) -> &[(Stream, Network<S>)] {
        &self.members
    }

    pub fn param_count(&self) -> usize {
        self.members.iter().map(|(_, n)| n.param_count()).sum()
    }

    /// Fused class per sample from padded raw joints `(B, C, T, N)`.
    pub fn predict(&self, joints: &crate::tensor::Tensor<S>) -> Result<Vec<usize>> {
        let mut sets = Vec::new();
        for (stream, net) in &self.members {
            let b = joints.shape()[0];
            let inputs: Vec<_> = (0..b)
                .map(|i| stream.derive(&joints.index_first(i), net.topology()))
                .collect::<Result<_>>()?;
            let refs: Vec<_> = inputs.iter().collect();
            let x = crate::tensor::Tensor::stack(&refs)?;
            sets.push(softmax(&net.forward(&x)?));
        }
        Ok(ensemble(&sets)?.1)
    }
}
