use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{shape_err, Error, Result};
use crate::graph::{PartitionedAdjacency, SkeletonTopology};
use crate::layers::{graph_constants, init_uniform, Ctx, StBlock};
use crate::tam::{TamOutput, TemporalAttention};
use crate::tensor::ops::Mode;
use crate::tensor::{softmax_row, Checkpoint, ParamId, ParamKind, ParamStore, Tape, Tensor, Var};
use crate::Scalar;

/// Blocks, optional attention module and classifier, plus their parameters.
#[derive(Clone, Debug)]
pub struct Network<S: Scalar> {
    config: ModelConfig,
    topology: SkeletonTopology,
    graph: PartitionedAdjacency<S>,
    store: ParamStore<S>,
    blocks: Vec<StBlock>,
    tam: Option<TemporalAttention>,
    classifier_weight: ParamId,
    classifier_bias: Option<ParamId>,
}

/// Tape handles from one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Var,
    pub tam: Option<TamOutput>,
}

/// Arg-max class and softmax scores of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<S> {
    pub class: usize,
    pub scores: Vec<S>,
}

impl<S: Scalar> Network<S> {
    /// Builds any plan; the topology is resolved from the config.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        let topology = SkeletonTopology::resolve(&config.topology)?;
        Self::build_with_topology(config, topology)
    }

    pub fn build_with_topology(config: &ModelConfig, topology: SkeletonTopology) -> Result<Self> {
        config.validate()?;
        if topology.num_joints() != config.num_joints {
            return Err(Error::Config(format!(
                "topology {} has {} joints, config expects {}",
                topology.name(),
                topology.num_joints(),
                config.num_joints
            )));
        }
        let graph = PartitionedAdjacency::from_topology(&topology)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let mut blocks = Vec::new();
        let mut tam = None;
        for (i, spec) in config.block_specs().into_iter().enumerate() {
            if let Some(tc) = config.tam.filter(|t| t.after_layer == i) {
                let frames = config.tam_frames().expect("validated");
                tam = Some(TemporalAttention::new(
                    &mut store,
                    "tam",
                    frames,
                    tc.t_prime,
                    tc.preserve_order,
                    &mut rng,
                )?);
            }
            blocks.push(StBlock::new(&mut store, &format!("layer{}", i + 1), spec, &mut rng)?);
        }
        let c_last = blocks.last().expect("non-empty plan").spec().c_out;
        let w = init_uniform(&[config.num_classes, c_last], c_last, &mut rng);
        let classifier_weight = store.add("classifier.weight", ParamKind::Weight, w)?;
        let classifier_bias = if config.classifier_bias {
            let b = init_uniform(&[config.num_classes], c_last, &mut rng);
            Some(store.add("classifier.bias", ParamKind::Bias, b)?)
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            topology,
            graph,
            store,
            blocks,
            tam,
            classifier_weight,
            classifier_bias,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.topology
    }

    pub fn graph(&self) -> &PartitionedAdjacency<S> {
        &self.graph
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    pub fn blocks(&self) -> &[StBlock] {
        &self.blocks
    }

    pub fn tam(&self) -> Option<&TemporalAttention> {
        self.tam.as_ref()
    }

    pub fn classifier_weight(&self) -> ParamId {
        self.classifier_weight
    }

    pub fn classifier_bias(&self) -> Option<ParamId> {
        self.classifier_bias
    }

    /// Number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.store.numel()
    }

    /// Expected `(C, T, N)` of one input sample.
    pub fn input_shape(&self) -> [usize; 3] {
        [
            self.config.input_channels,
            self.config.sequence_length,
            self.config.num_joints,
        ]
    }

    /// Forward pass of a `(B, C, T, N)` batch on the context's tape.
    ///
    /// `selection` overrides the attention module's frame choice.
    pub fn forward_with(&self, ctx: &mut Ctx<'_, S>, x: Var, selection: Option<Vec<Vec<usize>>>) -> Result<Forward> {
        let shape = ctx.tape.value(x).shape();
        let [c, t, n] = self.input_shape();
        if shape.len() != 4 || shape[1..] != [c, t, n] {
            return Err(shape_err!("network expects (B, {c}, {t}, {n}) input, got {shape:?}"));
        }
        let graph = graph_constants(ctx.tape, &self.graph);
        let after = self.config.tam.map(|t| t.after_layer);
        let mut selection = selection;
        let mut h = x;
        let mut trace = None;
        for (i, block) in self.blocks.iter().enumerate() {
            if after == Some(i) {
                let tam = self.tam.as_ref().expect("attention module built");
                let out = tam.forward(ctx, h, selection.take())?;
                h = out.selected;
                trace = Some(out);
            }
            h = block.forward(ctx, h, &graph)?;
        }
        let pooled = ctx.tape.global_avg_pool(h)?;
        let w = ctx.param(self.classifier_weight);
        let b = self.classifier_bias.map(|b| ctx.param(b));
        let logits = ctx.tape.linear(pooled, w, b)?;
        Ok(Forward { logits, tam: trace })
    }

    /// Logits of a batch, `(B, C, T, N)` or a single `(C, T, N)` sample,
    /// with batch norm in evaluation mode.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.run(x, None)?.0)
    }

    /// Logits and, when the network has one, each sample's attention
    /// scores and selected frames.
    pub fn forward_traced(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Option<AttentionTrace<S>>)> {
        self.run(x, None)
    }

    /// Logits with the attention selection replaced by `selection`.
    pub fn forward_selected(&self, x: &Tensor<S>, selection: Vec<Vec<usize>>) -> Result<Tensor<S>> {
        Ok(self.run(x, Some(selection))?.0)
    }

    fn run(&self, x: &Tensor<S>, selection: Option<Vec<Vec<usize>>>) -> Result<(Tensor<S>, Option<AttentionTrace<S>>)> {
        let batch = if x.rank() == 3 { x.clone().batched()? } else { x.clone() };
        let mut tape = Tape::new();
        let params = self.store.iter().map(|p| tape.constant(p.value.clone())).collect();
        let mut ctx = Ctx::from_vars(&mut tape, params, &self.store, Mode::Eval);
        let xv = ctx.tape.constant(batch);
        let out = self.forward_with(&mut ctx, xv, selection)?;
        let logits = ctx.tape.value(out.logits).clone();
        if !logits.all_finite() {
            return Err(Error::NonFinite("network produced non-finite logits".into()));
        }
        let trace = out.tam.map(|t| {
            let scores = ctx.tape.value(t.scores);
            let frames = scores.shape()[1];
            AttentionTrace {
                scores: scores.data().chunks(frames).map(<[S]>::to_vec).collect(),
                indices: t.indices,
            }
        });
        Ok((logits, trace))
    }

    /// Class and softmax scores for each sample.
    pub fn predict(&self, x: &Tensor<S>) -> Result<Vec<Prediction<S>>> {
        let logits = self.forward(x)?;
        Ok(predict_logits(&logits))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(&self.store)
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.restore(&mut self.store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.restore(&Checkpoint::load(path)?)
    }
}

/// Per-sample attention scores and selected frame indices.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace<S> {
    pub scores: Vec<Vec<S>>,
    pub indices: Vec<Vec<usize>>,
}

/// Row-wise softmax of `(B, K)` logits.
pub fn softmax<S: Scalar>(logits: &Tensor<S>) -> Vec<Vec<S>> {
    let k = *logits.shape().last().unwrap_or(&1);
    logits.data().chunks(k).map(|row| softmax_row(row).0).collect()
}

/// First index of the maximum.
pub fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn predict_logits<S: Scalar>(logits: &Tensor<S>) -> Vec<Prediction<S>> {
    softmax(logits)
        .into_iter()
        .map(|scores| Prediction {
            class: argmax(&scores),
            scores,
        })
        .collect()
}

/// Sums per-stream score vectors sample by sample and takes the arg-max,
/// ties to the smaller class index. Returns fused scores and classes.
pub fn ensemble<S: Scalar>(score_sets: &[Vec<Vec<S>>]) -> Result<(Vec<Vec<S>>, Vec<usize>)> {
    let first = score_sets
        .first()
        .ok_or_else(|| Error::Config("ensemble needs at least one score set".into()))?;
    let (samples, classes) = (first.len(), first.first().map_or(0, Vec::len));
    for set in score_sets {
        if set.len() != samples || set.iter().any(|s| s.len() != classes) {
            return Err(shape_err!(
                "score sets disagree: expected {samples} samples of {classes} classes"
            ));
        }
    }
    let fused: Vec<Vec<S>> = (0..samples)
        .map(|i| {
            (0..classes)
                .map(|k| score_sets.iter().map(|set| set[i][k]).fold(S::zero(), |a, b| a + b))
                .collect()
        })
        .collect();
    let classes = fused.iter().map(|s| argmax(s)).collect();
    Ok((fused, classes))
}
