use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{lr_at, Sgd, TrainConfig};
use crate::error::{shape_err, Error, Result};
use crate::graph::SkeletonTopology;
use crate::layers::Ctx;
use crate::model::Network;
use crate::streams::{load_split, prepare, SkeletonSequence, Split, Stream};
use crate::tensor::ops::Mode;
use crate::tensor::{Checkpoint, Tape, Tensor};
use crate::Scalar;

/// Network-ready samples `(C, T, N)` with 0-based labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    pub inputs: Vec<Tensor<S>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(inputs: Vec<Tensor<S>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(shape_err!("{} inputs but {} labels", inputs.len(), labels.len()));
        }
        if let Some(first) = inputs.first() {
            if let Some(bad) = inputs.iter().find(|x| x.shape() != first.shape()) {
                return Err(shape_err!(
                    "mixed sample shapes {:?} and {:?}",
                    first.shape(),
                    bad.shape()
                ));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::OutOfRange(format!("label {bad} with {num_classes} classes")));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    /// Pads each recording to `frames` and derives `stream`.
    pub fn from_sequences(
        seqs: &[SkeletonSequence],
        topology: &SkeletonTopology,
        stream: Stream,
        frames: usize,
        num_classes: usize,
    ) -> Result<Self> {
        let mut inputs = Vec::with_capacity(seqs.len());
        let mut labels = Vec::with_capacity(seqs.len());
        for s in seqs {
            inputs.push(prepare(&s.data.cast::<S>(), topology, stream, frames)?);
            labels.push(
                s.label
                    .ok_or_else(|| Error::Format("unlabeled sequence in a dataset".into()))?,
            );
        }
        Self::new(inputs, labels, num_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Stacked `(B, C, T, N)` batch and its labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<S>, Vec<usize>)> {
        let items: Vec<&Tensor<S>> = indices.iter().map(|&i| &self.inputs[i]).collect();
        Ok((
            Tensor::stack(&items)?,
            indices.iter().map(|&i| self.labels[i]).collect(),
        ))
    }
}

/// Reads one split of a dataset directory, shaped for `network`.
pub fn load_dataset<S: Scalar>(dir: impl AsRef<Path>, split: Split, network: &Network<S>) -> Result<Dataset<S>> {
    let (manifest, seqs) = load_split(&dir, split)?;
    let cfg = network.config();
    if manifest.topology != network.topology().name() {
        return Err(Error::Config(format!(
            "dataset topology {} but the model uses {}",
            manifest.topology,
            network.topology().name()
        )));
    }
    if manifest.num_classes != cfg.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model {}",
            manifest.num_classes, cfg.num_classes
        )));
    }
    let ds = Dataset::from_sequences(
        &seqs,
        network.topology(),
        cfg.stream,
        cfg.sequence_length,
        cfg.num_classes,
    )?;
    if let Some(x) = ds.inputs.first() {
        if x.shape() != network.input_shape() {
            return Err(Error::Config(format!(
                "{} stream of the dataset gives {:?} samples, model expects {:?}",
                cfg.stream.name(),
                x.shape(),
                network.input_shape()
            )));
        }
    }
    Ok(ds)
}

/// Top-1 and top-5 accuracy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub top1: f64,
    pub top5: f64,
    pub samples: usize,
}

/// Whether `label` ranks among the `k` largest entries; equal values rank
/// by index.
pub fn in_top_k<S: Scalar>(logits: &[S], label: usize, k: usize) -> bool {
    let y = logits[label];
    let ahead = logits
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > y || (v == y && j < label))
        .count();
    ahead < k
}

pub fn accuracy_from_logits<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Evaluation {
    let k = logits.shape()[1];
    let (mut top1, mut top5) = (0usize, 0usize);
    for (row, &l) in logits.data().chunks(k).zip(labels) {
        top1 += in_top_k(row, l, 1) as usize;
        top5 += in_top_k(row, l, 5) as usize;
    }
    let n = labels.len().max(1) as f64;
    Evaluation {
        top1: top1 as f64 / n,
        top5: top5 as f64 / n,
        samples: labels.len(),
    }
}

const EVAL_BATCH: usize = 64;

/// Eval-mode logits for every sample, in dataset order.
pub fn predict_all<S: Scalar>(network: &Network<S>, data: &Dataset<S>) -> Result<Tensor<S>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut rows = Vec::with_capacity(data.len() * network.config().num_classes);
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _) = data.batch(chunk)?;
        rows.extend_from_slice(network.forward(&x)?.data());
    }
    Tensor::new(vec![data.len(), network.config().num_classes], rows)
}

pub fn evaluate<S: Scalar>(network: &Network<S>, data: &Dataset<S>) -> Result<Evaluation> {
    let logits = predict_all(network, data)?;
    Ok(accuracy_from_logits(&logits, &data.labels))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean batch loss in train mode.
    pub loss: f64,
    /// Train-mode accuracy accumulated over the epoch.
    pub train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val: Option<Evaluation>,
}

impl EpochLog {
    pub fn line(&self) -> String {
        let mut s = format!(
            "epoch {:>3}  lr {:.5}  loss {:.6}  train {:.4}",
            self.epoch, self.lr, self.loss, self.train_accuracy
        );
        if let Some(v) = self.val {
            s += &format!("  val top1 {:.4} top5 {:.4}", v.top1, v.top5);
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters `best` holds: highest validation top-1 (the
    /// earliest on ties), or the lowest training loss without validation.
    pub best_epoch: usize,
    pub best: Checkpoint,
}

/// Whether training should continue after an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// One optimizer step on a batch; returns the mean loss and the number of
/// correct train-mode predictions.
pub fn train_step<S: Scalar>(
    network: &mut Network<S>,
    sgd: &mut Sgd<S>,
    x: Tensor<S>,
    labels: &[usize],
    lr: f64,
) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    let params = network.store().bind(&mut tape);
    let (loss, correct, updates) = {
        let mut ctx = Ctx::from_vars(&mut tape, params.clone(), network.store(), Mode::Train);
        let xv = ctx.tape.constant(x);
        let out = network.forward_with(&mut ctx, xv, None)?;
        let loss = ctx.tape.cross_entropy(out.logits, labels)?;
        let logits = ctx.tape.value(out.logits);
        let correct = accuracy_from_logits(logits, labels).top1 * labels.len() as f64;
        (loss, correct.round() as usize, ctx.take_updates())
    };
    let value = tape.value(loss).item().as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss became {value} at learning rate {lr}")));
    }
    let grads = tape.backward(loss)?;
    let store = network.store_mut();
    store.zero_grad();
    store.accumulate(&params, &grads);
    for u in updates {
        u.apply(store);
    }
    sgd.step(store, lr)?;
    Ok((value, correct))
}

/// Mini-batch SGD over the schedule. The shuffle order comes from
/// `config.seed` alone, so equal inputs give bit-identical logs.
/// `on_epoch` sees each log entry and may stop early.
pub fn train<S: Scalar>(
    network: &mut Network<S>,
    train_set: &Dataset<S>,
    val_set: Option<&Dataset<S>>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog) -> Control,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let expect = network.input_shape();
    if train_set.inputs[0].shape() != expect {
        return Err(shape_err!(
            "samples are {:?}, network expects {expect:?}",
            train_set.inputs[0].shape()
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sgd = Sgd::new(network.store(), config.momentum, config.weight_decay);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    for epoch in 0..config.schedule.epochs {
        let lr = lr_at(epoch, &config.schedule)?;
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut batches) = (0.0, 0usize, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, labels) = train_set.batch(chunk)?;
            let (loss, ok) = train_step(network, &mut sgd, x, &labels, lr).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            })?;
            loss_sum += loss;
            correct += ok;
            batches += 1;
        }
        let val = val_set.map(|v| evaluate(network, v)).transpose()?;
        let entry = EpochLog {
            epoch,
            lr,
            loss: loss_sum / batches as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val,
        };
        // higher is better
        let score = entry.val.map_or(-entry.loss, |v| v.top1);
        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            best = Some((epoch, score, network.checkpoint()));
        }
        let control = on_epoch(&entry);
        log.push(entry);
        if control == Control::Stop {
            break;
        }
    }
    let (best_epoch, _, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { log, best_epoch, best })
}
