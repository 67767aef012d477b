//! Finite-difference gradient checks of every layer type and the toy model,
//! in double precision.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{PartitionedAdjacency, SkeletonTopology};
use crate::layers::{graph_constants, BatchNorm, BlockSpec, Ctx, MaskMode, SpatialGraphConv, StBlock, TemporalConv};
use crate::model::{build_tagcn, ModelConfig, Network};
use crate::tam::TemporalAttention;
use crate::tensor::ops::Mode;
use crate::tensor::{grad_check_many, GradCheckReport, ParamKind, ParamStore, Tape, Tensor, Var};

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckTarget {
    SpatialMultiply,
    SpatialAdd,
    Temporal,
    BatchNorm,
    Block,
    Attention,
    Model,
}

impl CheckTarget {
    pub const ALL: [CheckTarget; 7] = [
        CheckTarget::SpatialMultiply,
        CheckTarget::SpatialAdd,
        CheckTarget::Temporal,
        CheckTarget::BatchNorm,
        CheckTarget::Block,
        CheckTarget::Attention,
        CheckTarget::Model,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckTarget::SpatialMultiply => "spatial-multiply",
            CheckTarget::SpatialAdd => "spatial-add",
            CheckTarget::Temporal => "temporal",
            CheckTarget::BatchNorm => "batch-norm",
            CheckTarget::Block => "block",
            CheckTarget::Attention => "attention",
            CheckTarget::Model => "model",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown check target {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TargetReport {
    pub target: CheckTarget,
    pub seed: u64,
    pub mode: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_unstable: usize,
}

impl TargetReport {
    fn new(target: CheckTarget, seed: u64, mode: Mode, r: &GradCheckReport) -> Self {
        Self {
            target,
            seed,
            mode: if mode == Mode::Train { "train" } else { "eval" },
            max_rel_error: r.max_rel_error,
            checked: r.checked,
            skipped_unstable: r.skipped_unstable,
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < GRAD_TOLERANCE
    }
}

/// Checks `Σ proj ⊙ forward(x)` against the input and every parameter of
/// `store`, at up to `per_tensor` random coordinates per tensor. `skip`
/// sees parameter names, and `"input"` for `x`.
pub fn check_store<F>(
    store: &ParamStore<f64>,
    x: &Tensor<f64>,
    mode: Mode,
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
    skip: impl Fn(&str) -> bool,
    forward: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Ctx<'_, f64>, Var) -> Result<Var>,
{
    let mut points = vec![x.clone()];
    points.extend(store.iter().map(|p| p.value.clone()));
    let mut coords = Vec::with_capacity(points.len());
    for (k, p) in points.iter().enumerate() {
        let name = if k == 0 {
            "input"
        } else {
            store.iter().nth(k - 1).expect("in range").name.as_str()
        };
        if skip(name) {
            coords.push(Vec::new());
            continue;
        }
        let mut c = sample(rng, p.numel(), per_tensor.min(p.numel())).into_vec();
        c.sort_unstable();
        coords.push(c);
    }
    let out_shape = {
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let mut ctx = Ctx::from_vars(&mut tape, params, store, mode);
        let xv = ctx.tape.constant(x.clone());
        let y = forward(&mut ctx, xv)?;
        ctx.tape.value(y).shape().to_vec()
    };
    let proj = Tensor::uniform(&out_shape, 1.0, rng);
    grad_check_many(&points, Some(&coords), GRAD_STEP, |tape, vars| {
        let mut ctx = Ctx::from_vars(tape, vars[1..].to_vec(), store, mode);
        let y = forward(&mut ctx, vars[0])?;
        let w = ctx.tape.constant(proj.clone());
        let prod = ctx.tape.mul(y, w)?;
        Ok(ctx.tape.sum(prod))
    })
}

/// A pre-norm bias has an identically zero gradient under batch statistics.
fn pre_norm_bias(name: &str) -> bool {
    name.ends_with("spatial.bias") || name.ends_with("temporal.bias")
}

/// Moves every parameter off its initial value so masks and norm affines
/// are not sitting at 0 or 1.
fn perturb(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut() {
        if matches!(p.kind, ParamKind::Mask | ParamKind::NormAffine | ParamKind::Bias) {
            for v in p.value.data_mut() {
                *v += rng.gen_range(-0.5..0.5);
            }
        }
    }
}

fn random_buffers(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for (name, t) in store.buffers_mut() {
        let var = name.ends_with("running_var");
        for v in t.data_mut() {
            *v = if var {
                rng.gen_range(0.5..2.0)
            } else {
                rng.gen_range(-0.5..0.5)
            };
        }
    }
}

/// Sets running statistics to the batch statistics of one train pass.
pub fn calibrate(network: &mut Network<f64>, x: &Tensor<f64>) -> Result<()> {
    let mut tape = Tape::new();
    let updates = {
        let mut ctx = Ctx::bind(&mut tape, network.store(), Mode::Train);
        let xv = ctx.tape.constant(x.clone());
        network.forward_with(&mut ctx, xv, None)?;
        ctx.take_updates()
    };
    for mut u in updates {
        u.momentum = 1.0;
        u.apply(network.store_mut());
    }
    Ok(())
}

fn toy_graph(rng: &mut ChaCha8Rng) -> Result<PartitionedAdjacency<f64>> {
    let mut perm: Vec<usize> = (0..5).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), rng);
    PartitionedAdjacency::from_topology(&SkeletonTopology::toy_5().permuted(&perm)?)
}

/// Runs one target at one seed; layers containing batch norm are checked
/// in both modes.
pub fn check_target(target: CheckTarget, seed: u64, per_tensor: usize) -> Result<Vec<TargetReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut out = Vec::new();
    let mut push = |mode, r: GradCheckReport| out.push(TargetReport::new(target, seed, mode, &r));
    match target {
        CheckTarget::SpatialMultiply | CheckTarget::SpatialAdd => {
            let mode = if target == CheckTarget::SpatialAdd {
                MaskMode::Add
            } else {
                MaskMode::Multiply
            };
            let graph = toy_graph(&mut rng)?;
            let layer = SpatialGraphConv::new(&mut store, "spatial", 3, 4, 5, mode, true, &mut rng)?;
            perturb(&mut store, &mut rng);
            let x = Tensor::uniform(&[2, 3, 4, 5], 1.0, &mut rng);
            let r = check_store(
                &store,
                &x,
                Mode::Eval,
                per_tensor,
                &mut rng,
                |_| false,
                |ctx, x| {
                    let g = graph_constants(ctx.tape, &graph);
                    layer.pre_activation(ctx, x, &g)
                },
            )?;
            push(Mode::Eval, r);
        }
        CheckTarget::Temporal => {
            let layer = TemporalConv::new(&mut store, "temporal", 3, 3, 2, &mut rng)?;
            let x = Tensor::uniform(&[2, 3, 7, 4], 1.0, &mut rng);
            let r = check_store(
                &store,
                &x,
                Mode::Eval,
                per_tensor,
                &mut rng,
                |_| false,
                |ctx, x| layer.forward(ctx, x),
            )?;
            push(Mode::Eval, r);
        }
        CheckTarget::BatchNorm => {
            let layer = BatchNorm::new(&mut store, "bn", 3, 0.1)?;
            perturb(&mut store, &mut rng);
            random_buffers(&mut store, &mut rng);
            let x = Tensor::uniform(&[3, 3, 4, 5], 1.0, &mut rng);
            for mode in [Mode::Eval, Mode::Train] {
                let r = check_store(
                    &store,
                    &x,
                    mode,
                    per_tensor,
                    &mut rng,
                    |_| false,
                    |ctx, x| layer.forward(ctx, x),
                )?;
                push(mode, r);
            }
        }
        CheckTarget::Block => {
            let graph = toy_graph(&mut rng)?;
            let spec = BlockSpec {
                c_in: 3,
                c_out: 4,
                joints: 5,
                stride: 2,
                use_temporal: true,
                use_residual: true,
                k_t: 3,
                mask_mode: MaskMode::Add,
                spatial_bias: true,
                bn_momentum: 0.1,
            };
            let block = StBlock::new(&mut store, "block", spec, &mut rng)?;
            perturb(&mut store, &mut rng);
            random_buffers(&mut store, &mut rng);
            let x = Tensor::uniform(&[3, 3, 7, 5], 1.0, &mut rng);
            for mode in [Mode::Eval, Mode::Train] {
                let skip = |n: &str| mode == Mode::Train && pre_norm_bias(n);
                let r = check_store(&store, &x, mode, per_tensor, &mut rng, skip, |ctx, x| {
                    let g = graph_constants(ctx.tape, &graph);
                    block.forward(ctx, x, &g)
                })?;
                push(mode, r);
            }
        }
        CheckTarget::Attention => {
            let tam = TemporalAttention::new(&mut store, "tam", 8, 4, true, &mut rng)?;
            let x = Tensor::uniform(&[2, 3, 8, 5], 1.0, &mut rng);
            let r = check_store(
                &store,
                &x,
                Mode::Eval,
                per_tensor,
                &mut rng,
                |_| false,
                |ctx, x| Ok(tam.forward(ctx, x, None)?.selected),
            )?;
            push(Mode::Eval, r);
        }
        CheckTarget::Model => {
            let mut cfg = ModelConfig::tagcn_toy(16, 8, 4);
            cfg.seed = seed;
            let mut net: Network<f64> = build_tagcn(&cfg)?;
            let x = Tensor::uniform(&[2, 6, 16, 5], 1.0, &mut rng);
            calibrate(&mut net, &x)?;
            // input gradients through the whole stack are small enough that
            // a 1e-5 step sits at the roundoff floor; every layer checks its
            // own input gradient above
            for mode in [Mode::Eval, Mode::Train] {
                let skip = |n: &str| n == "input" || (mode == Mode::Train && pre_norm_bias(n));
                let r = check_store(net.store(), &x, mode, per_tensor, &mut rng, skip, |ctx, x| {
                    Ok(net.forward_with(ctx, x, None)?.logits)
                })?;
                push(mode, r);
            }
        }
    }
    Ok(out)
}

/// Every target at seeds `0..seeds`.
pub fn gradient_suite(targets: &[CheckTarget], seeds: u64, per_tensor: usize) -> Result<Vec<TargetReport>> {
    let mut all = Vec::new();
    for &t in targets {
        for s in 0..seeds {
            all.extend(check_target(t, s, per_tensor)?);
        }
    }
    Ok(all)
}
