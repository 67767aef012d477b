//! `tagcn` command-line driver.
//!
//! Failures print one JSON line `{"category": ..., "message": ...}` on
//! stderr and exit with a code fixed per category.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use tagcn::complexity::{analyze, compare, published_table, CostReport};
use tagcn::harness::{
    check_target, evaluate, generate_synthetic, load_dataset, train, CheckTarget, Control, Precision, RunConfig,
    SyntheticSpec, TrainConfig, GRAD_TOLERANCE,
};
use tagcn::model::{argmax, ModelConfig, Network};
use tagcn::streams::{load_manifest, prepare, read_sequence, Split};
use tagcn::{Error, Scalar};

const DATA_ENV: &str = "TAGCN_DATA_DIR";

#[derive(Parser)]
#[command(
    name = "tagcn",
    version,
    about = "Skeleton action recognition with temporal attention graph convolutions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-window synthetic dataset.
    Synth(SynthArgs),
    /// Print a run configuration preset as TOML.
    Config {
        #[arg(long, value_enum, default_value_t = Preset::Toy)]
        preset: Preset,
    },
    /// Train a network from a run configuration.
    Train(TrainArgs),
    /// Top-1/top-5 accuracy of a checkpoint on one split.
    Eval(EvalArgs),
    /// Parameter and FLOP counts.
    Analyze(AnalyzeArgs),
    /// Finite-difference gradient checks in double precision.
    Gradcheck(GradArgs),
    /// Per-frame attention scores and selected frames for one sequence.
    TamInspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Five-joint toy network with the desk schedule.
    Toy,
    Ntu,
    Kinetics,
    /// Nine-layer baseline on NTU input.
    NtuBaseline,
}

impl Preset {
    fn run_config(self) -> RunConfig {
        let (model, train) = match self {
            Preset::Toy => (ModelConfig::tagcn_toy(16, 8, 4), TrainConfig::desk()),
            Preset::Ntu => (ModelConfig::tagcn_ntu(150), TrainConfig::ntu()),
            Preset::Kinetics => (
                ModelConfig::tagcn("kinetics-18", 18, 3, 300, 150, 400),
                TrainConfig::kinetics(),
            ),
            Preset::NtuBaseline => (ModelConfig::stgcn_ntu(), TrainConfig::ntu()),
        };
        RunConfig {
            model,
            train,
            data: None,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long, env = DATA_ENV)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    val_per_class: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    amplitude: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory; defaults to the config's `data`, then $TAGCN_DATA_DIR.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    /// Where the best checkpoint goes.
    #[arg(long)]
    out: PathBuf,
    /// Epoch log as JSON lines.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    split: SplitArg,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    TaGcn,
    StGcn,
    Toy,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Built-in models to report; defaults to ta-gcn and st-gcn.
    #[arg(long = "model", value_enum)]
    models: Vec<Model>,
    /// Run or model config files to report.
    #[arg(long = "config")]
    configs: Vec<PathBuf>,
    /// Frames kept by the attention module.
    #[arg(long)]
    t_prime: Option<usize>,
    /// Add k-stream variants of every report.
    #[arg(long, value_delimiter = ',')]
    streams: Vec<usize>,
    /// Report name to divide by.
    #[arg(long)]
    ratio_against: Option<String>,
    /// Also print the published comparison ratios.
    #[arg(long)]
    published: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GradArgs {
    /// A layer type or `all`.
    #[arg(long, default_value = "all")]
    module: String,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Coordinates sampled per tensor.
    #[arg(long, default_value_t = 6)]
    per_tensor: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    config: PathBuf,
    /// Parameters to load; the seeded initialization otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Sequence file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    json: bool,
}

/// Exit code for an error category.
fn exit_code(category: &str) -> u8 {
    match category {
        "usage" => 2,
        "config" => 3,
        "format" => 4,
        "io" => 5,
        "shape" => 6,
        "range" => 7,
        "numeric" => 8,
        "topology" => 9,
        _ => 1,
    }
}

fn report_error(category: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "category": category, "message": message }));
    ExitCode::from(exit_code(category))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let text = e.kind().to_string();
            return report_error("usage", &text);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(e.category(), &e.to_string()),
    }
}

fn run(command: Command) -> tagcn::Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Config { preset } => {
            print!("{}", preset.run_config().to_toml());
            Ok(())
        }
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::TamInspect(a) => inspect(a),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn synth(a: SynthArgs) -> tagcn::Result<()> {
    let mut spec = SyntheticSpec::planted();
    if let Some(n) = a.samples_per_class {
        spec.samples_per_class = n;
    }
    if let Some(n) = a.val_per_class {
        spec.val_per_class = n;
    }
    if let Some(v) = a.noise {
        spec.noise = v;
    }
    if let Some(v) = a.amplitude {
        spec.amplitude = v;
    }
    let manifest = generate_synthetic(&spec, a.seed, &a.out)?;
    println!("wrote {} sequences to {}", manifest.entries.len(), a.out.display());
    Ok(())
}

/// Flag, then the config's `data`, then the environment.
fn data_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> tagcn::Result<PathBuf> {
    flag.or_else(|| cfg.data.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            Error::Config(format!(
                "no dataset directory: pass --data, set `data` in the config, or set {DATA_ENV}"
            ))
        })
}

fn train_cmd(a: TrainArgs) -> tagcn::Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    let t = &mut cfg.train;
    if let Some(e) = a.epochs {
        // decay points past the new end are dropped
        t.schedule.decay_epochs.retain(|&d| d < e);
        t.schedule.epochs = e;
    }
    if let Some(lr) = a.lr {
        t.schedule.initial = lr;
    }
    if let Some(s) = a.seed {
        t.seed = s;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    match a.precision {
        Some(PrecisionArg::F32) => t.precision = Precision::F32,
        Some(PrecisionArg::F64) => t.precision = Precision::F64,
        None => {}
    }
    cfg.validate()?;
    let dir = data_dir(a.data.clone(), &cfg)?;
    match cfg.train.precision {
        Precision::F32 => train_as::<f32>(&cfg, &dir, &a),
        Precision::F64 => train_as::<f64>(&cfg, &dir, &a),
    }
}

fn has_split(dir: &Path, split: Split) -> tagcn::Result<bool> {
    Ok(load_manifest(dir)?.entries.iter().any(|e| e.split == split))
}

fn train_as<S: Scalar>(cfg: &RunConfig, dir: &Path, a: &TrainArgs) -> tagcn::Result<()> {
    let mut net: Network<S> = Network::build(&cfg.model)?;
    let train_set = load_dataset(dir, Split::Train, &net)?;
    let val_set = if has_split(dir, Split::Val)? {
        Some(load_dataset(dir, Split::Val, &net)?)
    } else {
        None
    };
    let mut log_file = match &a.log {
        Some(p) => Some(fs::File::create(p).map_err(|e| io_err(p, e))?),
        None => None,
    };
    let mut log_err = None;
    let outcome = train(&mut net, &train_set, val_set.as_ref(), &cfg.train, |e| {
        println!("{}", e.line());
        if let (Some(f), Some(p)) = (log_file.as_mut(), a.log.as_ref()) {
            let line = serde_json::to_string(e).expect("log entry serializes");
            if let Err(err) = writeln!(f, "{line}") {
                log_err = Some(io_err(p, err));
                return Control::Stop;
            }
        }
        Control::Continue
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    outcome.best.save(&a.out)?;
    println!("best epoch {} saved to {}", outcome.best_epoch, a.out.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> tagcn::Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let dir = data_dir(a.data.clone(), &cfg)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
    };
    // checkpoints hold f64 values, so evaluation runs in double precision
    let mut net: Network<f64> = Network::build(&cfg.model)?;
    net.load(&a.checkpoint)?;
    let data = load_dataset(&dir, split, &net)?;
    if data.is_empty() {
        return Err(Error::Config(format!("split {split:?} of {} is empty", dir.display())));
    }
    let e = evaluate(&net, &data)?;
    if a.json {
        println!("{}", serde_json::to_string(&e).expect("evaluation serializes"));
    } else {
        println!("samples {}  top1 {:.4}  top5 {:.4}", e.samples, e.top1, e.top5);
    }
    Ok(())
}

fn model_config(path: &Path) -> tagcn::Result<ModelConfig> {
    // a run config or a bare model config
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let name = path.display().to_string();
    match RunConfig::from_toml(&text, &name) {
        Ok(run) => Ok(run.model),
        Err(_) => ModelConfig::from_toml(&text, &name),
    }
}

fn analyze_cmd(a: AnalyzeArgs) -> tagcn::Result<()> {
    let mut configs: Vec<ModelConfig> = a
        .models
        .iter()
        .map(|m| match m {
            Model::TaGcn => ModelConfig::tagcn_ntu(150),
            Model::StGcn => ModelConfig::stgcn_ntu(),
            Model::Toy => ModelConfig::tagcn_toy(16, 8, 4),
        })
        .collect();
    for p in &a.configs {
        configs.push(model_config(p)?);
    }
    if configs.is_empty() {
        configs = vec![ModelConfig::tagcn_ntu(150), ModelConfig::stgcn_ntu()];
    }
    if a.streams.contains(&0) {
        return Err(Error::Config("stream count must be positive".into()));
    }
    let mut reports: Vec<CostReport> = Vec::new();
    for mut c in configs {
        if let (Some(tp), Some(tam)) = (a.t_prime, c.tam.as_mut()) {
            tam.t_prime = tp;
        }
        let r = analyze(&c)?;
        let variants: Vec<CostReport> = a.streams.iter().filter(|&&k| k > 1).map(|&k| r.streams(k)).collect();
        reports.push(r);
        reports.extend(variants);
    }
    let ratios = match &a.ratio_against {
        Some(base) => Some(compare(&reports, base)?),
        None => None,
    };
    if a.json {
        let reports: Vec<serde_json::Value> = reports
            .iter()
            .map(|r| serde_json::from_str(&r.to_json()).expect("valid json"))
            .collect();
        let mut out = json!({ "reports": reports });
        if let Some(t) = &ratios {
            out["ratios"] = serde_json::from_str(&t.to_json()).expect("valid json");
        }
        println!("{}", serde_json::to_string_pretty(&out).expect("serializes"));
        return Ok(());
    }
    for r in &reports {
        println!("{}", r.to_table());
    }
    if let Some(t) = &ratios {
        println!("{}", t.to_table());
    }
    if a.published {
        println!("{}", published_table());
    }
    Ok(())
}

fn gradcheck(a: GradArgs) -> tagcn::Result<()> {
    let targets = if a.module == "all" {
        CheckTarget::ALL.to_vec()
    } else {
        vec![CheckTarget::parse(&a.module)?]
    };
    if a.seeds == 0 {
        return Err(Error::Config("need at least one seed".into()));
    }
    let mut reports = Vec::new();
    for &t in &targets {
        for seed in 0..a.seeds {
            reports.extend(check_target(t, seed, a.per_tensor)?);
        }
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&reports).expect("reports serialize"));
    } else {
        println!(
            "{:<17} {:>4} {:<5} {:>12} {:>7}  result",
            "target", "seed", "mode", "max_rel_err", "checked"
        );
        for r in &reports {
            println!(
                "{:<17} {:>4} {:<5} {:>12.3e} {:>7}  {}",
                r.target.name(),
                r.seed,
                r.mode,
                r.max_rel_error,
                r.checked,
                if r.passed() { "PASS" } else { "FAIL" }
            );
        }
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(Error::NonFinite(format!(
            "{failed} of {} gradient checks at or above {GRAD_TOLERANCE:e}",
            reports.len()
        )));
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> tagcn::Result<()> {
    let model = model_config(&a.config)?;
    let mut net: Network<f64> = Network::build(&model)?;
    if let Some(p) = &a.checkpoint {
        net.load(p)?;
    }
    if net.tam().is_none() {
        return Err(Error::Config(format!("model {} has no attention module", model.name)));
    }
    let seq = read_sequence(&a.input)?;
    if seq.topology != net.topology().name() {
        return Err(Error::Config(format!(
            "sequence uses topology {}, the model {}",
            seq.topology,
            net.topology().name()
        )));
    }
    let x = prepare(
        &seq.data.cast::<f64>(),
        net.topology(),
        model.stream,
        model.sequence_length,
    )?;
    let (logits, trace) = net.forward_traced(&x)?;
    let trace = trace.expect("attention network traces");
    let (scores, selected) = (&trace.scores[0], &trace.indices[0]);
    let predicted = argmax(logits.data());
    if a.json {
        let frames: Vec<_> = scores
            .iter()
            .enumerate()
            .map(|(t, s)| json!({ "frame": t, "score": s, "selected": selected.contains(&t) }))
            .collect();
        let out = json!({ "frames": frames, "selected": selected, "predicted": predicted, "label": seq.label });
        println!("{}", serde_json::to_string_pretty(&out).expect("serializes"));
    } else {
        println!("frame\tscore\tselected");
        for (t, s) in scores.iter().enumerate() {
            println!("{t}\t{s:.6}\t{}", u8::from(selected.contains(&t)));
        }
    }
    Ok(())
}
