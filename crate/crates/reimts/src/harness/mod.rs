//! The `reimts` command line: `generate`, `train`, `eval`, `ablate` and
//! `sweep`.
//!
//! Exit codes: 0 success, 2 usage, 3 data, 4 runtime. Every results file
//! embeds the argument vector, the resolved configuration and the seeds.

mod results;

pub use results::{mean_std, strip_timing, Aggregate, ResultsFile, RunRecord, RESULTS_FORMAT_VERSION};

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use reimts_core::{Ablation, BackboneKind, BackboneSpec, DecodeMode, FusionInit, GateShape, ReimtsConfig, ScaleStack};
use serde_json::json;

use crate::data::{
    generate, load_tuples, save_tuples, window_and_normalize, DataError, Dataset, Manifest, Preset, Split,
};
use crate::training::{evaluate, fit, Checkpoint, LrSchedule, TrainConfig, TrainError};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

/// Environment variable forcing single-threaded execution.
pub const DETERMINISTIC_ENV: &str = "REIMTS_DETERMINISTIC";

#[derive(Debug, Parser)]
#[command(name = "reimts", version, about = "Recursive multi-scale forecasting of irregular multivariate time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and its manifest.
    Generate(GenerateArgs),
    /// Train one configuration over several seeds.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Train every ablation variant and compare them.
    Ablate(AblateArgs),
    /// Sweep scale-level counts and second-level periods.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value = "benchmark", value_parser = parse_preset)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for `tuples.csv` and `manifest.txt`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub num_samples: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub num_variables: Option<u64>,
    /// Expected observations per sample; rescales the sampling rates.
    #[arg(long)]
    pub mean_observations: Option<f64>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub coupling: Option<f64>,
    #[arg(long)]
    pub regime_shift: Option<f64>,
    #[arg(long)]
    pub lookback: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub resolution: Option<f64>,
    /// Seed of the 8:1:1 split; defaults to `--seed`.
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Comma-separated time periods, longest first.
    #[arg(long, default_value = "48,24", value_parser = parse_levels)]
    pub levels: ScaleStack,
    #[arg(long, default_value = "temporal", value_parser = parse_backbone)]
    pub backbone: BackboneKind,
    #[arg(long, default_value = "concat", value_parser = parse_decode_mode)]
    pub decode_mode: DecodeMode,
    #[arg(long, default_value = "full", value_parser = parse_ablation)]
    pub ablation: Ablation,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub hidden_dim: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub layers: u64,
    #[arg(long, default_value = "elementwise", value_parser = parse_gate)]
    pub gate: GateShape,
    /// `small` (uniform ±0.01) or `zero`.
    #[arg(long, default_value = "small", value_parser = parse_fusion_init)]
    pub fusion_init: FusionInit,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma list or inclusive range `a..b`.
    #[arg(long, default_value = "2024..2028", value_parser = parse_seeds)]
    pub seeds: Seeds,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    #[arg(long, default_value_t = 300)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    /// `halve` (halve every epoch after epoch 3), `halve-after:N` or `constant`.
    #[arg(long, default_value = "halve", value_parser = parse_schedule)]
    pub lr_schedule: LrSchedule,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Variants to run; `--ablation` is ignored.
    #[arg(long, default_value = "full,rp_sample,rp_split,rp_iarf,wo_iarf", value_parser = parse_ablations)]
    pub ablations: AblationList,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Numbers of scale levels.
    #[arg(long, default_value = "2,3,4", value_parser = parse_usizes)]
    pub scale_levels: UsizeList,
    /// Second-level periods; every further level halves the one above.
    /// Defaults to T¹/2, T¹/3, T¹/4 and T¹/6 of the first `--levels` period.
    #[arg(long, value_parser = parse_f64s)]
    pub periods: Option<F64List>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seeds(pub Vec<u64>);
#[derive(Debug, Clone, PartialEq)]
pub struct UsizeList(pub Vec<usize>);
#[derive(Debug, Clone, PartialEq)]
pub struct F64List(pub Vec<f64>);
#[derive(Debug, Clone, PartialEq)]
pub struct AblationList(pub Vec<Ablation>);

fn parse_preset(s: &str) -> Result<Preset, String> {
    Preset::parse(s).ok_or_else(|| format!("unknown preset {s} (physio-like, benchmark, sweep)"))
}

fn parse_levels(s: &str) -> Result<ScaleStack, String> {
    let periods = parse_f64s(s)?.0;
    ScaleStack::new(periods).map_err(|e| e.to_string())
}

fn parse_backbone(s: &str) -> Result<BackboneKind, String> {
    BackboneKind::parse(s).ok_or_else(|| format!("unknown backbone {s} (temporal, variable, observation)"))
}

fn parse_decode_mode(s: &str) -> Result<DecodeMode, String> {
    DecodeMode::parse(s).ok_or_else(|| format!("unknown decode mode {s} (concat, lowest)"))
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    Ablation::parse(s).ok_or_else(|| format!("unknown ablation {s} (full, rp_sample, rp_split, rp_iarf, wo_iarf)"))
}

fn parse_ablations(s: &str) -> Result<AblationList, String> {
    let list = s.split(',').map(|a| parse_ablation(a.trim())).collect::<Result<Vec<_>, _>>()?;
    Ok(AblationList(list))
}

fn parse_gate(s: &str) -> Result<GateShape, String> {
    match s {
        "elementwise" => Ok(GateShape::Elementwise),
        "scalar" => Ok(GateShape::Scalar),
        _ => Err(format!("unknown gate {s} (elementwise, scalar)")),
    }
}

fn parse_fusion_init(s: &str) -> Result<FusionInit, String> {
    match s {
        "small" => Ok(FusionInit::small()),
        "zero" => Ok(FusionInit::Zero),
        _ => Err(format!("unknown fusion init {s} (small, zero)")),
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split {s} (train, val, test)"))
}

fn parse_schedule(s: &str) -> Result<LrSchedule, String> {
    match s {
        "constant" => Ok(LrSchedule::Constant),
        "halve" => Ok(LrSchedule::HalveAfter(3)),
        _ => s
            .strip_prefix("halve-after:")
            .and_then(|n| n.parse().ok())
            .map(LrSchedule::HalveAfter)
            .ok_or_else(|| format!("unknown schedule {s} (halve, halve-after:N, constant)")),
    }
}

/// `2024..2028` (inclusive) or `1,2,3`.
pub fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range {s}"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range {s}"))?;
        if b < a {
            return Err(format!("empty seed range {s}"));
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| format!("bad seed {x}")))
            .collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err("no seeds".into());
    }
    Ok(Seeds(seeds))
}

fn parse_usizes(s: &str) -> Result<UsizeList, String> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| format!("bad integer {x}")))
        .collect::<Result<_, _>>()
        .map(UsizeList)
}

fn parse_f64s(s: &str) -> Result<F64List, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad number {x}")))
        .collect::<Result<_, _>>()
        .map(F64List)
}

/// A failed command with its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Data(_) => EXIT_DATA,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Data(m) | Self::Runtime(m) => m,
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        use reimts_core::Error as E;
        match e {
            TrainError::Data(e) => e.into(),
            TrainError::EmptySplit(_) | TrainError::Checkpoint { .. } => Self::Data(e.to_string()),
            TrainError::InvalidConfig(_) => Self::Usage(e.to_string()),
            TrainError::Core(E::InvalidConfig(_) | E::InvalidScaleStack(_)) => Self::Usage(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    if deterministic() {
        // fails harmlessly when a global pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match run(cli, &argv) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

pub fn deterministic() -> bool {
    std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v == "1")
}

pub fn run(cli: Cli, argv: &[String]) -> Result<(), Failure> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a, argv),
        Command::Train(a) => cmd_train(&a, argv),
        Command::Eval(a) => cmd_eval(&a, argv),
        Command::Ablate(a) => cmd_ablate(&a, argv),
        Command::Sweep(a) => cmd_sweep(&a, argv),
    }
}

fn cmd_generate(a: &GenerateArgs, argv: &[String]) -> Result<(), Failure> {
    let mut spec = a.preset.spec(a.seed);
    if let Some(n) = a.num_samples {
        spec.num_samples = n as usize;
    }
    if let Some(x) = a.lookback {
        spec.lookback_span = x;
    }
    if let Some(x) = a.horizon {
        spec.horizon_span = x;
    }
    if let Some(x) = a.decay {
        spec.decay = x;
    }
    if let Some(x) = a.noise {
        spec.noise = x;
    }
    if let Some(x) = a.coupling {
        spec.coupling = x;
    }
    if let Some(x) = a.regime_shift {
        spec.regime_shift = x;
    }
    if let Some(x) = a.resolution {
        spec.resolution = x;
    }
    let mut target = a.preset.target_observations();
    if let Some(v) = a.num_variables {
        // keep the per-variable density of the preset
        target *= v as f64 / spec.num_variables as f64;
        spec.num_variables = v as usize;
    }
    if let Some(m) = a.mean_observations {
        if !(m.is_finite() && m > 0.0) {
            return Err(Failure::Usage("--mean-observations must be positive".into()));
        }
        target = m;
    }
    if !(spec.decay.is_finite() && spec.decay > 0.0) {
        return Err(Failure::Usage("--decay must be positive".into()));
    }
    spec = spec.with_observation_target(target);
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let corpus = generate(&spec)?;
    let tuples = a.out.join("tuples.csv");
    save_tuples(&corpus, &tuples)?;
    let mut manifest = Manifest::build(
        &spec.name,
        PathBuf::from("tuples.csv"),
        &corpus,
        spec.horizon_span,
        "hours",
        a.split_seed.unwrap_or(a.seed),
    )?;
    manifest.meta.insert("preset".into(), a.preset.as_str().into());
    manifest.meta.insert("argv".into(), argv.join(" "));
    manifest
        .meta
        .insert("generator".into(), serde_json::to_string(&spec).expect("spec serializes"));
    manifest.save(&a.out.join("manifest.txt"))?;
    println!(
        "{} samples, {:.1} observations per sample, written to {}",
        corpus.samples.len(),
        corpus.mean_observations(),
        a.out.display()
    );
    Ok(())
}

fn load_dataset(path: &Path) -> Result<(Manifest, Dataset), Failure> {
    let manifest = Manifest::load(path)?;
    let corpus = load_tuples(&manifest.tuples_path(path), manifest.num_variables, manifest.total_span)?;
    let data = window_and_normalize(&corpus, &manifest)?;
    Ok((manifest, data))
}

fn model_config(m: &ModelArgs, stack: ScaleStack, ablation: Ablation, data: &Dataset) -> Result<ReimtsConfig, Failure> {
    if stack.total_span() < data.lookback_span {
        return Err(Failure::Usage(format!(
            "first period {} is shorter than the lookback window {}",
            stack.total_span(),
            data.lookback_span
        )));
    }
    let mut backbone = BackboneSpec::new(m.backbone, m.hidden_dim as usize, data.num_variables, stack.total_span());
    backbone.num_layers = m.layers as usize;
    let mut config = ReimtsConfig::new(stack, backbone);
    config.decode_mode = m.decode_mode;
    config.ablation = ablation;
    config.gate = m.gate;
    config.fusion_init = m.fusion_init;
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}

fn train_config(f: &FitArgs) -> Result<TrainConfig, Failure> {
    let config = TrainConfig {
        learning_rate: f.lr,
        max_epochs: f.max_epochs,
        patience: f.patience,
        seeds: f.seeds.0.clone(),
        batch_size: f.batch_size as usize,
        lr_schedule: f.lr_schedule,
        gradient_clip: f.grad_clip,
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}

/// Fits `config` once per seed, saving each best checkpoint under `out`.
fn run_seeds(
    label: &str,
    config: &ReimtsConfig,
    data: &Dataset,
    train: &TrainConfig,
    out: &Path,
) -> Result<Vec<RunRecord>, Failure> {
    let mut runs = Vec::with_capacity(train.seeds.len());
    for &seed in &train.seeds {
        let start = Instant::now();
        let outcome = fit(config, data, train, seed)?;
        let model = outcome.checkpoint.model()?;
        let val = evaluate(&model, &data.val, "validation")?;
        let test = evaluate(&model, &data.test, "test")?;
        outcome
            .checkpoint
            .save(&out.join("checkpoints").join(format!("{label}-seed{seed}.json")))?;
        log::info!(
            "{label} seed {seed}: test mse {:.5} mae {:.5} (best epoch {} of {})",
            test.mse,
            test.mae,
            outcome.checkpoint.epoch,
            outcome.history.len()
        );
        runs.push(RunRecord {
            record: "run",
            format_version: RESULTS_FORMAT_VERSION,
            label: label.to_string(),
            seed,
            best_epoch: outcome.checkpoint.epoch,
            epochs_run: outcome.history.len(),
            val,
            test,
            iteration_secs: outcome.secs_per_iteration(),
            wall_secs: start.elapsed().as_secs_f64(),
            history: outcome.history,
        });
    }
    Ok(runs)
}

fn summary(
    command: &str,
    label: &str,
    argv: &[String],
    data: &Path,
    config: &ReimtsConfig,
    train: &TrainConfig,
    agg: &Aggregate,
) -> serde_json::Value {
    json!({
        "record": "summary",
        "format_version": RESULTS_FORMAT_VERSION,
        "command": command,
        "label": label,
        "argv": argv,
        "data": data,
        "config": config,
        "train": train,
        "seeds": train.seeds,
        "lr_schedule": train.lr_schedule,
        "deterministic": deterministic(),
        "aggregate": agg,
    })
}

fn cmd_train(a: &TrainArgs, argv: &[String]) -> Result<(), Failure> {
    let train = train_config(&a.fit)?;
    let (_, data) = load_dataset(&a.fit.data)?;
    let config = model_config(&a.model, a.model.levels.clone(), a.model.ablation, &data)?;
    let label = a.model.ablation.as_str();
    let runs = run_seeds(label, &config, &data, &train, &a.fit.out)?;
    let agg = Aggregate::of(&runs);
    let mut file = ResultsFile::default();
    for r in &runs {
        file.push(r);
    }
    file.push_value(summary("train", label, argv, &a.fit.data, &config, &train, &agg));
    file.write(&a.fit.out.join("results.jsonl"))?;
    println!("seed\ttest_mse\ttest_mae\tbest_epoch");
    for r in &runs {
        println!("{}\t{:.6}\t{:.6}\t{}", r.seed, r.test.mse, r.test.mae, r.best_epoch);
    }
    println!("test MSE x10^-1: {}", agg.cell());
    Ok(())
}

fn cmd_eval(a: &EvalArgs, argv: &[String]) -> Result<(), Failure> {
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let (_, data) = load_dataset(&a.data)?;
    let model = checkpoint.model()?;
    let split = a.split.as_str();
    let metrics = evaluate(&model, data.split(a.split), split)?;
    let record = json!({
        "record": "eval",
        "format_version": RESULTS_FORMAT_VERSION,
        "argv": argv,
        "data": a.data,
        "checkpoint": a.checkpoint,
        "split": split,
        "seed": checkpoint.seed,
        "config": checkpoint.config,
        "metrics": metrics,
    });
    println!("{record}");
    if let Some(out) = &a.out {
        let mut file = ResultsFile::default();
        file.push_value(record);
        file.write(&out.join("results.jsonl"))?;
    }
    Ok(())
}

fn cmd_ablate(a: &AblateArgs, argv: &[String]) -> Result<(), Failure> {
    let train = train_config(&a.fit)?;
    let (_, data) = load_dataset(&a.fit.data)?;
    let mut file = ResultsFile::default();
    let mut rows = Vec::new();
    for &ablation in &a.ablations.0 {
        let config = model_config(&a.model, a.model.levels.clone(), ablation, &data)?;
        let runs = run_seeds(ablation.as_str(), &config, &data, &train, &a.fit.out)?;
        let agg = Aggregate::of(&runs);
        for r in &runs {
            file.push(r);
        }
        file.push_value(summary("ablate", ablation.as_str(), argv, &a.fit.data, &config, &train, &agg));
        rows.push((ablation, agg));
    }
    let full = rows.iter().find(|(ab, _)| *ab == Ablation::Full).map(|(_, g)| g.test_mse_mean);
    let mut table = String::from("| Variant | MSE ×10⁻¹ | MAE ×10⁻¹ | vs full |\n|---|---|---|---|\n");
    let mut csv = String::from("variant,mse_mean,mse_std,mae_mean,mae_std,relative_to_full\n");
    for (ab, g) in &rows {
        let rel = full.map(|f| (g.test_mse_mean - f) / f);
        let rel_cell = rel.map_or("".into(), |r| format!("{:+.1}%", 100.0 * r));
        let _ = writeln!(
            table,
            "| {} | {} | {:.4} ± {:.4} | {} |",
            ab.as_str(),
            g.cell(),
            g.test_mae_x10_mean,
            g.test_mae_x10_std,
            rel_cell
        );
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            ab.as_str(),
            g.test_mse_mean,
            g.test_mse_std,
            g.test_mae_mean,
            g.test_mae_std,
            rel.map_or(String::new(), |r| r.to_string())
        );
    }
    file.push_value(json!({
        "record": "ablation",
        "format_version": RESULTS_FORMAT_VERSION,
        "argv": argv,
        "variants": rows.iter().map(|(ab, g)| json!({"variant": ab.as_str(), "aggregate": g})).collect::<Vec<_>>(),
    }));
    file.write(&a.fit.out.join("results.jsonl"))?;
    crate::data::write_atomic(&a.fit.out.join("ablation.md"), table.as_bytes())?;
    crate::data::write_atomic(&a.fit.out.join("ablation.csv"), csv.as_bytes())?;
    print!("{table}");
    Ok(())
}

/// `[T¹, p, p/2, p/4, …]` with `levels` entries.
pub fn sweep_stack(first: f64, second: f64, levels: usize) -> Result<ScaleStack, reimts_core::Error> {
    let mut periods = vec![first];
    let mut p = second;
    while periods.len() < levels {
        periods.push(p);
        p /= 2.0;
    }
    ScaleStack::new(periods)
}

/// One sweep cell.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepCell {
    pub levels: usize,
    pub second_period: f64,
    pub periods: Vec<f64>,
    pub aggregate: Aggregate,
}

/// Renders the scale-level × period grid: rows are level counts, columns
/// second-level periods. The best level count of every column is bold and
/// the best period of every row is starred.
pub fn sweep_table(cells: &[SweepCell], levels: &[usize], periods: &[f64]) -> String {
    let find = |n: usize, p: f64| cells.iter().find(|c| c.levels == n && c.second_period == p);
    let best_in_col: Vec<Option<usize>> = periods
        .iter()
        .map(|&p| {
            levels
                .iter()
                .filter_map(|&n| find(n, p).map(|c| (n, c.aggregate.test_mse_mean)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(n, _)| n)
        })
        .collect();
    let mut out = String::from("| Scale level |");
    for p in periods {
        let _ = write!(out, " T²={p} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(periods.len()));
    out.push('\n');
    for &n in levels {
        let best_p = periods
            .iter()
            .filter_map(|&p| find(n, p).map(|c| (p, c.aggregate.test_mse_mean)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(p, _)| p);
        let _ = write!(out, "| {n} |");
        for (j, &p) in periods.iter().enumerate() {
            match find(n, p) {
                Some(c) => {
                    let mut cell = c.aggregate.cell();
                    if best_in_col[j] == Some(n) {
                        cell = format!("**{cell}**");
                    }
                    if best_p == Some(p) {
                        cell.push_str(" *");
                    }
                    let _ = write!(out, " {cell} |");
                }
                None => out.push_str(" n/a |"),
            }
        }
        out.push('\n');
    }
    out.push_str("\nMSE ×10⁻¹, mean ± std over seeds. Bold: best scale level per period. *: best period per scale level.\n");
    out
}

fn cmd_sweep(a: &SweepArgs, argv: &[String]) -> Result<(), Failure> {
    let train = train_config(&a.fit)?;
    let first = a.model.levels.total_span();
    let periods = a
        .periods
        .as_ref()
        .map(|p| p.0.clone())
        .unwrap_or_else(|| vec![first / 2.0, first / 3.0, first / 4.0, first / 6.0]);
    let levels = a.scale_levels.0.clone();
    if levels.iter().any(|&n| n < 2) {
        return Err(Failure::Usage("sweep scale levels must be at least 2".into()));
    }
    let mut grid = Vec::new();
    for &n in &levels {
        for &p in &periods {
            let stack = sweep_stack(first, p, n).map_err(|e| Failure::Usage(format!("levels {n}, period {p}: {e}")))?;
            grid.push((n, p, stack));
        }
    }
    let (_, data) = load_dataset(&a.fit.data)?;
    let mut file = ResultsFile::default();
    let mut cells = Vec::new();
    for (n, p, stack) in grid {
        let config = model_config(&a.model, stack.clone(), a.model.ablation, &data)?;
        let label = format!("levels{n}-period{p}");
        let runs = run_seeds(&label, &config, &data, &train, &a.fit.out)?;
        let agg = Aggregate::of(&runs);
        for r in &runs {
            file.push(r);
        }
        file.push_value(summary("sweep", &label, argv, &a.fit.data, &config, &train, &agg));
        cells.push(SweepCell {
            levels: n,
            second_period: p,
            periods: stack.periods().to_vec(),
            aggregate: agg,
        });
    }
    let best_period: Vec<_> = levels
        .iter()
        .filter_map(|&n| {
            cells
                .iter()
                .filter(|c| c.levels == n)
                .min_by(|x, y| x.aggregate.test_mse_mean.total_cmp(&y.aggregate.test_mse_mean))
                .map(|c| json!({"levels": n, "second_period": c.second_period}))
        })
        .collect();
    let best = cells
        .iter()
        .min_by(|x, y| x.aggregate.test_mse_mean.total_cmp(&y.aggregate.test_mse_mean))
        .expect("non-empty sweep");
    file.push_value(json!({
        "record": "sweep",
        "format_version": RESULTS_FORMAT_VERSION,
        "argv": argv,
        "cells": cells,
        "best": {"levels": best.levels, "second_period": best.second_period},
        "best_period_by_levels": best_period,
    }));
    let mut csv = String::from("levels,second_period,periods,mse_mean,mse_std,mae_mean,mae_std,iteration_secs,best_in_row\n");
    for c in &cells {
        let row_best = cells
            .iter()
            .filter(|d| d.levels == c.levels)
            .all(|d| c.aggregate.test_mse_mean <= d.aggregate.test_mse_mean);
        let periods: Vec<String> = c.periods.iter().map(f64::to_string).collect();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            c.levels,
            c.second_period,
            periods.join(" "),
            c.aggregate.test_mse_mean,
            c.aggregate.test_mse_std,
            c.aggregate.test_mae_mean,
            c.aggregate.test_mae_std,
            c.aggregate.iteration_secs,
            row_best
        );
    }
    let table = sweep_table(&cells, &levels, &periods);
    file.write(&a.fit.out.join("results.jsonl"))?;
    crate::data::write_atomic(&a.fit.out.join("sweep.md"), table.as_bytes())?;
    crate::data::write_atomic(&a.fit.out.join("sweep.csv"), csv.as_bytes())?;
    print!("{table}");
    Ok(())
}
