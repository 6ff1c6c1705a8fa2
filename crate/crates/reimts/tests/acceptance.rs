//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line each.
//!
//! Set `REIMTS_ACCEPTANCE_ONLY=<substring>` to run a subset, and
//! `REIMTS_ACCEPTANCE_STRICT=1` to exit non-zero when any criterion fails.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reimts::data::{generate, window_and_normalize, Dataset, Manifest, Preset};
use reimts::harness::strip_timing;
use reimts::training::{evaluate, fit, LrSchedule, TrainConfig};
use reimts_core::{
    align_and_pad, masked_mse_loss, split_by_count, split_sample, Ablation, AlignedSample, BackboneKind,
    BackboneSpec, DecodeMode, ForecastQuery, FusionInit, ObservationTuple, ParamStore, RawSample, Reimts,
    ReimtsConfig, ScaleStack,
};

type Outcome = Result<String, String>;

// ---- pinned tolerances and budgets ----
const SPLIT_SAMPLES: usize = 1000;
const SPLIT_BUDGET: Duration = Duration::from_secs(60);
const FD_STEP: f64 = 1e-5;
const FD_MAX_REL: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely.
const FD_FLOOR: f64 = 1e-6;
const BENCH_SEEDS: [u64; 5] = [2024, 2025, 2026, 2027, 2028];
const BENCH_MIN_GAIN: f64 = 0.05;
const BENCH_BUDGET: Duration = Duration::from_secs(15 * 60);

// ---------------------------------------------------------------- fixtures

fn random_stack(rng: &mut ChaCha8Rng) -> ScaleStack {
    let first = [24.0, 48.0, 60.0, 96.0][rng.random_range(0..4)];
    let levels = rng.random_range(2..=4);
    let mut periods = vec![first];
    while periods.len() < levels {
        let r = [2.0, 3.0, 4.0][rng.random_range(0..3)];
        periods.push(periods.last().unwrap() / r);
    }
    ScaleStack::new(periods).unwrap()
}

/// Timestamps on a grid fine enough to land exactly on many subsample
/// boundaries, t = 0 included.
fn random_raw(rng: &mut ChaCha8Rng, span: f64) -> RawSample {
    let v_count = rng.random_range(1..=10);
    let count = rng.random_range(1..=200);
    let mut keys = BTreeSet::new();
    let mut obs = Vec::new();
    while obs.len() < count {
        let v = rng.random_range(0..v_count);
        let tick: u32 = rng.random_range(0..=1728);
        if keys.insert((v, tick)) {
            let t = span * tick as f64 / 1728.0;
            obs.push(ObservationTuple::new(t, rng.random_range(-10.0..10.0), v));
        }
    }
    RawSample::new("r", obs, span, v_count).unwrap()
}

fn multiset(a: &AlignedSample) -> Vec<(u64, u64, usize)> {
    let mut m: Vec<_> = a
        .observations()
        .map(|(_, _, o)| (o.timestamp.to_bits(), o.value.to_bits(), o.variable))
        .collect();
    m.sort_unstable();
    m
}

fn raw_multiset(raw: &RawSample) -> Vec<(u64, u64, usize)> {
    let mut m: Vec<_> = raw
        .observations()
        .iter()
        .map(|o| (o.timestamp.to_bits(), o.value.to_bits(), o.variable))
        .collect();
    m.sort_unstable();
    m
}

fn timestamp_set(a: &AlignedSample) -> BTreeSet<u64> {
    a.observations().map(|(_, _, o)| o.timestamp.to_bits()).collect()
}

/// Queries with no targets, for preparation only.
fn empty_query(span: f64, v: usize) -> ForecastQuery {
    ForecastQuery::new(span, 1.0, v, vec![span + 1.0; v], vec![false; v], None).unwrap()
}

fn toy_config(levels: &[f64], kind: BackboneKind, v: usize, d: usize) -> ReimtsConfig {
    let stack = ScaleStack::new(levels.to_vec()).unwrap();
    ReimtsConfig::new(stack, BackboneSpec::new(kind, d, v, 48.0))
}

/// Random lookback sample in `[0, 36]` and `slots × V` queries in `(36, 48]`
/// with a random query mask (at least one target).
fn toy_example(seed: u64, v: usize, count: usize, slots: usize) -> (AlignedSample, ForecastQuery) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys = BTreeSet::new();
    let mut obs = Vec::new();
    for j in 0..count.max(v) {
        let var = if j < v { j } else { rng.random_range(0..v) };
        loop {
            let tick: u32 = rng.random_range(0..=144);
            if keys.insert((var, tick)) {
                obs.push(ObservationTuple::new(tick as f64 * 0.25, rng.random_range(-2.0..2.0), var));
                break;
            }
        }
    }
    let aligned = align_and_pad(&RawSample::new("toy", obs, 36.0, v).unwrap()).unwrap();
    let n = slots * v;
    let ts: Vec<f64> = (0..n).map(|j| 36.5 + (j / v) as f64 * 2.5).collect();
    let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
    mask[0] = true;
    let truth = mask.iter().map(|&m| if m { rng.random_range(-1.0..1.0) } else { 0.0 }).collect();
    (aligned, ForecastQuery::new(36.0, 12.0, v, ts, mask, Some(truth)).unwrap())
}

const KINDS: [BackboneKind; 3] = [BackboneKind::Temporal, BackboneKind::Variable, BackboneKind::Observation];

// ---------------------------------------------------------------- criteria

fn split_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut mismatches, mut grids) = (0usize, 0usize);
    for _ in 0..SPLIT_SAMPLES {
        let stack = random_stack(&mut rng);
        let raw = random_raw(&mut rng, stack.total_span());
        let expected = raw_multiset(&raw);
        let mut level = split_sample(&align_and_pad(&raw).unwrap(), &stack, 1).unwrap();
        for n in 1..=stack.levels() {
            if n > 1 {
                level = split_sample(&level, &stack, n).unwrap();
            }
            grids += 1;
            mismatches += usize::from(multiset(&level) != expected);
        }
    }
    let secs = start.elapsed();
    let detail = format!("{mismatches} mismatches over {grids} grids of {SPLIT_SAMPLES} samples in {secs:.1?}");
    if mismatches == 0 && secs < SPLIT_BUDGET {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sampling_pattern() -> Outcome {
    // the same corpus as the split oracle, through every preparation path
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut violations, mut grids) = (0usize, 0usize);
    for _ in 0..SPLIT_SAMPLES {
        let stack = random_stack(&mut rng);
        let raw = random_raw(&mut rng, stack.total_span());
        let expected: BTreeSet<u64> = raw.observations().iter().map(|o| o.timestamp.to_bits()).collect();
        let aligned = align_and_pad(&raw).unwrap();
        let query = empty_query(stack.total_span(), raw.num_variables());
        for ablation in [Ablation::Full, Ablation::RpSplit, Ablation::RpSample] {
            let mut config = ReimtsConfig::new(
                stack.clone(),
                BackboneSpec::new(BackboneKind::Variable, 2, raw.num_variables(), stack.total_span()),
            );
            config.ablation = ablation;
            let model = Reimts::new(config, 0).unwrap();
            let prepared = model.prepare(&aligned, &query).unwrap();
            for level in prepared.levels() {
                grids += 1;
                violations += usize::from(timestamp_set(level) != expected);
            }
        }
        // count-based splitting applied directly, level by level
        let mut level = aligned.clone();
        for n in 2..=stack.levels() {
            let ratio = stack.subsamples(n).unwrap() / stack.subsamples(n - 1).unwrap();
            level = split_by_count(&level, ratio, n).unwrap();
            grids += 1;
            violations += usize::from(timestamp_set(&level) != expected);
        }
    }
    let detail = format!("{violations} violations over {grids} grids (time split, count split, relabel)");
    if violations == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn perturb_upper_encoders(params: &mut ParamStore, levels: usize, rng: &mut ChaCha8Rng) -> usize {
    let names: Vec<String> = params
        .names()
        .filter(|n| (1..levels).any(|l| n.starts_with(&format!("enc.{l}."))))
        .map(String::from)
        .collect();
    for name in &names {
        for x in &mut params.get_mut(name).unwrap().data {
            *x += rng.random_range(-3.0..3.0);
        }
    }
    names.len()
}

fn fusion_neutrality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cases = 0;
    let mut failures = Vec::new();
    for levels in [vec![48.0, 24.0], vec![48.0, 24.0, 12.0]] {
        let n = levels.len();
        for kind in KINDS {
            for mode in [DecodeMode::LowestLevelOnly, DecodeMode::ConcatAllLevels] {
                for seed in 0..4u64 {
                    let mut config = toy_config(&levels, kind, 3, 4);
                    config.fusion_init = FusionInit::Zero;
                    config.decode_mode = mode;
                    let mut model = Reimts::new(config, seed).unwrap();
                    if mode == DecodeMode::ConcatAllLevels {
                        // close the projection blocks of the upper levels too
                        let d = 4;
                        let w = model.params_mut().get_mut("proj.w").unwrap();
                        w.data[..(n - 1) * d * d].fill(0.0);
                    }
                    let (a, q) = toy_example(seed + 10 * n as u64, 3, 25, 3);
                    let prepared = model.prepare(&a, &q).unwrap();
                    let before: Vec<u64> = model.forward(&prepared).unwrap().iter().map(|x| x.to_bits()).collect();
                    let touched = perturb_upper_encoders(model.params_mut(), n, &mut rng);
                    assert!(touched > 0);
                    let after: Vec<u64> = model.forward(&prepared).unwrap().iter().map(|x| x.to_bits()).collect();
                    cases += 1;
                    if before != after {
                        failures.push(format!("N={n} {kind:?} {mode:?} seed {seed}"));
                    }
                }
            }
        }
    }
    if failures.is_empty() {
        Ok(format!("{cases} configurations bitwise invariant (N=2 and N=3, three backbones)"))
    } else {
        Err(format!("{} of {cases} changed: {}", failures.len(), failures.join("; ")))
    }
}

fn gradient_correctness() -> Outcome {
    let mut worst_by_kind = Vec::new();
    let mut worst: f64 = 0.0;
    for kind in KINDS {
        let mut kind_worst: f64 = 0.0;
        for levels in [vec![48.0, 24.0], vec![48.0, 24.0, 12.0]] {
            let mut config = toy_config(&levels, kind, 2, 3);
            config.fusion_init = FusionInit::SmallUniform { bound: 0.5 };
            let model = Reimts::new(config.clone(), 21).unwrap();
            let (a, q) = toy_example(5, 2, 14, 2);
            let prepared = model.prepare(&a, &q).unwrap();
            let (_, grads) = model.loss_and_grad(&prepared).unwrap();
            let mut probe = model.params().clone();
            let names: Vec<String> = model.params().names().map(String::from).collect();
            for name in &names {
                let analytic = grads.get(model.params(), name).unwrap().to_vec();
                for (j, &g) in analytic.iter().enumerate() {
                    let orig = probe.get(name).unwrap().data[j];
                    let mut at = |x: f64| {
                        probe.get_mut(name).unwrap().data[j] = x;
                        Reimts::from_params(config.clone(), probe.clone())
                            .unwrap()
                            .loss(&prepared)
                            .unwrap()
                    };
                    let numeric = (at(orig + FD_STEP) - at(orig - FD_STEP)) / (2.0 * FD_STEP);
                    probe.get_mut(name).unwrap().data[j] = orig;
                    let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(FD_FLOOR);
                    kind_worst = kind_worst.max(rel);
                }
            }
        }
        worst = worst.max(kind_worst);
        worst_by_kind.push(format!("{}: {kind_worst:.2e}", kind.as_str()));
    }
    let detail = format!("max relative error {worst:.2e} at step {FD_STEP:e} ({})", worst_by_kind.join(", "));
    if worst < FD_MAX_REL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn loss_masking() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut checked, mut bad) = (0usize, 0usize);
    for kind in KINDS {
        for seed in 0..10u64 {
            let model = Reimts::new(toy_config(&[48.0, 24.0], kind, 3, 4), seed).unwrap();
            let (a, q) = toy_example(100 + seed, 3, 20, 3);
            let prepared = model.prepare(&a, &q).unwrap();
            let pred = model.forward(&prepared).unwrap();
            let base = masked_mse_loss(&pred, &q).unwrap();
            let (loss, grad) = model.loss_and_prediction_grad(&prepared).unwrap();
            if loss.to_bits() != base.to_bits() {
                bad += 1;
            }
            let mut perturbed = pred.clone();
            for (j, m) in q.mask().iter().enumerate() {
                if !m {
                    checked += 1;
                    perturbed[j] += rng.random_range(-1e3..1e3);
                    bad += usize::from(grad[j] != 0.0);
                }
            }
            let after = masked_mse_loss(&perturbed, &q).unwrap();
            bad += usize::from(after.to_bits() != base.to_bits());
        }
    }
    if bad == 0 && checked > 0 {
        Ok(format!("{checked} masked positions: loss change exactly 0, gradient exactly 0"))
    } else {
        Err(format!("{bad} violations over {checked} masked positions"))
    }
}

// ---- benchmark ----

fn benchmark_data() -> Dataset {
    let spec = Preset::Benchmark.spec(BENCH_DATA_SEED);
    let corpus = generate(&spec).unwrap();
    let manifest = Manifest::build("benchmark", "tuples.csv".into(), &corpus, spec.horizon_span, "hours", BENCH_DATA_SEED)
        .unwrap();
    window_and_normalize(&corpus, &manifest).unwrap()
}

const BENCH_DATA_SEED: u64 = 7;

fn bench_train() -> TrainConfig {
    TrainConfig {
        seeds: BENCH_SEEDS.to_vec(),
        lr_schedule: LrSchedule::Constant,
        ..TrainConfig::default()
    }
}

fn bench_config(levels: &[f64], ablation: Ablation, v: usize) -> ReimtsConfig {
    let mut c = toy_config(levels, BackboneKind::Temporal, v, 16);
    c.ablation = ablation;
    c
}

/// Per-seed scores of one benchmark configuration.
#[derive(Clone)]
struct BenchRuns {
    test: Vec<f64>,
    val: Vec<f64>,
    elapsed: Duration,
}

impl BenchRuns {
    fn test_mean(&self) -> f64 {
        mean(&self.test)
    }

    fn val_mean(&self) -> f64 {
        mean(&self.val)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn bench_runs(data: &Dataset, config: &ReimtsConfig) -> BenchRuns {
    let start = Instant::now();
    let train = bench_train();
    let (mut test, mut val) = (Vec::new(), Vec::new());
    for &seed in &train.seeds {
        let out = fit(config, data, &train, seed).unwrap();
        test.push(evaluate(&out.checkpoint.model().unwrap(), &data.test, "test").unwrap().mse);
        val.push(out.checkpoint.val_loss);
    }
    BenchRuns { test, val, elapsed: start.elapsed() }
}

struct Bench {
    data: Dataset,
    n2: Option<BenchRuns>,
}

impl Bench {
    fn new() -> Self {
        Bench { data: benchmark_data(), n2: None }
    }

    fn n2(&mut self) -> BenchRuns {
        if self.n2.is_none() {
            let v = self.data.num_variables;
            self.n2 = Some(bench_runs(&self.data, &bench_config(&[48.0, 24.0], Ablation::Full, v)));
        }
        self.n2.clone().unwrap()
    }
}

fn fmt_runs(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
}

fn multiscale_benefit(bench: &mut Bench) -> Outcome {
    let v = bench.data.num_variables;
    let one = bench_runs(&bench.data, &bench_config(&[48.0], Ablation::Full, v));
    let two = bench.n2();
    let gain = (one.test_mean() - two.test_mean()) / one.test_mean();
    let total = one.elapsed + two.elapsed;
    let detail = format!(
        "test MSE N=1 {:.4} [{}], N=2 {:.4} [{}], gain {:.1}% (need {:.0}%), {total:.0?} for 10 runs",
        one.test_mean(),
        fmt_runs(&one.test),
        two.test_mean(),
        fmt_runs(&two.test),
        100.0 * gain,
        100.0 * BENCH_MIN_GAIN
    );
    if gain >= BENCH_MIN_GAIN && total < BENCH_BUDGET {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ablation_ordering(bench: &mut Bench) -> Outcome {
    let v = bench.data.num_variables;
    let full = bench.n2();
    let split = bench_runs(&bench.data, &bench_config(&[48.0, 24.0], Ablation::RpSplit, v));
    let detail = format!(
        "test MSE full {:.4} [{}], rp_split {:.4} [{}]; val MSE full {:.4}, rp_split {:.4}",
        full.test_mean(),
        fmt_runs(&full.test),
        split.test_mean(),
        fmt_runs(&split.test),
        full.val_mean(),
        split.val_mean()
    );
    if full.test_mean() <= split.test_mean() {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- command line ----

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_reimts"))
        .args(args)
        .env("REIMTS_DETERMINISTIC", "1")
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "reimts {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn read_results(path: &Path) -> Result<Vec<serde_json::Value>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect()
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let out = dir.path().join("run");
    let (data_s, out_s) = (data.to_str().unwrap(), out.to_str().unwrap());
    cli(&["generate", "--preset", "benchmark", "--num-samples", "120", "--seed", "3", "--out", data_s])?;
    let manifest = data.join("manifest.txt");
    let args = [
        "train", "--data", manifest.to_str().unwrap(), "--levels", "48,24", "--backbone", "temporal", "--seeds",
        "2024..2025", "--max-epochs", "4", "--patience", "2", "--out", out_s,
    ];
    cli(&args)?;
    let mut first = read_results(&out.join("results.jsonl"))?;
    let raw_first = std::fs::read_to_string(out.join("results.jsonl")).unwrap();
    cli(&args)?;
    let mut second = read_results(&out.join("results.jsonl"))?;
    let raw_second = std::fs::read_to_string(out.join("results.jsonl")).unwrap();
    first.iter_mut().for_each(strip_timing);
    second.iter_mut().for_each(strip_timing);
    let records = first.len();
    if first == second && records == 3 {
        let same_bytes = if raw_first == raw_second { "byte-identical" } else { "identical" };
        Ok(format!("{records} records {same_bytes} after removing wall-clock fields"))
    } else {
        Err(format!("results differ ({} vs {} records)", first.len(), second.len()))
    }
}

fn sweep_plumbing() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let out = dir.path().join("sweep");
    cli(&["generate", "--preset", "sweep", "--seed", "11", "--out", data.to_str().unwrap()])?;
    let start = Instant::now();
    cli(&[
        "sweep", "--data", data.join("manifest.txt").to_str().unwrap(), "--levels", "48", "--scale-levels", "2,3,4",
        "--periods", SWEEP_PERIODS, "--seeds", SWEEP_SEEDS, "--lr-schedule", "constant", "--max-epochs",
        SWEEP_EPOCHS, "--patience", "10", "--out", out.to_str().unwrap(),
    ])?;
    let secs = start.elapsed();
    let table = std::fs::read_to_string(out.join("sweep.md")).map_err(|e| e.to_string())?;
    let rows: Vec<&str> = table.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Scale")).collect();
    let records = read_results(&out.join("results.jsonl"))?;
    let sweep = records.iter().find(|r| r["record"] == "sweep").ok_or("no sweep record")?;
    let best_two = sweep["best_period_by_levels"]
        .as_array()
        .and_then(|a| a.iter().find(|b| b["levels"] == 2))
        .and_then(|b| b["second_period"].as_f64())
        .ok_or("no best period for two levels")?;
    let cells: Vec<String> = sweep["cells"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["levels"] == 2)
        .map(|c| format!("{}: {:.4}", c["second_period"], c["aggregate"]["test_mse_mean"].as_f64().unwrap()))
        .collect();
    let detail = format!(
        "{} report rows, N=2 best period {best_two} (half span 24) [{}], {secs:.0?}",
        rows.len(),
        cells.join(", ")
    );
    if rows.len() == 3 && best_two == 24.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const SWEEP_PERIODS: &str = "24,16,12,8";
const SWEEP_SEEDS: &str = "1..3";
const SWEEP_EPOCHS: &str = "60";

// ---------------------------------------------------------------- runner

fn main() {
    let only = std::env::var("REIMTS_ACCEPTANCE_ONLY").ok();
    let mut bench: Option<Bench> = None;
    let mut failed = 0;
    let mut ran = 0;
    let criteria: Vec<(&str, Box<dyn FnMut(&mut Option<Bench>) -> Outcome>)> = vec![
        ("split-oracle equivalence", Box::new(|_| split_oracle())),
        ("sampling-pattern preservation", Box::new(|_| sampling_pattern())),
        ("fusion neutrality", Box::new(|_| fusion_neutrality())),
        ("gradient correctness", Box::new(|_| gradient_correctness())),
        ("loss masking", Box::new(|_| loss_masking())),
        (
            "directional multi-scale benefit",
            Box::new(|b| multiscale_benefit(b.get_or_insert_with(Bench::new))),
        ),
        (
            "ablation ordering",
            Box::new(|b| ablation_ordering(b.get_or_insert_with(Bench::new))),
        ),
        ("determinism", Box::new(|_| cli_determinism())),
        ("sweep plumbing", Box::new(|_| sweep_plumbing())),
    ];
    for (name, mut check) in criteria {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        ran += 1;
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| check(&mut bench)))
            .unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    // a plain report by default, so the remaining test targets still run
    if failed > 0 && std::env::var_os("REIMTS_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
