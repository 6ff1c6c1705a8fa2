//! Dataset manifests: `key=value` lines naming the tuple file, the dataset
//! geometry, the split of every sample, and the normalisation statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reimts_core::RawSample;

use super::{write_atomic, Corpus, DataError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Self::Train),
            "val" => Some(Self::Val),
            "test" => Some(Self::Test),
            _ => None,
        }
    }
}

/// Seeded 8:1:1 assignment.
pub fn assign_splits<'a>(ids: impl IntoIterator<Item = &'a str>, seed: u64) -> BTreeMap<String, Split> {
    let mut ids: Vec<&str> = ids.into_iter().collect();
    let n = ids.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = (n as f64 * 0.8).round() as usize;
    let n_val = (n as f64 * 0.1).round() as usize;
    ids.into_iter()
        .enumerate()
        .map(|(j, id)| {
            let split = if j < n_train {
                Split::Train
            } else if j < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (id.to_string(), split)
        })
        .collect()
}

/// Per-variable z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(num_variables: usize) -> Self {
        Self {
            mean: vec![0.0; num_variables],
            std: vec![1.0; num_variables],
        }
    }

    /// Mean and population standard deviation of every variable over
    /// `samples`. A spread below `1e-12` (or a variable never observed) is
    /// clamped to 1.
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a RawSample>, num_variables: usize) -> Self {
        let mut count = vec![0usize; num_variables];
        let mut sum = vec![0.0; num_variables];
        let samples: Vec<&RawSample> = samples.into_iter().collect();
        for s in &samples {
            for o in s.observations() {
                count[o.variable] += 1;
                sum[o.variable] += o.value;
            }
        }
        let mean: Vec<f64> = sum
            .iter()
            .zip(&count)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        let mut sq = vec![0.0; num_variables];
        for s in &samples {
            for o in s.observations() {
                let d = o.value - mean[o.variable];
                sq[o.variable] += d * d;
            }
        }
        let std = (0..num_variables)
            .map(|v| {
                let sd = if count[v] == 0 { 0.0 } else { (sq[v] / count[v] as f64).sqrt() };
                if sd < 1e-12 {
                    log::warn!("variable {v} has no spread on the training split; std clamped to 1");
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn normalize(&self, variable: usize, value: f64) -> f64 {
        (value - self.mean[variable]) / self.std[variable]
    }

    pub fn denormalize(&self, variable: usize, value: f64) -> f64 {
        value * self.std[variable] + self.mean[variable]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub name: String,
    /// Tuple file, relative to the manifest's directory unless absolute.
    pub tuples: PathBuf,
    pub num_variables: usize,
    pub total_span: f64,
    pub horizon_span: f64,
    pub unit: String,
    pub splits: BTreeMap<String, Split>,
    pub norm: NormStats,
    /// Free-form provenance, written as `meta.<key>=<value>`.
    pub meta: BTreeMap<String, String>,
}

impl Manifest {
    /// Assigns splits and fits normalisation on the training samples only.
    pub fn build(
        name: &str,
        tuples: PathBuf,
        corpus: &Corpus,
        horizon_span: f64,
        unit: &str,
        split_seed: u64,
    ) -> Result<Self> {
        if !(horizon_span > 0.0 && horizon_span < corpus.total_span) {
            return Err(DataError::Invalid(format!(
                "horizon {horizon_span} must lie inside the span {}",
                corpus.total_span
            )));
        }
        let splits = assign_splits(corpus.samples.iter().map(|s| s.id()), split_seed);
        let norm = NormStats::fit(
            corpus.samples.iter().filter(|s| splits.get(s.id()) == Some(&Split::Train)),
            corpus.num_variables,
        );
        Ok(Self {
            name: name.to_string(),
            tuples,
            num_variables: corpus.num_variables,
            total_span: corpus.total_span,
            horizon_span,
            unit: unit.to_string(),
            splits,
            norm,
            meta: BTreeMap::new(),
        })
    }

    pub fn lookback_span(&self) -> f64 {
        self.total_span - self.horizon_span
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.splits.get(id).copied()
    }

    pub fn tuples_path(&self, manifest_path: &Path) -> PathBuf {
        if self.tuples.is_absolute() {
            self.tuples.clone()
        } else {
            manifest_path.parent().unwrap_or(Path::new("")).join(&self.tuples)
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "name={}", self.name);
        let _ = writeln!(out, "tuples={}", self.tuples.display());
        let _ = writeln!(out, "num_variables={}", self.num_variables);
        let _ = writeln!(out, "total_span={}", self.total_span);
        let _ = writeln!(out, "horizon_span={}", self.horizon_span);
        let _ = writeln!(out, "unit={}", self.unit);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta.{k}={v}");
        }
        for v in 0..self.num_variables {
            let _ = writeln!(out, "norm.{v}.mean={}", self.norm.mean[v]);
            let _ = writeln!(out, "norm.{v}.std={}", self.norm.std[v]);
        }
        for (id, split) in &self.splits {
            let _ = writeln!(out, "split.{id}={}", split.as_str());
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, reason: String| DataError::Malformed {
            path: path.into(),
            line: line as u64 + 1,
            reason,
        };
        let mut fields = BTreeMap::new();
        let mut splits = BTreeMap::new();
        let mut meta = BTreeMap::new();
        let mut norm: BTreeMap<(usize, bool), f64> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(n, "expected key=value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(id) = key.strip_prefix("split.") {
                let split = Split::parse(value).ok_or_else(|| bad(n, format!("unknown split {value}")))?;
                splits.insert(id.to_string(), split);
            } else if let Some(k) = key.strip_prefix("meta.") {
                meta.insert(k.to_string(), value.to_string());
            } else if let Some(rest) = key.strip_prefix("norm.") {
                let (var, stat) = rest
                    .split_once('.')
                    .ok_or_else(|| bad(n, format!("bad key {key}")))?;
                let var: usize = var.parse().map_err(|_| bad(n, format!("bad variable in {key}")))?;
                let is_mean = match stat {
                    "mean" => true,
                    "std" => false,
                    _ => return Err(bad(n, format!("bad key {key}"))),
                };
                let x: f64 = value.parse().map_err(|_| bad(n, format!("bad number {value}")))?;
                norm.insert((var, is_mean), x);
            } else {
                fields.insert(key.to_string(), (n, value.to_string()));
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| DataError::Invalid(format!("{}: missing key {k}", path.display())))
        };
        let num = |k: &str| -> Result<f64> {
            let v = get(k)?;
            v.parse()
                .map_err(|_| bad(fields[k].0, format!("{k} is not a number: {v}")))
        };
        let num_variables: usize = get("num_variables")?
            .parse()
            .map_err(|_| bad(fields["num_variables"].0, "num_variables is not an integer".into()))?;
        if num_variables == 0 {
            return Err(DataError::Invalid(format!("{}: num_variables must be positive", path.display())));
        }
        let mut stats = NormStats::identity(num_variables);
        for ((v, is_mean), x) in norm {
            if v >= num_variables {
                return Err(DataError::Invalid(format!("{}: norm stats for unknown variable {v}", path.display())));
            }
            if is_mean {
                stats.mean[v] = x;
            } else {
                stats.std[v] = x;
            }
        }
        Ok(Self {
            name: get("name")?,
            tuples: PathBuf::from(get("tuples")?),
            num_variables,
            total_span: num("total_span")?,
            horizon_span: num("horizon_span")?,
            unit: fields.get("unit").map(|(_, v)| v.clone()).unwrap_or_default(),
            splits,
            norm: stats,
            meta,
        })
    }
}
