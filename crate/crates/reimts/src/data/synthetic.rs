//! Synthetic IMTS with controllable multi-scale structure.
//!
//! Each variable is observed at times drawn from an inhomogeneous Poisson
//! process whose rate decays geometrically over the span (dense early, sparse
//! late), snapped to a fixed time resolution. Values are a per-sample sum of
//! seasonal components with random phase and gain, an optional level shift
//! between the two halves of the span, a coupling to the next variable, and
//! Gaussian noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use reimts_core::{ObservationTuple, RawSample};
use serde::{Deserialize, Serialize};

use super::{Corpus, DataError, Result};

/// Attempts per sample before generation gives up on it.
const MAX_ATTEMPTS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeasonalComponent {
    pub period: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub name: String,
    pub num_samples: usize,
    pub num_variables: usize,
    pub lookback_span: f64,
    pub horizon_span: f64,
    /// Expected observations per time unit of each variable at `t = 0`.
    pub base_rates: Vec<f64>,
    /// Rate at the end of the span relative to the rate at the start.
    pub decay: f64,
    /// Timestamps are multiples of this step.
    pub resolution: f64,
    pub components: Vec<SeasonalComponent>,
    /// Standard deviation of the level of each half of the span.
    pub regime_shift: f64,
    pub coupling: f64,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 36 variables, 48 time units, about 308.6 observations per sample.
    PhysioLike,
    /// 8 variables, 600 samples, seasonal periods of 24 and 12 on a 48-unit span.
    Benchmark,
    /// Strong half-span structure: a 24-unit period and a level shift at 24.
    Sweep,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Self::PhysioLike, Self::Benchmark, Self::Sweep];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PhysioLike => "physio-like",
            Self::Benchmark => "benchmark",
            Self::Sweep => "sweep",
        }
    }

    /// Expected observations per sample.
    pub fn target_observations(self) -> f64 {
        match self {
            Self::PhysioLike => 308.6,
            // before deduplication on the hourly grid; about 147 survive
            Self::Benchmark => 200.0,
            Self::Sweep => 100.0,
        }
    }

    pub fn spec(self, seed: u64) -> SyntheticSpec {
        match self {
            Self::PhysioLike => {
                let s = SyntheticSpec {
                    name: self.as_str().into(),
                    num_samples: 1200,
                    num_variables: 36,
                    lookback_span: 36.0,
                    horizon_span: 12.0,
                    base_rates: Vec::new(),
                    decay: 0.5,
                    resolution: 1.0 / 60.0,
                    components: vec![
                        SeasonalComponent { period: 24.0, amplitude: 1.0 },
                        SeasonalComponent { period: 12.0, amplitude: 0.5 },
                    ],
                    regime_shift: 0.3,
                    coupling: 0.3,
                    noise: 0.1,
                    seed,
                };
                s.with_observation_target(self.target_observations())
            }
            Self::Benchmark => {
                let s = SyntheticSpec {
                    name: self.as_str().into(),
                    num_samples: 600,
                    num_variables: 8,
                    lookback_span: 36.0,
                    horizon_span: 12.0,
                    base_rates: Vec::new(),
                    decay: 0.5,
                    resolution: 1.0,
                    components: vec![
                        SeasonalComponent { period: 24.0, amplitude: 1.0 },
                        SeasonalComponent { period: 12.0, amplitude: 0.5 },
                    ],
                    regime_shift: 1.0,
                    coupling: 0.3,
                    noise: 0.1,
                    seed,
                };
                s.with_observation_target(self.target_observations())
            }
            Self::Sweep => {
                let s = SyntheticSpec {
                    name: self.as_str().into(),
                    num_samples: 400,
                    num_variables: 4,
                    lookback_span: 36.0,
                    horizon_span: 12.0,
                    base_rates: Vec::new(),
                    decay: 0.5,
                    resolution: 1.0,
                    components: vec![SeasonalComponent { period: 24.0, amplitude: 1.0 }],
                    regime_shift: 1.0,
                    coupling: 0.0,
                    noise: 0.1,
                    seed,
                };
                s.with_observation_target(self.target_observations())
            }
        }
    }
}

/// Relative sampling rates spread between 0.25 and 2, so some variables are
/// dense and some sparse.
fn heterogeneous_weights(num_variables: usize) -> Vec<f64> {
    (0..num_variables)
        .map(|v| 0.25 + 1.75 * ((v * 7) % num_variables) as f64 / num_variables.max(2).saturating_sub(1) as f64)
        .collect()
}

/// Per-sample latent parameters. `latent(v, t)` is the noise-free,
/// coupling-free signal of variable `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleProfile {
    offsets: Vec<f64>,
    /// `[v][component]` gain and phase.
    gains: Vec<Vec<f64>>,
    phases: Vec<Vec<f64>>,
    /// Level of the first and second half of the span, per variable.
    regimes: Vec<[f64; 2]>,
    components: Vec<SeasonalComponent>,
    midpoint: f64,
}

impl SampleProfile {
    pub fn latent(&self, variable: usize, t: f64) -> f64 {
        let seasonal: f64 = self
            .components
            .iter()
            .enumerate()
            .map(|(c, comp)| {
                comp.amplitude * self.gains[variable][c] * (2.0 * PI * t / comp.period + self.phases[variable][c]).sin()
            })
            .sum();
        let half = usize::from(t > self.midpoint);
        self.offsets[variable] + seasonal + self.regimes[variable][half]
    }

    /// Expected observed value: the latent signal plus the coupled neighbour.
    pub fn mean(&self, variable: usize, t: f64, coupling: f64) -> f64 {
        let next = (variable + 1) % self.offsets.len();
        let coupled = if coupling == 0.0 { 0.0 } else { coupling * self.latent(next, t) };
        self.latent(variable, t) + coupled
    }
}

#[derive(Clone, Copy)]
enum Stream {
    Profile = 1,
    Times = 2,
    Noise = 3,
}

impl SyntheticSpec {
    pub fn total_span(&self) -> f64 {
        self.lookback_span + self.horizon_span
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::Invalid(m));
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if self.num_samples == 0 {
            return bad("num_samples must be positive".into());
        }
        if self.num_variables == 0 {
            return bad("num_variables must be positive".into());
        }
        if !positive(self.lookback_span) || !positive(self.horizon_span) {
            return bad("lookback and horizon spans must be positive".into());
        }
        if self.base_rates.len() != self.num_variables {
            return bad(format!(
                "{} base rates for {} variables",
                self.base_rates.len(),
                self.num_variables
            ));
        }
        if !self.base_rates.iter().all(|r| positive(*r)) {
            return bad("base rates must be positive".into());
        }
        if !positive(self.decay) {
            return bad("decay factor must be positive".into());
        }
        if !positive(self.resolution) || self.resolution > self.horizon_span {
            return bad("resolution must be positive and no larger than the horizon".into());
        }
        for c in &self.components {
            if !positive(c.period) || !(c.amplitude.is_finite() && c.amplitude >= 0.0) {
                return bad("seasonal periods must be positive and amplitudes non-negative".into());
            }
        }
        for (name, x) in [("regime shift", self.regime_shift), ("noise", self.noise)] {
            if !(x.is_finite() && x >= 0.0) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if !self.coupling.is_finite() {
            return bad("coupling must be finite".into());
        }
        Ok(())
    }

    /// Sampling rate of variable `v` at time `t`.
    pub fn rate(&self, variable: usize, t: f64) -> f64 {
        self.base_rates[variable] * self.decay.powf(t / self.total_span())
    }

    /// Expected number of arrivals of a unit base rate over the span.
    fn unit_expected_count(&self) -> f64 {
        let span = self.total_span();
        if (self.decay - 1.0).abs() < 1e-12 {
            span
        } else {
            span * (self.decay - 1.0) / self.decay.ln()
        }
    }

    /// Expected observations per sample (before snapping to the resolution).
    pub fn expected_observations(&self) -> f64 {
        self.base_rates.iter().sum::<f64>() * self.unit_expected_count()
    }

    /// Base rates proportional to `weights` with `target` expected
    /// observations per sample.
    pub fn calibrated_rates(&self, weights: &[f64], target: f64) -> Vec<f64> {
        let scale = target / (weights.iter().sum::<f64>() * self.unit_expected_count());
        weights.iter().map(|w| w * scale).collect()
    }

    /// Replaces the base rates with dense-to-sparse spread rates giving
    /// `target` expected observations per sample.
    pub fn with_observation_target(mut self, target: f64) -> Self {
        self.base_rates = self.calibrated_rates(&heterogeneous_weights(self.num_variables), target);
        self
    }

    fn rng(&self, sample: usize, attempt: u32, stream: Stream) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.seed.to_le_bytes());
        seed[8..16].copy_from_slice(&(sample as u64).to_le_bytes());
        seed[16..20].copy_from_slice(&attempt.to_le_bytes());
        seed[20] = stream as u8;
        ChaCha8Rng::from_seed(seed)
    }

    /// Latent parameters of sample `index`, independent of retries.
    pub fn profile(&self, index: usize) -> SampleProfile {
        let mut rng = self.rng(index, 0, Stream::Profile);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let v_count = self.num_variables;
        let c_count = self.components.len();
        let offsets = (0..v_count).map(|_| 0.5 * std_normal.sample(&mut rng)).collect();
        let gains = (0..v_count)
            .map(|_| (0..c_count).map(|_| rng.random_range(0.5..1.5)).collect())
            .collect();
        let phases = (0..v_count)
            .map(|_| (0..c_count).map(|_| rng.random_range(0.0..2.0 * PI)).collect())
            .collect();
        let regimes = (0..v_count)
            .map(|_| {
                [
                    self.regime_shift * std_normal.sample(&mut rng),
                    self.regime_shift * std_normal.sample(&mut rng),
                ]
            })
            .collect();
        SampleProfile {
            offsets,
            gains,
            phases,
            regimes,
            components: self.components.clone(),
            midpoint: self.total_span() / 2.0,
        }
    }

    /// Arrival times of one variable by thinning a homogeneous process at
    /// the peak rate, snapped up to the resolution grid and deduplicated.
    fn arrival_times(&self, variable: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let span = self.total_span();
        let peak = self.rate(variable, 0.0).max(self.rate(variable, span));
        let gaps = Exp::new(peak).expect("positive rate");
        let steps = (span / self.resolution).round() as u64;
        let mut ticks = Vec::new();
        let mut t = 0.0;
        loop {
            t += gaps.sample(rng);
            if t > span {
                break;
            }
            if rng.random::<f64>() * peak <= self.rate(variable, t) {
                let tick = ((t / self.resolution).ceil() as u64).clamp(1, steps);
                if ticks.last() != Some(&tick) {
                    ticks.push(tick);
                }
            }
        }
        ticks.into_iter().map(|k| k as f64 * self.resolution).collect()
    }

    fn sample_attempt(&self, index: usize, attempt: u32, profile: &SampleProfile) -> Vec<ObservationTuple> {
        let mut times_rng = self.rng(index, attempt, Stream::Times);
        let mut noise_rng = self.rng(index, attempt, Stream::Noise);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut out = Vec::new();
        for v in 0..self.num_variables {
            for t in self.arrival_times(v, &mut times_rng) {
                let eps = std_normal.sample(&mut noise_rng);
                let z = profile.mean(v, t, self.coupling) + self.noise * eps;
                out.push(ObservationTuple::new(t, z, v));
            }
        }
        out
    }

    /// Sample `index`, retried with a fresh sub-seed while it comes out empty.
    pub fn sample(&self, index: usize) -> Result<RawSample> {
        let profile = self.profile(index);
        let id = format!("s{index:05}");
        for attempt in 0..MAX_ATTEMPTS {
            let obs = self.sample_attempt(index, attempt, &profile);
            if !obs.is_empty() {
                return Ok(RawSample::new(id, obs, self.total_span(), self.num_variables)?);
            }
        }
        Err(DataError::Invalid(format!(
            "sample {id} has no observations after {MAX_ATTEMPTS} attempts; raise the sampling rates"
        )))
    }
}

/// Generates the corpus of `spec`; identical specs give identical corpora.
pub fn generate(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let samples = (0..spec.num_samples)
        .into_par_iter()
        .map(|j| spec.sample(j))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        num_variables: spec.num_variables,
        total_span: spec.total_span(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn physio_preset_is_calibrated() {
        let mut spec = Preset::PhysioLike.spec(7);
        spec.num_samples = 300;
        let corpus = generate(&spec).unwrap();
        let mean = corpus.mean_observations();
        assert!((mean - 308.6).abs() / 308.6 < 0.05, "mean observations {mean}");
    }

    #[test]
    fn homogeneous_rate_balances_halves() {
        let mut spec = Preset::Benchmark.spec(3);
        spec.decay = 1.0;
        spec.resolution = 0.01;
        spec.num_samples = 200;
        let corpus = generate(&spec).unwrap();
        let (mut first, mut total) = (0usize, 0usize);
        for s in &corpus.samples {
            for o in s.observations() {
                total += 1;
                first += usize::from(o.timestamp <= 24.0);
            }
        }
        // binomial(total, 1/2): five standard deviations
        let tol = 5.0 * (total as f64 * 0.25).sqrt();
        assert!((first as f64 - total as f64 / 2.0).abs() < tol, "{first} of {total}");
    }

    #[test]
    fn decay_thins_the_second_half() {
        let mut spec = Preset::Benchmark.spec(3);
        spec.decay = 0.25;
        spec.resolution = 0.01;
        spec.num_samples = 200;
        let corpus = generate(&spec).unwrap();
        let obs = corpus.samples.iter().flat_map(|s| s.observations());
        let first = obs.clone().filter(|o| o.timestamp <= 24.0).count();
        let second = obs.filter(|o| o.timestamp > 24.0).count();
        // expected ratio is 2 for a decay of 1/4
        let ratio = first as f64 / second as f64;
        assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn noiseless_values_follow_closed_form() {
        let mut spec = Preset::Benchmark.spec(11);
        spec.noise = 0.0;
        spec.coupling = 0.0;
        spec.num_samples = 20;
        let corpus = generate(&spec).unwrap();
        for (j, s) in corpus.samples.iter().enumerate() {
            let p = spec.profile(j);
            for o in s.observations() {
                assert!((o.value - p.latent(o.variable, o.timestamp)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_and_on_grid() {
        let mut spec = Preset::Sweep.spec(5);
        spec.num_samples = 30;
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        for s in &a.samples {
            for o in s.observations() {
                let k = o.timestamp / spec.resolution;
                assert_eq!(k, k.round());
                assert!(o.timestamp > 0.0 && o.timestamp <= spec.total_span());
            }
        }
        spec.seed = 6;
        assert_ne!(a, generate(&spec).unwrap());
    }

    #[test]
    fn sparse_samples_are_retried_or_rejected() {
        let mut spec = Preset::Sweep.spec(1);
        spec.num_samples = 50;
        spec.base_rates = vec![0.01; 4];
        // about a quarter of all samples are empty on the first draw
        assert!(generate(&spec).unwrap().samples.iter().all(|s| !s.observations().is_empty()));
        spec.base_rates = vec![1e-9; 4];
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let good = Preset::Benchmark.spec(0);
        let mut s = good.clone();
        s.num_variables = 0;
        assert!(s.validate().is_err());
        let mut s = good.clone();
        s.decay = 0.0;
        assert!(s.validate().is_err());
        let mut s = good.clone();
        s.components[0].period = -1.0;
        assert!(s.validate().is_err());
        let mut s = good;
        s.base_rates.pop();
        assert!(s.validate().is_err());
    }

    #[test]
    fn presets_parse() {
        for p in Preset::ALL {
            assert_eq!(Preset::parse(p.as_str()), Some(p));
            p.spec(0).validate().unwrap();
        }
        assert_eq!(Preset::parse("nope"), None);
    }
}
