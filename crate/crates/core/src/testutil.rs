//! Small fixtures shared by unit tests.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::{Gradients, ParamStore};
use crate::types::{align_and_pad, AlignedSample, ForecastQuery, ObservationTuple, RawSample};

/// Level-1 grid from `(t, value, variable)` triples over a 48-unit span.
pub fn aligned(obs: &[(f64, f64, usize)], num_variables: usize) -> AlignedSample {
    let obs = obs.iter().map(|&(t, z, v)| ObservationTuple::new(t, z, v)).collect();
    align_and_pad(&RawSample::new("toy", obs, 48.0, num_variables).unwrap()).unwrap()
}

/// Random observations, each variable seen at least once.
pub fn random_sample(seed: u64, count: usize, num_variables: usize) -> AlignedSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs: Vec<(f64, f64, usize)> = Vec::new();
    let mut used = alloc::collections::BTreeSet::new();
    for j in 0..count.max(num_variables) {
        let v = if j < num_variables { j } else { rng.random_range(0..num_variables) };
        let t = loop {
            let t = (rng.random_range(0..=144u32) as f64) * 0.25;
            if used.insert((v, t.to_bits())) {
                break t;
            }
        };
        obs.push((t, rng.random_range(-2.0..2.0), v));
    }
    aligned(&obs, num_variables)
}

/// `slots × V` queries in `(36, 48]`, every one masked in except the last.
pub fn query(slots: usize, num_variables: usize, seed: u64) -> ForecastQuery {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = slots * num_variables;
    let ts = (0..n).map(|j| 37.0 + (j / num_variables) as f64 * 3.0).collect();
    let mut mask: Vec<bool> = (0..n).map(|_| true).collect();
    if n > 1 {
        mask[n - 1] = false;
    }
    let truth = mask
        .iter()
        .map(|&m| if m { rng.random_range(-1.0..1.0) } else { 0.0 })
        .collect();
    ForecastQuery::new(36.0, 12.0, num_variables, ts, mask, Some(truth)).unwrap()
}

/// Worst relative error between `analytic` and central differences of `f`
/// over every parameter, with errors measured against the larger of the two
/// magnitudes floored at `floor`.
pub fn gradient_error(
    store: &ParamStore,
    analytic: &Gradients,
    h: f64,
    floor: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = store.clone();
    for (pi, p) in store.params().iter().enumerate() {
        for j in 0..p.data.len() {
            let orig = p.data[j];
            probe.params_mut()[pi].data[j] = orig + h;
            let up = f(&probe);
            probe.params_mut()[pi].data[j] = orig - h;
            let down = f(&probe);
            probe.params_mut()[pi].data[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data[pi][j];
            let scale = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}
