//! Lookback/horizon windowing with z-score normalisation.
//!
//! Observations at `t ≤ lookback` form the model input; the horizon
//! `(lookback, lookback + horizon]` supplies the forecast targets: the
//! [`QUERY_SLOTS`] earliest distinct horizon timestamps, each asked for every
//! variable and masked in where that variable was actually observed.
//! Timestamps are copied as they are.

use std::collections::BTreeSet;

use reimts_core::{align_and_pad, AlignedSample, ForecastQuery, ObservationTuple, RawSample};

use super::{Corpus, DataError, Manifest, NormStats, Result, Split};

/// Forecast timestamps per sample.
pub const QUERY_SLOTS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    /// Normalised lookback window at level 1.
    pub aligned: AlignedSample,
    /// Queries with normalised truth.
    pub query: ForecastQuery,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_variables: usize,
    pub lookback_span: f64,
    pub horizon_span: f64,
    pub norm: NormStats,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    /// Samples without lookback observations or without horizon targets.
    pub dropped: usize,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Maps a normalised `L_Q × V` grid back to raw units.
    pub fn denormalize(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter()
            .enumerate()
            .map(|(r, x)| self.norm.denormalize(r % self.num_variables, *x))
            .collect()
    }
}

/// Windows one sample, or `None` when either window is empty.
pub fn window_sample(
    raw: &RawSample,
    lookback_span: f64,
    horizon_span: f64,
    norm: &NormStats,
) -> Result<Option<Example>> {
    let v_count = raw.num_variables();
    let (lookback, horizon): (Vec<ObservationTuple>, Vec<ObservationTuple>) =
        raw.observations().iter().partition(|o| o.timestamp <= lookback_span);
    let lookback: Vec<ObservationTuple> = lookback
        .into_iter()
        .map(|o| ObservationTuple::new(o.timestamp, norm.normalize(o.variable, o.value), o.variable))
        .collect();
    let horizon: Vec<&ObservationTuple> = horizon
        .iter()
        .filter(|o| o.timestamp <= lookback_span + horizon_span)
        .collect();
    if lookback.is_empty() || horizon.is_empty() {
        return Ok(None);
    }
    let mut distinct: Vec<f64> = horizon
        .iter()
        .map(|o| o.timestamp.to_bits())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(f64::from_bits)
        .collect();
    // non-negative floats order like their bit patterns
    distinct.truncate(QUERY_SLOTS);
    let filler = *distinct.last().expect("non-empty horizon");
    let mut timestamps = vec![filler; QUERY_SLOTS * v_count];
    let mut mask = vec![false; QUERY_SLOTS * v_count];
    let mut truth = vec![0.0; QUERY_SLOTS * v_count];
    for (j, &t) in distinct.iter().enumerate() {
        timestamps[j * v_count..(j + 1) * v_count].fill(t);
    }
    for o in &horizon {
        if let Some(j) = distinct.iter().position(|&t| t == o.timestamp) {
            let r = j * v_count + o.variable;
            mask[r] = true;
            truth[r] = norm.normalize(o.variable, o.value);
        }
    }
    let query = ForecastQuery::new(lookback_span, horizon_span, v_count, timestamps, mask, Some(truth))?;
    let window = RawSample::new(raw.id(), lookback, lookback_span, v_count)?;
    Ok(Some(Example {
        id: raw.id().to_string(),
        aligned: align_and_pad(&window)?,
        query,
    }))
}

/// Windows and normalises every sample with the manifest's training
/// statistics, grouped by split.
pub fn window_and_normalize(corpus: &Corpus, manifest: &Manifest) -> Result<Dataset> {
    if corpus.num_variables != manifest.num_variables {
        return Err(DataError::Invalid(format!(
            "corpus has {} variables, manifest {}",
            corpus.num_variables, manifest.num_variables
        )));
    }
    let lookback = manifest.lookback_span();
    let mut out = Dataset {
        num_variables: manifest.num_variables,
        lookback_span: lookback,
        horizon_span: manifest.horizon_span,
        norm: manifest.norm.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        dropped: 0,
    };
    for raw in &corpus.samples {
        let split = manifest
            .split_of(raw.id())
            .ok_or_else(|| DataError::Invalid(format!("sample {} has no split in the manifest", raw.id())))?;
        match window_sample(raw, lookback, manifest.horizon_span, &manifest.norm)? {
            Some(ex) => match split {
                Split::Train => out.train.push(ex),
                Split::Val => out.val.push(ex),
                Split::Test => out.test.push(ex),
            },
            None => out.dropped += 1,
        }
    }
    if out.dropped > 0 {
        log::info!("{} samples dropped for an empty lookback or horizon", out.dropped);
    }
    Ok(out)
}
