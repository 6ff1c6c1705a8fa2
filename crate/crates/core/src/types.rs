//! Shared data model: observation tuples, aligned grids, scale stacks,
//! representations and forecast queries.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One sparse measurement `(t, z, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationTuple {
    pub timestamp: f64,
    pub value: f64,
    pub variable: usize,
}

impl ObservationTuple {
    pub fn new(timestamp: f64, value: f64, variable: usize) -> Self {
        Self {
            timestamp,
            value,
            variable,
        }
    }
}

/// A validated IMTS sample: a non-empty set of observations inside `(0, total_span]`
/// (timestamp 0 is admitted).
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    id: String,
    observations: Vec<ObservationTuple>,
    total_span: f64,
    num_variables: usize,
}

impl RawSample {
    pub fn new(
        id: impl Into<String>,
        observations: Vec<ObservationTuple>,
        total_span: f64,
        num_variables: usize,
    ) -> Result<Self> {
        let id = id.into();
        let invalid = |reason: String| Error::InvalidObservation {
            sample: id.clone(),
            reason,
        };
        if observations.is_empty() {
            return Err(Error::EmptySample { sample: id });
        }
        if !(total_span.is_finite() && total_span > 0.0) {
            return Err(invalid(format!("total span {total_span} is not positive")));
        }
        if num_variables == 0 {
            return Err(invalid("sample declares zero variables".to_string()));
        }
        for obs in &observations {
            if !obs.timestamp.is_finite() || obs.timestamp < 0.0 || obs.timestamp > total_span {
                return Err(invalid(format!(
                    "timestamp {} outside [0, {total_span}]",
                    obs.timestamp
                )));
            }
            if !obs.value.is_finite() {
                return Err(invalid(format!("non-finite value at t={}", obs.timestamp)));
            }
            if obs.variable >= num_variables {
                return Err(invalid(format!(
                    "variable id {} >= {num_variables}",
                    obs.variable
                )));
            }
        }
        let mut keys: Vec<(usize, f64)> = observations
            .iter()
            .map(|o| (o.variable, o.timestamp))
            .collect();
        keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateObservation {
                sample: id,
                timestamp: w[0].1,
                variable: w[0].0,
            });
        }
        Ok(Self {
            id,
            observations,
            total_span,
            num_variables,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn observations(&self) -> &[ObservationTuple] {
        &self.observations
    }

    pub fn total_span(&self) -> f64 {
        self.total_span
    }

    pub fn num_variables(&self) -> usize {
        self.num_variables
    }
}

/// Configured time periods `T¹ > T² > … > Tᴺ`.
///
/// Every period must divide the one above it, so the subsample count
/// `Pⁿ = T¹ / Tⁿ` is an integer and each level refines the previous one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScaleStack {
    periods: Vec<f64>,
    subsamples: Vec<usize>,
}

impl ScaleStack {
    pub fn new(periods: Vec<f64>) -> Result<Self> {
        if periods.is_empty() {
            return Err(Error::InvalidScaleStack("no periods".to_string()));
        }
        if let Some(p) = periods.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::InvalidScaleStack(format!("period {p} is not positive")));
        }
        let mut subsamples = Vec::with_capacity(periods.len());
        subsamples.push(1usize);
        for w in periods.windows(2) {
            let (upper, lower) = (w[0], w[1]);
            if lower >= upper {
                return Err(Error::InvalidScaleStack(format!(
                    "periods must strictly decrease ({upper} then {lower})"
                )));
            }
            let ratio = upper / lower;
            let rounded = libm::round(ratio);
            if libm::fabs(ratio - rounded) > 1e-9 * ratio {
                return Err(Error::InvalidScaleStack(format!(
                    "{lower} does not divide {upper}"
                )));
            }
            let last = *subsamples.last().unwrap();
            subsamples.push(last * rounded as usize);
        }
        Ok(Self {
            periods,
            subsamples,
        })
    }

    /// Number of scale levels `N`.
    pub fn levels(&self) -> usize {
        self.periods.len()
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    /// `T¹`, the span covered by level 1.
    pub fn total_span(&self) -> f64 {
        self.periods[0]
    }

    /// Period `Tⁿ` of 1-based level `n`.
    pub fn period(&self, level: usize) -> Result<f64> {
        self.check_level(level)?;
        Ok(self.periods[level - 1])
    }

    /// Subsample count `Pⁿ` of 1-based level `n`.
    pub fn subsamples(&self, level: usize) -> Result<usize> {
        self.check_level(level)?;
        Ok(self.subsamples[level - 1])
    }

    pub fn subsample_counts(&self) -> &[usize] {
        &self.subsamples
    }

    pub(crate) fn check_level(&self, level: usize) -> Result<()> {
        if level == 0 || level > self.periods.len() {
            return Err(Error::LevelOutOfRange {
                level,
                levels: self.periods.len(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for ScaleStack {
    type Error = Error;

    fn try_from(periods: Vec<f64>) -> Result<Self> {
        Self::new(periods)
    }
}

impl From<ScaleStack> for Vec<f64> {
    fn from(stack: ScaleStack) -> Self {
        stack.periods
    }
}

/// Binary grid of shape `P × L × V`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskGrid {
    pub num_subsamples: usize,
    pub slots: usize,
    pub num_variables: usize,
    pub data: Vec<bool>,
}

impl MaskGrid {
    pub fn get(&self, subsample: usize, slot: usize, variable: usize) -> bool {
        self.data[(subsample * self.slots + slot) * self.num_variables + variable]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|m| **m).count()
    }

    /// Observed count per subsample.
    pub fn subsample_counts(&self) -> Vec<usize> {
        let per = self.slots * self.num_variables;
        (0..self.num_subsamples)
            .map(|k| self.data[k * per..(k + 1) * per].iter().filter(|m| **m).count())
            .collect()
    }
}

/// Zero-padded grids `Sⁿ`, `Mⁿ` and the per-slot timestamps, shape `Pⁿ × Lⁿ × V`.
///
/// Each `(subsample, variable)` column holds that variable's observations sorted
/// by time and packed at the front; the rest is padding with value 0,
/// timestamp 0 and mask 0.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSample {
    scale_level: usize,
    num_subsamples: usize,
    slots: usize,
    num_variables: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
    timestamps: Vec<f64>,
}

impl AlignedSample {
    /// Packs per-subsample, per-variable observation lists `(t, z)` into grids.
    /// Each list is sorted by timestamp here.
    pub(crate) fn from_buckets(
        scale_level: usize,
        num_variables: usize,
        mut buckets: Vec<Vec<Vec<(f64, f64)>>>,
    ) -> Self {
        let num_subsamples = buckets.len();
        let slots = buckets
            .iter()
            .flat_map(|b| b.iter().map(Vec::len))
            .max()
            .unwrap_or(0)
            .max(1);
        let size = num_subsamples * slots * num_variables;
        let mut values = vec![0.0; size];
        let mut mask = vec![false; size];
        let mut timestamps = vec![0.0; size];
        for (k, bucket) in buckets.iter_mut().enumerate() {
            for (v, column) in bucket.iter_mut().enumerate() {
                column.sort_by(|a, b| a.0.total_cmp(&b.0));
                for (i, &(t, z)) in column.iter().enumerate() {
                    let idx = (k * slots + i) * num_variables + v;
                    values[idx] = z;
                    mask[idx] = true;
                    timestamps[idx] = t;
                }
            }
        }
        Self {
            scale_level,
            num_subsamples,
            slots,
            num_variables,
            values,
            mask,
            timestamps,
        }
    }

    /// Builds a grid from raw parts, checking shapes and the padding invariants.
    pub fn from_parts(
        scale_level: usize,
        num_subsamples: usize,
        slots: usize,
        num_variables: usize,
        values: Vec<f64>,
        mask: Vec<bool>,
        timestamps: Vec<f64>,
    ) -> Result<Self> {
        let size = num_subsamples * slots * num_variables;
        if values.len() != size || mask.len() != size || timestamps.len() != size {
            return Err(Error::ShapeMismatch(format!(
                "grids must hold {num_subsamples}x{slots}x{num_variables} entries"
            )));
        }
        let sample = Self {
            scale_level,
            num_subsamples,
            slots,
            num_variables,
            values,
            mask,
            timestamps,
        };
        for k in 0..num_subsamples {
            for v in 0..num_variables {
                let mut seen_padding = false;
                let mut last_t = f64::NEG_INFINITY;
                for i in 0..slots {
                    let idx = sample.index(k, i, v);
                    if sample.mask[idx] {
                        if seen_padding || sample.timestamps[idx] < last_t {
                            return Err(Error::ShapeMismatch(format!(
                                "column ({k}, {v}) is not time-sorted and front-packed"
                            )));
                        }
                        last_t = sample.timestamps[idx];
                    } else {
                        seen_padding = true;
                        if sample.values[idx] != 0.0 {
                            return Err(Error::ShapeMismatch(format!(
                                "padding at ({k}, {i}, {v}) is not zero"
                            )));
                        }
                    }
                }
            }
        }
        Ok(sample)
    }

    #[inline]
    pub fn index(&self, subsample: usize, slot: usize, variable: usize) -> usize {
        (subsample * self.slots + slot) * self.num_variables + variable
    }

    pub fn scale_level(&self) -> usize {
        self.scale_level
    }

    /// `Pⁿ`.
    pub fn num_subsamples(&self) -> usize {
        self.num_subsamples
    }

    /// `Lⁿ`.
    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn num_variables(&self) -> usize {
        self.num_variables
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn mask_grid(&self) -> MaskGrid {
        MaskGrid {
            num_subsamples: self.num_subsamples,
            slots: self.slots,
            num_variables: self.num_variables,
            data: self.mask.clone(),
        }
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Number of observed slots in one `(subsample, variable)` column.
    pub fn column_count(&self, subsample: usize, variable: usize) -> usize {
        (0..self.slots)
            .take_while(|&i| self.mask[self.index(subsample, i, variable)])
            .count()
    }

    /// Whether any variable is observed in slot row `(subsample, slot)`.
    pub fn row_observed(&self, subsample: usize, slot: usize) -> bool {
        let start = self.index(subsample, slot, 0);
        self.mask[start..start + self.num_variables].iter().any(|m| *m)
    }

    /// Observations at mask=1 slots as `(subsample, slot, tuple)`, in grid order.
    pub fn observations(&self) -> impl Iterator<Item = (usize, usize, ObservationTuple)> + '_ {
        let v_count = self.num_variables;
        let slots = self.slots;
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(move |(idx, _)| {
                let v = idx % v_count;
                let i = (idx / v_count) % slots;
                let k = idx / (v_count * slots);
                (
                    k,
                    i,
                    ObservationTuple::new(self.timestamps[idx], self.values[idx], v),
                )
            })
    }

    /// Per-subsample, per-variable `(t, z)` lists.
    pub(crate) fn buckets(&self) -> Vec<Vec<Vec<(f64, f64)>>> {
        let mut out = vec![vec![Vec::new(); self.num_variables]; self.num_subsamples];
        for (k, _, obs) in self.observations() {
            out[k][obs.variable].push((obs.timestamp, obs.value));
        }
        out
    }

    /// Returns a copy with arbitrary values written into padding slots. Only
    /// meant for checking that consumers gate on the mask.
    #[doc(hidden)]
    pub fn with_padding_values(&self, mut fill: impl FnMut(usize) -> (f64, f64)) -> Self {
        let mut out = self.clone();
        for idx in 0..out.mask.len() {
            if !out.mask[idx] {
                let (z, t) = fill(idx);
                out.values[idx] = z;
                out.timestamps[idx] = t;
            }
        }
        out
    }
}

/// Aligns a raw sample into level-1 grids `S¹`, `M¹` with `L¹` equal to the
/// largest per-variable observation count.
pub fn align_and_pad(sample: &RawSample) -> Result<AlignedSample> {
    let mut columns = vec![Vec::new(); sample.num_variables()];
    for obs in sample.observations() {
        columns[obs.variable].push((obs.timestamp, obs.value));
    }
    Ok(AlignedSample::from_buckets(
        1,
        sample.num_variables(),
        vec![columns],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationKind {
    /// `Pⁿ × Lⁿ × D`
    Temporal,
    /// `Pⁿ × V × D`
    Variable,
    /// `Pⁿ × Lⁿ × V × D`
    Observation,
}

impl RepresentationKind {
    /// Row count of a representation of this kind over the given geometry.
    pub fn rows(self, num_subsamples: usize, slots: usize, num_variables: usize) -> usize {
        match self {
            Self::Temporal => num_subsamples * slots,
            Self::Variable => num_subsamples * num_variables,
            Self::Observation => num_subsamples * slots * num_variables,
        }
    }

    pub fn rows_for(self, aligned: &AlignedSample) -> usize {
        self.rows(
            aligned.num_subsamples(),
            aligned.slots(),
            aligned.num_variables(),
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Temporal => "temporal",
            Self::Variable => "variable",
            Self::Observation => "observation",
        }
    }
}

/// A latent at one scale level, stored row-major with the hidden axis last.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    kind: RepresentationKind,
    scale_level: usize,
    num_subsamples: usize,
    slots: usize,
    num_variables: usize,
    hidden_dim: usize,
    data: Vec<f64>,
}

impl Representation {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: RepresentationKind,
        scale_level: usize,
        num_subsamples: usize,
        slots: usize,
        num_variables: usize,
        hidden_dim: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let rows = kind.rows(num_subsamples, slots, num_variables);
        if data.len() != rows * hidden_dim {
            return Err(Error::ShapeMismatch(format!(
                "{} representation needs {} values, got {}",
                kind.as_str(),
                rows * hidden_dim,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::ShapeMismatch(
                "representation holds non-finite entries".to_string(),
            ));
        }
        Ok(Self {
            kind,
            scale_level,
            num_subsamples,
            slots,
            num_variables,
            hidden_dim,
            data,
        })
    }

    /// Zero representation over the geometry of `aligned`.
    pub fn zeros(kind: RepresentationKind, aligned: &AlignedSample, hidden_dim: usize) -> Self {
        let rows = kind.rows_for(aligned);
        Self {
            kind,
            scale_level: aligned.scale_level(),
            num_subsamples: aligned.num_subsamples(),
            slots: aligned.slots(),
            num_variables: aligned.num_variables(),
            hidden_dim,
            data: vec![0.0; rows * hidden_dim],
        }
    }

    pub fn kind(&self) -> RepresentationKind {
        self.kind
    }

    pub fn scale_level(&self) -> usize {
        self.scale_level
    }

    pub fn num_subsamples(&self) -> usize {
        self.num_subsamples
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn num_variables(&self) -> usize {
        self.num_variables
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn rows(&self) -> usize {
        self.kind
            .rows(self.num_subsamples, self.slots, self.num_variables)
    }

    /// Logical shape, e.g. `[P, L, D]` for the temporal kind.
    pub fn shape(&self) -> Vec<usize> {
        match self.kind {
            RepresentationKind::Temporal => {
                vec![self.num_subsamples, self.slots, self.hidden_dim]
            }
            RepresentationKind::Variable => {
                vec![self.num_subsamples, self.num_variables, self.hidden_dim]
            }
            RepresentationKind::Observation => vec![
                self.num_subsamples,
                self.slots,
                self.num_variables,
                self.hidden_dim,
            ],
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.hidden_dim..(row + 1) * self.hidden_dim]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same geometry, new entries.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            data,
            ..self.clone()
        }
    }

    pub(crate) fn same_geometry(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.scale_level == other.scale_level
            && self.num_subsamples == other.num_subsamples
            && self.slots == other.slots
            && self.num_variables == other.num_variables
            && self.hidden_dim == other.hidden_dim
    }

    pub(crate) fn matches(&self, aligned: &AlignedSample) -> bool {
        self.num_subsamples == aligned.num_subsamples()
            && self.num_variables == aligned.num_variables()
            && (self.kind == RepresentationKind::Variable || self.slots == aligned.slots())
    }
}

/// Forecast queries `(timestamp, variable)` in the horizon, with the query
/// mask `M_Q` and, for training and evaluation, the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastQuery {
    lookback_span: f64,
    horizon_span: f64,
    slots: usize,
    num_variables: usize,
    timestamps: Vec<f64>,
    mask: Vec<bool>,
    truth: Option<Vec<f64>>,
}

impl ForecastQuery {
    pub fn new(
        lookback_span: f64,
        horizon_span: f64,
        num_variables: usize,
        timestamps: Vec<f64>,
        mask: Vec<bool>,
        truth: Option<Vec<f64>>,
    ) -> Result<Self> {
        if num_variables == 0 {
            return Err(Error::InvalidQuery("zero variables".to_string()));
        }
        if !(horizon_span > 0.0 && lookback_span > 0.0) {
            return Err(Error::InvalidQuery("spans must be positive".to_string()));
        }
        if timestamps.len() != mask.len() || timestamps.len() % num_variables != 0 {
            return Err(Error::InvalidQuery(format!(
                "grids of {} timestamps and {} mask entries do not tile {num_variables} variables",
                timestamps.len(),
                mask.len()
            )));
        }
        for (idx, (&t, &m)) in timestamps.iter().zip(&mask).enumerate() {
            if m && !(t > lookback_span && t <= lookback_span + horizon_span) {
                return Err(Error::InvalidQuery(format!(
                    "query {idx} at t={t} is outside the horizon ({lookback_span}, {}]",
                    lookback_span + horizon_span
                )));
            }
        }
        if let Some(truth) = &truth {
            if truth.len() != mask.len() {
                return Err(Error::InvalidQuery("truth grid has wrong size".to_string()));
            }
            if truth.iter().zip(&mask).any(|(z, m)| !m && *z != 0.0) {
                return Err(Error::InvalidQuery(
                    "truth must be zero where the query mask is 0".to_string(),
                ));
            }
        }
        let slots = timestamps.len() / num_variables;
        Ok(Self {
            lookback_span,
            horizon_span,
            slots,
            num_variables,
            timestamps,
            mask,
            truth,
        })
    }

    pub fn lookback_span(&self) -> f64 {
        self.lookback_span
    }

    pub fn horizon_span(&self) -> f64 {
        self.horizon_span
    }

    /// `L_Q`.
    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn num_variables(&self) -> usize {
        self.num_variables
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn truth(&self) -> Option<&[f64]> {
        self.truth.as_deref()
    }

    /// `Y_Q`, the number of masked-in queries.
    pub fn num_targets(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Copy with the truth grid replaced.
    pub fn with_truth(&self, truth: Option<Vec<f64>>) -> Result<Self> {
        Self::new(
            self.lookback_span,
            self.horizon_span,
            self.num_variables,
            self.timestamps.clone(),
            self.mask.clone(),
            truth,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(t: f64, z: f64, v: usize) -> ObservationTuple {
        ObservationTuple::new(t, z, v)
    }

    #[test]
    fn slot_count_is_largest_column() {
        let s = RawSample::new(
            "a",
            vec![obs(1.0, 1.0, 0), obs(2.0, 2.0, 0), obs(3.0, 3.0, 0), obs(2.5, 4.0, 1)],
            10.0,
            2,
        )
        .unwrap();
        let a = align_and_pad(&s).unwrap();
        assert_eq!(a.slots(), 3);
        assert_eq!(a.column_count(0, 0), 3);
        assert_eq!(a.column_count(0, 1), 1);
        assert_eq!(a.observed_count(), 4);
    }

    #[test]
    fn single_observation_identity() {
        let s = RawSample::new("a", vec![obs(5.0, 1.0, 0)], 10.0, 1).unwrap();
        let a = align_and_pad(&s).unwrap();
        assert_eq!(a.values(), &[1.0]);
        assert_eq!(a.mask(), &[true]);
        assert_eq!(a.timestamps(), &[5.0]);
    }

    #[test]
    fn columns_are_sorted_and_packed() {
        let s = RawSample::new(
            "a",
            vec![obs(3.0, 3.0, 1), obs(1.0, 1.0, 1), obs(2.0, 2.0, 0)],
            10.0,
            2,
        )
        .unwrap();
        let a = align_and_pad(&s).unwrap();
        assert_eq!(a.timestamps()[a.index(0, 0, 1)], 1.0);
        assert_eq!(a.timestamps()[a.index(0, 1, 1)], 3.0);
        assert!(!a.mask()[a.index(0, 1, 0)]);
        assert_eq!(a.values()[a.index(0, 1, 0)], 0.0);
    }

    #[test]
    fn rejects_empty_and_duplicates() {
        assert!(matches!(
            RawSample::new("e", vec![], 1.0, 1),
            Err(Error::EmptySample { .. })
        ));
        let err = RawSample::new("d", vec![obs(1.0, 1.0, 0), obs(1.0, 2.0, 0)], 2.0, 1)
            .unwrap_err();
        match err {
            Error::DuplicateObservation { sample, .. } => assert_eq!(sample, "d"),
            other => panic!("unexpected {other:?}"),
        }
        // same timestamp on different variables is fine
        assert!(RawSample::new("ok", vec![obs(1.0, 1.0, 0), obs(1.0, 2.0, 1)], 2.0, 2).is_ok());
    }

    #[test]
    fn rejects_out_of_range_observations() {
        assert!(RawSample::new("a", vec![obs(3.0, 1.0, 0)], 2.0, 1).is_err());
        assert!(RawSample::new("a", vec![obs(1.0, 1.0, 2)], 2.0, 2).is_err());
        assert!(RawSample::new("a", vec![obs(1.0, f64::NAN, 0)], 2.0, 1).is_err());
    }

    #[test]
    fn scale_stack_counts() {
        let s = ScaleStack::new(vec![48.0, 24.0, 12.0, 6.0]).unwrap();
        assert_eq!(s.subsample_counts(), &[1, 2, 4, 8]);
        assert_eq!(s.subsamples(2).unwrap(), 2);
        assert!(s.subsamples(5).is_err());
        assert!(ScaleStack::new(vec![48.0, 20.0]).is_err());
        assert!(ScaleStack::new(vec![48.0, 48.0]).is_err());
        assert!(ScaleStack::new(vec![48.0, 16.0, 12.0]).is_err());
        assert!(ScaleStack::new(vec![]).is_err());
        let s = ScaleStack::new(vec![36.0, 12.0, 3.0]).unwrap();
        assert_eq!(s.subsample_counts(), &[1, 3, 12]);
    }

    #[test]
    fn from_parts_rejects_dirty_padding() {
        let err = AlignedSample::from_parts(
            1,
            1,
            2,
            1,
            vec![1.0, 5.0],
            vec![true, false],
            vec![1.0, 0.0],
        );
        assert!(err.is_err());
        let ok = AlignedSample::from_parts(
            1,
            1,
            2,
            1,
            vec![1.0, 0.0],
            vec![true, false],
            vec![1.0, 0.0],
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn query_validation() {
        let q = ForecastQuery::new(
            36.0,
            12.0,
            2,
            vec![37.0, 0.0, 40.0, 40.0],
            vec![true, false, true, true],
            Some(vec![1.0, 0.0, 2.0, 3.0]),
        )
        .unwrap();
        assert_eq!(q.slots(), 2);
        assert_eq!(q.num_targets(), 3);
        assert!(ForecastQuery::new(36.0, 12.0, 1, vec![36.0], vec![true], None).is_err());
        assert!(ForecastQuery::new(36.0, 12.0, 1, vec![49.0], vec![true], None).is_err());
        assert!(
            ForecastQuery::new(36.0, 12.0, 1, vec![40.0], vec![false], Some(vec![1.0])).is_err()
        );
    }

    #[test]
    fn representation_shapes() {
        let s = RawSample::new("a", vec![obs(1.0, 1.0, 0), obs(2.0, 1.0, 1)], 4.0, 2).unwrap();
        let a = align_and_pad(&s).unwrap();
        let r = Representation::zeros(RepresentationKind::Observation, &a, 3);
        assert_eq!(r.shape(), vec![1, 1, 2, 3]);
        assert!(Representation::new(RepresentationKind::Temporal, 1, 1, 2, 2, 3, vec![0.0; 5])
            .is_err());
        assert!(Representation::new(
            RepresentationKind::Temporal,
            1,
            1,
            1,
            2,
            1,
            vec![f64::INFINITY]
        )
        .is_err());
    }
}
