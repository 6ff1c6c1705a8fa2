//! Time-period splitting of aligned samples and the split-or-duplicate
//! transport of representations between scale levels.
//!
//! Splitting only ever moves observations between grid slots. Timestamps and
//! values are carried unchanged, so the sampling pattern of the input survives
//! at every level.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::types::{AlignedSample, MaskGrid, Representation, RepresentationKind, ScaleStack};

/// The time range `(Tⁿ(k−1), Tⁿk]` of subsample `k` at level `n`.
///
/// The first interval of every level also admits `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalAssignment {
    pub level: usize,
    /// 1-based, as in `k ∈ {1, …, Pⁿ}`.
    pub subsample_index: usize,
    pub start: f64,
    pub end: f64,
}

impl IntervalAssignment {
    /// All intervals of one level, in time order.
    pub fn intervals(stack: &ScaleStack, level: usize) -> Result<Vec<Self>> {
        let period = stack.period(level)?;
        let count = stack.subsamples(level)?;
        Ok((1..=count)
            .map(|k| Self {
                level,
                subsample_index: k,
                start: period * (k - 1) as f64,
                end: period * k as f64,
            })
            .collect())
    }

    /// The interval holding timestamp `t`.
    pub fn for_timestamp(stack: &ScaleStack, level: usize, t: f64) -> Result<Self> {
        let period = stack.period(level)?;
        let count = stack.subsamples(level)?;
        let k = interval_index(t, period, count).ok_or_else(|| {
            Error::ShapeMismatch(format!(
                "timestamp {t} outside the stack span {}",
                stack.total_span()
            ))
        })?;
        Ok(Self {
            level,
            subsample_index: k + 1,
            start: period * k as f64,
            end: period * (k + 1) as f64,
        })
    }

    pub fn contains(&self, t: f64) -> bool {
        (self.start < t || (self.subsample_index == 1 && t == 0.0)) && t <= self.end
    }
}

/// 0-based `k` with `period·k < t ≤ period·(k+1)`; `t = 0` maps to 0.
pub(crate) fn interval_index(t: f64, period: f64, count: usize) -> Option<usize> {
    if t <= 0.0 {
        return (t == 0.0).then_some(0);
    }
    let mut k = (libm::ceil(t / period) as usize).saturating_sub(1);
    // the quotient can land one bucket off; settle on the product form
    while k > 0 && t <= period * k as f64 {
        k -= 1;
    }
    while t > period * (k + 1) as f64 {
        k += 1;
    }
    (k < count).then_some(k)
}

/// Splits `aligned` into the `Pⁿ` subsamples of `target_level`.
///
/// Works from level 1 or any level above the target because the carried
/// timestamps decide the bucket. Columns are re-packed and re-padded to the
/// new `Lⁿ`, the largest `(subsample, variable)` count.
pub fn split_sample(
    aligned: &AlignedSample,
    stack: &ScaleStack,
    target_level: usize,
) -> Result<AlignedSample> {
    stack.check_level(target_level)?;
    if target_level < aligned.scale_level() {
        return Err(Error::LevelOutOfRange {
            level: target_level,
            levels: stack.levels(),
        });
    }
    let period = stack.period(target_level)?;
    let count = stack.subsamples(target_level)?;
    let v_count = aligned.num_variables();
    let mut buckets = vec![vec![Vec::new(); v_count]; count];
    for (_, _, obs) in aligned.observations() {
        let k = interval_index(obs.timestamp, period, count).ok_or_else(|| {
            Error::ShapeMismatch(format!(
                "observation at t={} lies beyond the stack span {}",
                obs.timestamp,
                stack.total_span()
            ))
        })?;
        buckets[k][obs.variable].push((obs.timestamp, obs.value));
    }
    Ok(AlignedSample::from_buckets(target_level, v_count, buckets))
}

/// The mask `Mⁿ` obtained by splitting `aligned`'s mask the same way as its values.
pub fn split_mask(aligned: &AlignedSample, stack: &ScaleStack, target_level: usize) -> Result<MaskGrid> {
    Ok(split_sample(aligned, stack, target_level)?.mask_grid())
}

/// Observation-count splitting used by the `rp_split` ablation.
///
/// Each `(subsample, variable)` column is cut into `ratio` consecutive chunks
/// of near-equal observation count; earlier chunks take the remainder.
/// Timestamps are carried unchanged.
pub fn split_by_count(
    aligned: &AlignedSample,
    ratio: usize,
    target_level: usize,
) -> Result<AlignedSample> {
    if ratio == 0 {
        return Err(Error::InvalidConfig("split ratio must be positive".into()));
    }
    let v_count = aligned.num_variables();
    let parent = aligned.buckets();
    let mut buckets = vec![vec![Vec::new(); v_count]; parent.len() * ratio];
    for (k, columns) in parent.into_iter().enumerate() {
        for (v, column) in columns.into_iter().enumerate() {
            let base = column.len() / ratio;
            let extra = column.len() % ratio;
            let mut items = column.into_iter();
            for j in 0..ratio {
                let size = base + usize::from(j < extra);
                buckets[k * ratio + j][v].extend(items.by_ref().take(size));
            }
        }
    }
    Ok(AlignedSample::from_buckets(target_level, v_count, buckets))
}

/// Same grids, reported at another scale level. Used when a level encodes the
/// unsplit sample.
pub(crate) fn relabel(aligned: &AlignedSample, level: usize) -> AlignedSample {
    AlignedSample::from_buckets(level, aligned.num_variables(), aligned.buckets())
}

/// A sparse linear map between row spaces: `out[r] = Σ w · in[s]` over entries `(r, s, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMap {
    out_rows: usize,
    in_rows: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl RowMap {
    pub fn new(out_rows: usize, in_rows: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        debug_assert!(entries.iter().all(|e| e.0 < out_rows && e.1 < in_rows));
        Self {
            out_rows,
            in_rows,
            entries,
        }
    }

    pub fn identity(rows: usize) -> Self {
        Self::new(rows, rows, (0..rows).map(|r| (r, r, 1.0)).collect())
    }

    pub fn out_rows(&self) -> usize {
        self.out_rows
    }

    pub fn in_rows(&self) -> usize {
        self.in_rows
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn apply(&self, input: &[f64], width: usize) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.in_rows * width);
        let mut out = vec![0.0; self.out_rows * width];
        for &(r, s, w) in &self.entries {
            let src = &input[s * width..(s + 1) * width];
            let dst = &mut out[r * width..(r + 1) * width];
            if w == 1.0 {
                for (d, x) in dst.iter_mut().zip(src) {
                    *d += x;
                }
            } else {
                for (d, x) in dst.iter_mut().zip(src) {
                    *d += w * x;
                }
            }
        }
        out
    }

    /// `grad_in += Mᵀ grad_out`.
    pub fn apply_transpose_add(&self, grad_out: &[f64], width: usize, grad_in: &mut [f64]) {
        for &(r, s, w) in &self.entries {
            let src = &grad_out[r * width..(r + 1) * width];
            let dst = &mut grad_in[s * width..(s + 1) * width];
            for (d, g) in dst.iter_mut().zip(src) {
                *d += w * g;
            }
        }
    }
}

fn key(t: f64, v: usize) -> (usize, u64) {
    // +0.0 folds -0.0 into 0.0
    (v, (t + 0.0).to_bits())
}

/// Builds the map that carries a `kind` representation over the geometry of
/// `from` onto the geometry of `to` (a lower level of the same sample).
///
/// * observation: each observed slot of `to` takes the vector of the `from`
///   slot holding the same `(timestamp, variable)`;
/// * temporal: each observed row of `to` takes the mean of the `from` rows
///   holding its observations (a plain copy whenever those observations
///   shared one row upstream);
/// * variable: block `k'` of `to` duplicates block `⌊k' / r⌋` of `from`, with
///   `r = P_to / P_from`.
///
/// Padding positions of `to` receive zero.
pub fn transport_map(
    kind: RepresentationKind,
    from: &AlignedSample,
    to: &AlignedSample,
) -> Result<RowMap> {
    let v_count = from.num_variables();
    if to.num_variables() != v_count {
        return Err(Error::ShapeMismatch(format!(
            "variable counts differ ({} vs {})",
            v_count,
            to.num_variables()
        )));
    }
    let out_rows = kind.rows_for(to);
    let in_rows = kind.rows_for(from);
    match kind {
        RepresentationKind::Variable => {
            let (p_from, p_to) = (from.num_subsamples(), to.num_subsamples());
            if p_to % p_from != 0 {
                return Err(Error::ShapeMismatch(format!(
                    "{p_to} subsamples are not a multiple of {p_from}"
                )));
            }
            let ratio = p_to / p_from;
            let entries = (0..p_to)
                .flat_map(|k| (0..v_count).map(move |v| (k * v_count + v, (k / ratio) * v_count + v, 1.0)))
                .collect();
            Ok(RowMap::new(out_rows, in_rows, entries))
        }
        RepresentationKind::Observation | RepresentationKind::Temporal => {
            let mut lookup = BTreeMap::new();
            for (k, i, obs) in from.observations() {
                lookup.insert(key(obs.timestamp, obs.variable), (k, i));
            }
            let find = |t: f64, v: usize| {
                lookup.get(&key(t, v)).copied().ok_or_else(|| {
                    Error::ShapeMismatch(format!(
                        "observation (t={t}, v={v}) is missing from the upper level"
                    ))
                })
            };
            let mut entries = Vec::new();
            if kind == RepresentationKind::Observation {
                for (k, i, obs) in to.observations() {
                    let (sk, si) = find(obs.timestamp, obs.variable)?;
                    let out = to.index(k, i, obs.variable);
                    let src = from.index(sk, si, obs.variable);
                    entries.push((out, src, 1.0));
                }
            } else {
                let slots_from = from.slots();
                for k in 0..to.num_subsamples() {
                    for i in 0..to.slots() {
                        let mut sources: Vec<usize> = Vec::new();
                        for v in 0..v_count {
                            let idx = to.index(k, i, v);
                            if to.mask()[idx] {
                                let (sk, si) = find(to.timestamps()[idx], v)?;
                                sources.push(sk * slots_from + si);
                            }
                        }
                        if sources.is_empty() {
                            continue;
                        }
                        let w = 1.0 / sources.len() as f64;
                        sources.sort_unstable();
                        let out = k * to.slots() + i;
                        let mut iter = sources.into_iter().peekable();
                        while let Some(s) = iter.next() {
                            let mut weight = w;
                            while iter.peek() == Some(&s) {
                                iter.next();
                                weight += w;
                            }
                            entries.push((out, s, weight));
                        }
                    }
                }
            }
            Ok(RowMap::new(out_rows, in_rows, entries))
        }
    }
}

/// Carries `Gⁿ` to the geometry of level `n + 1`, producing `Hⁿ`.
pub fn transport_representation(
    rep: &Representation,
    stack: &ScaleStack,
    from: &AlignedSample,
    to: &AlignedSample,
) -> Result<Representation> {
    if rep.scale_level() >= stack.levels() {
        return Err(Error::NoLowerLevel {
            level: rep.scale_level(),
        });
    }
    if !rep.matches(from) {
        return Err(Error::ShapeMismatch(
            "representation does not match the upper-level sample".into(),
        ));
    }
    if to.scale_level() != rep.scale_level() + 1 {
        return Err(Error::ShapeMismatch(format!(
            "target sample is at level {}, expected {}",
            to.scale_level(),
            rep.scale_level() + 1
        )));
    }
    let map = transport_map(rep.kind(), from, to)?;
    let data = map.apply(rep.data(), rep.hidden_dim());
    Representation::new(
        rep.kind(),
        to.scale_level(),
        to.num_subsamples(),
        to.slots(),
        to.num_variables(),
        rep.hidden_dim(),
        data,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{align_and_pad, ObservationTuple, RawSample};

    fn sample(obs: &[(f64, usize, f64)], span: f64, v: usize) -> AlignedSample {
        let obs = obs
            .iter()
            .map(|&(t, var, z)| ObservationTuple::new(t, z, var))
            .collect();
        align_and_pad(&RawSample::new("s", obs, span, v).unwrap()).unwrap()
    }

    #[test]
    fn interval_boundaries() {
        assert_eq!(interval_index(0.0, 24.0, 2), Some(0));
        assert_eq!(interval_index(24.0, 24.0, 2), Some(0));
        assert_eq!(interval_index(24.000001, 24.0, 2), Some(1));
        assert_eq!(interval_index(48.0, 24.0, 2), Some(1));
        assert_eq!(interval_index(48.1, 24.0, 2), None);
        assert_eq!(interval_index(0.3, 0.1, 5), Some(2));
        assert_eq!(interval_index(-1.0, 1.0, 5), None);
    }

    #[test]
    fn interval_assignment_for_timestamps() {
        let stack = ScaleStack::new(vec![48.0, 24.0, 12.0]).unwrap();
        let a = IntervalAssignment::for_timestamp(&stack, 3, 30.0).unwrap();
        assert_eq!(a.subsample_index, 3);
        assert!(a.contains(30.0) && a.contains(36.0) && !a.contains(24.0));
        let all = IntervalAssignment::intervals(&stack, 3).unwrap();
        assert_eq!(all.len(), 4);
        assert!(all[0].contains(0.0));
    }

    #[test]
    fn two_level_split_example() {
        let a = sample(&[(1.0, 0, 0.5), (25.0, 0, 0.7), (30.0, 1, 0.1)], 48.0, 2);
        let stack = ScaleStack::new(vec![48.0, 24.0]).unwrap();
        let s = split_sample(&a, &stack, 2).unwrap();
        assert_eq!(s.num_subsamples(), 2);
        assert_eq!(s.slots(), 1);
        let got: Vec<_> = s.observations().map(|(k, _, o)| (k, o.timestamp, o.variable, o.value)).collect();
        assert_eq!(got, vec![(0, 1.0, 0, 0.5), (1, 25.0, 0, 0.7), (1, 30.0, 1, 0.1)]);
    }

    #[test]
    fn zero_timestamp_goes_to_first_subsample() {
        let a = sample(&[(0.0, 0, 1.0), (10.0, 0, 2.0)], 16.0, 1);
        let stack = ScaleStack::new(vec![16.0, 4.0]).unwrap();
        let s = split_sample(&a, &stack, 2).unwrap();
        assert_eq!(s.mask_grid().subsample_counts(), vec![1, 0, 1, 0]);
    }

    #[test]
    fn all_zero_split_mask_when_nothing_in_bucket() {
        let a = sample(&[(1.0, 0, 1.0)], 8.0, 2);
        let stack = ScaleStack::new(vec![8.0, 4.0, 2.0]).unwrap();
        let m = split_mask(&a, &stack, 3).unwrap();
        assert_eq!(m.subsample_counts(), vec![1, 0, 0, 0]);
        assert_eq!(m.count(), 1);
    }

    #[test]
    fn count_split_takes_extras_first() {
        let a = sample(&[(1.0, 0, 1.0), (2.0, 0, 2.0), (3.0, 0, 3.0), (7.0, 1, 4.0)], 8.0, 2);
        let s = split_by_count(&a, 2, 2).unwrap();
        assert_eq!(s.column_count(0, 0), 2);
        assert_eq!(s.column_count(1, 0), 1);
        assert_eq!(s.column_count(0, 1), 1);
        assert_eq!(s.column_count(1, 1), 0);
    }

    #[test]
    fn count_split_matches_time_split_on_uniform_data() {
        let obs: Vec<_> = (1..=8)
            .flat_map(|t| (0..2).map(move |v| (t as f64, v, (t * 10 + v) as f64)))
            .collect();
        let a = sample(&obs, 8.0, 2);
        let stack = ScaleStack::new(vec![8.0, 4.0, 2.0]).unwrap();
        let by_time = split_sample(&a, &stack, 2).unwrap();
        let by_count = split_by_count(&a, 2, 2).unwrap();
        assert_eq!(by_time, by_count);
        let by_time3 = split_sample(&by_time, &stack, 3).unwrap();
        let by_count3 = split_by_count(&by_count, 2, 3).unwrap();
        assert_eq!(by_time3, by_count3);
    }

    #[test]
    fn variable_transport_duplicates_blocks() {
        let a = sample(&[(1.0, 0, 1.0), (5.0, 1, 1.0)], 8.0, 2);
        let stack = ScaleStack::new(vec![8.0, 4.0, 2.0]).unwrap();
        let l2 = split_sample(&a, &stack, 2).unwrap();
        let l3 = split_sample(&a, &stack, 3).unwrap();
        // blocks A = rows 0,1 ; B = rows 2,3 with D = 1
        let rep = Representation::new(RepresentationKind::Variable, 2, 2, 1, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let h = transport_representation(&rep, &stack, &l2, &l3).unwrap();
        assert_eq!(h.data(), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
        assert_eq!(h.scale_level(), 3);
    }

    #[test]
    fn temporal_transport_empty_bucket_is_zero() {
        let a = sample(&[(1.0, 0, 1.0), (2.0, 0, 1.0), (3.0, 0, 1.0)], 8.0, 1);
        let stack = ScaleStack::new(vec![8.0, 4.0]).unwrap();
        let l2 = split_sample(&a, &stack, 2).unwrap();
        let rep = Representation::new(
            RepresentationKind::Temporal,
            1,
            1,
            3,
            1,
            2,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        )
        .unwrap();
        let h = transport_representation(&rep, &stack, &a, &l2).unwrap();
        assert_eq!(h.shape(), vec![2, 3, 2]);
        assert_eq!(&h.data()[..6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(h.data()[6..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn temporal_transport_averages_rows_from_different_sources() {
        // var 0 at t=1,5 ; var 1 at t=6 -> level-1 rows: [ (1,v0),(6,v1) ], [ (5,v0) ]
        let a = sample(&[(1.0, 0, 1.0), (5.0, 0, 1.0), (6.0, 1, 1.0)], 8.0, 2);
        let stack = ScaleStack::new(vec![8.0, 4.0]).unwrap();
        let l2 = split_sample(&a, &stack, 2).unwrap();
        let rep = Representation::new(RepresentationKind::Temporal, 1, 1, 2, 2, 1, vec![10.0, 20.0]).unwrap();
        let h = transport_representation(&rep, &stack, &a, &l2).unwrap();
        // level 2, subsample 2 row 0 holds (5,v0) from row 1 and (6,v1) from row 0
        assert_eq!(h.data(), &[10.0, 15.0]);
    }

    #[test]
    fn transport_from_lowest_level_fails() {
        let a = sample(&[(1.0, 0, 1.0)], 8.0, 1);
        let stack = ScaleStack::new(vec![8.0]).unwrap();
        let rep = Representation::zeros(RepresentationKind::Temporal, &a, 2);
        assert_eq!(
            transport_representation(&rep, &stack, &a, &a),
            Err(Error::NoLowerLevel { level: 1 })
        );
    }

    #[test]
    fn row_map_transpose_is_adjoint() {
        let m = RowMap::new(2, 3, vec![(0, 1, 0.5), (1, 0, 2.0), (1, 2, -1.0)]);
        let x = [1.0, 2.0, 3.0];
        let y = [0.3, -0.7];
        let mx = m.apply(&x, 1);
        let mut mty = [0.0; 3];
        m.apply_transpose_add(&y, 1, &mut mty);
        let lhs: f64 = mx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&mty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-15);
    }
}
