//! Masked forecasting objective. Only positions with query mask 1 enter the
//! reduction; the others are skipped outright, so any value there (even a
//! non-finite one) leaves the loss and its gradient untouched.

use alloc::format;

use crate::error::{Error, Result};
use crate::types::ForecastQuery;

/// Sums over the masked-in query positions of one or more samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MaskedMetrics {
    pub count: usize,
    pub sum_squared: f64,
    pub sum_absolute: f64,
}

impl MaskedMetrics {
    pub fn mse(&self) -> f64 {
        self.sum_squared / self.count as f64
    }

    pub fn mae(&self) -> f64 {
        self.sum_absolute / self.count as f64
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.sum_squared += other.sum_squared;
        self.sum_absolute += other.sum_absolute;
    }
}

fn truth<'a>(predictions: &[f64], query: &'a ForecastQuery) -> Result<&'a [f64]> {
    let truth = query
        .truth()
        .ok_or_else(|| Error::InvalidQuery("query carries no ground truth".into()))?;
    if predictions.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} query positions",
            predictions.len(),
            truth.len()
        )));
    }
    Ok(truth)
}

pub fn masked_metrics(predictions: &[f64], query: &ForecastQuery) -> Result<MaskedMetrics> {
    let truth = truth(predictions, query)?;
    let mut out = MaskedMetrics::default();
    for ((p, z), m) in predictions.iter().zip(truth).zip(query.mask()) {
        if *m {
            let d = p - z;
            out.count += 1;
            out.sum_squared += d * d;
            out.sum_absolute += d.abs();
        }
    }
    Ok(out)
}

/// `(1/Y_Q) Σ_{M_Q = 1} (ẑ − z)²`.
pub fn masked_mse_loss(predictions: &[f64], query: &ForecastQuery) -> Result<f64> {
    let m = masked_metrics(predictions, query)?;
    if m.count == 0 {
        return Err(Error::NoForecastTargets);
    }
    Ok(m.mse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    fn query(mask: &[bool], truth: &[f64]) -> ForecastQuery {
        let ts = mask.iter().map(|&m| if m { 40.0 } else { 0.0 }).collect();
        ForecastQuery::new(36.0, 12.0, mask.len(), ts, mask.to_vec(), Some(truth.to_vec())).unwrap()
    }

    #[test]
    fn hand_evaluated_example() {
        let q = query(&[true, false], &[1.0, 0.0]);
        assert_eq!(masked_mse_loss(&[3.0, 1.0], &q).unwrap(), 4.0);
    }

    #[test]
    fn exact_prediction_is_zero() {
        let q = query(&[true, true, false], &[1.5, -2.0, 0.0]);
        assert_eq!(masked_mse_loss(&[1.5, -2.0, 7.0], &q).unwrap(), 0.0);
    }

    #[test]
    fn masked_positions_are_ignored_bitwise() {
        let q = query(&[true, false, true], &[0.3, 0.0, -1.1]);
        let a = masked_mse_loss(&[0.7, 5.0, 2.0], &q).unwrap();
        let b = masked_mse_loss(&[0.7, f64::NAN, 2.0], &q).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn no_targets_is_an_error() {
        let q = query(&[false, false], &[0.0, 0.0]);
        assert_eq!(masked_mse_loss(&[1.0, 2.0], &q), Err(Error::NoForecastTargets));
        assert_eq!(Error::NoForecastTargets.to_string(), "no forecast targets");
    }
}
