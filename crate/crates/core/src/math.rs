//! Float helpers that work without `std`.

pub(crate) use libm::{cos, exp, sin, sqrt, tanh};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}
