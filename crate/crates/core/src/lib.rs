//! Recursive multi-scale representation learning for irregular multivariate
//! time series (IMTS).
//!
//! A sample is a set of `(timestamp, value, variable)` observations. This crate
//! aligns samples into zero-padded grids, splits them recursively into
//! subsamples with shorter time periods (never resampling a timestamp), runs a
//! backbone encoder at every scale level, fuses global representations from
//! upper levels into local ones with a mask-aware gate, and decodes forecast
//! queries at the lowest level.
//!
//! The crate is `no_std` and only needs `alloc`. IO, data generation, the
//! training loop and the command line live in the `reimts` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod backbones;
mod error;
pub mod fusion;
pub mod loss;
mod math;
pub mod model;
pub mod optim;
pub mod params;
pub mod splitting;
pub mod tape;
#[cfg(test)]
mod testutil;
pub mod types;

pub use crate::backbones::{Backbone, BackboneKind, BackboneSpec};
pub use crate::error::{Error, Result};
pub use crate::fusion::{FusionInit, GateShape};
pub use crate::loss::{masked_metrics, masked_mse_loss, MaskedMetrics};
pub use crate::model::{
    Ablation, DecodeMode, ForwardTrace, LevelShape, PreparedSample, Reimts, ReimtsConfig,
};
pub use crate::optim::{Adam, AdamConfig};
pub use crate::params::{Gradients, ParamStore};
pub use crate::splitting::{
    split_by_count, split_mask, split_sample, transport_map, transport_representation,
    IntervalAssignment, RowMap,
};
pub use crate::types::{
    align_and_pad, AlignedSample, ForecastQuery, MaskGrid, ObservationTuple, RawSample,
    Representation, RepresentationKind, ScaleStack,
};
