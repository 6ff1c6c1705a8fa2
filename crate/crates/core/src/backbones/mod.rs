//! Backbone contract and three small reference backbones, one per
//! representation kind.
//!
//! An encoder maps a level-`n` aligned sample to a representation `Eⁿ`; every
//! level owns its own encoder parameters (`enc.{n}.*`). A single decoder
//! (`dec.*`) maps the lowest-level representation and the forecast queries to
//! an `L_Q × V` prediction grid.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{cos, sin};
use crate::params::{Graph, ParamStore};
use crate::splitting::RowMap;
use crate::tape::Var;
use crate::types::{AlignedSample, ForecastQuery, Representation, RepresentationKind};

mod observation;
mod temporal;
mod variable;

pub use observation::ObservationSet;
pub use temporal::TemporalRecurrent;
pub use variable::VariablePool;

/// Octaves of the sinusoidal time encoding, as multiples of `1/T¹`.
const TIME_FREQUENCIES: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

/// Width of [`time_features`].
pub const TIME_FEATURES: usize = 1 + 2 * TIME_FREQUENCIES.len();

/// `[t/T, sin(2πft/T), cos(2πft/T) for f in 1,2,4,8]`.
pub fn time_features(t: f64, time_scale: f64) -> [f64; TIME_FEATURES] {
    let x = t / time_scale;
    let mut out = [0.0; TIME_FEATURES];
    out[0] = x;
    for (j, f) in TIME_FREQUENCIES.iter().enumerate() {
        let angle = 2.0 * core::f64::consts::PI * f * x;
        out[1 + 2 * j] = sin(angle);
        out[2 + 2 * j] = cos(angle);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Temporal,
    Variable,
    Observation,
}

impl BackboneKind {
    pub fn representation(self) -> RepresentationKind {
        match self {
            Self::Temporal => RepresentationKind::Temporal,
            Self::Variable => RepresentationKind::Variable,
            Self::Observation => RepresentationKind::Observation,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "temporal" => Some(Self::Temporal),
            "variable" => Some(Self::Variable),
            "observation" => Some(Self::Observation),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        self.representation().as_str()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_variables: usize,
    /// `T¹`, used to normalise timestamps in the time encoding.
    pub time_scale: f64,
}

impl BackboneSpec {
    pub fn new(kind: BackboneKind, hidden_dim: usize, num_variables: usize, time_scale: f64) -> Self {
        Self {
            kind,
            hidden_dim,
            num_layers: 1,
            num_variables,
            time_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.num_layers == 0 || self.num_variables == 0 {
            return Err(Error::InvalidConfig(
                "hidden_dim, num_layers and num_variables must be positive".into(),
            ));
        }
        if !(self.time_scale.is_finite() && self.time_scale > 0.0) {
            return Err(Error::InvalidConfig("time scale must be positive".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Backbone>> {
        self.validate()?;
        Ok(match self.kind {
            BackboneKind::Temporal => Box::new(TemporalRecurrent::new(self.clone())),
            BackboneKind::Variable => Box::new(VariablePool::new(self.clone())),
            BackboneKind::Observation => Box::new(ObservationSet::new(self.clone())),
        })
    }
}

/// A representation living on a tape, with its geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepVar {
    pub var: Var,
    pub kind: RepresentationKind,
    pub scale_level: usize,
    pub num_subsamples: usize,
    pub slots: usize,
    pub num_variables: usize,
    pub hidden_dim: usize,
}

impl RepVar {
    pub fn over(var: Var, kind: RepresentationKind, aligned: &AlignedSample, hidden_dim: usize) -> Self {
        Self {
            var,
            kind,
            scale_level: aligned.scale_level(),
            num_subsamples: aligned.num_subsamples(),
            slots: aligned.slots(),
            num_variables: aligned.num_variables(),
            hidden_dim,
        }
    }

    pub fn with_var(self, var: Var) -> Self {
        Self { var, ..self }
    }

    pub fn rows(&self) -> usize {
        self.kind
            .rows(self.num_subsamples, self.slots, self.num_variables)
    }

    pub fn read(&self, graph: &Graph<'_>) -> Result<Representation> {
        Representation::new(
            self.kind,
            self.scale_level,
            self.num_subsamples,
            self.slots,
            self.num_variables,
            self.hidden_dim,
            graph.tape.value(self.var).to_vec(),
        )
    }

    pub fn constant(graph: &mut Graph<'_>, rep: &Representation) -> Self {
        let var = graph.constant(rep.rows(), rep.hidden_dim(), rep.data().to_vec());
        Self {
            var,
            kind: rep.kind(),
            scale_level: rep.scale_level(),
            num_subsamples: rep.num_subsamples(),
            slots: rep.slots(),
            num_variables: rep.num_variables(),
            hidden_dim: rep.hidden_dim(),
        }
    }
}

/// Encoder/decoder pair plugged into the recursive wrapper.
pub trait Backbone: Send + Sync {
    fn spec(&self) -> &BackboneSpec;

    fn kind(&self) -> RepresentationKind {
        self.spec().kind.representation()
    }

    fn hidden_dim(&self) -> usize {
        self.spec().hidden_dim
    }

    /// Registers the encoder parameters of one level under `prefix`.
    fn init_encoder(&self, store: &mut ParamStore, prefix: &str, rng: &mut dyn rand::RngCore) -> Result<()>;

    /// Registers the decoder parameters under `prefix`.
    fn init_decoder(&self, store: &mut ParamStore, prefix: &str, rng: &mut dyn rand::RngCore) -> Result<()>;

    /// `Eⁿ = F_encⁿ(Sⁿ)`. Values, timestamps and masks are only read at
    /// observed slots.
    fn encode(
        &self,
        graph: &mut Graph<'_>,
        prefix: &str,
        aligned: &AlignedSample,
        query: &ForecastQuery,
    ) -> Result<RepVar>;

    /// Maps a lowest-level representation over `context`'s geometry to an
    /// `(L_Q·V) × 1` prediction column in `(slot, variable)` order.
    fn decode(
        &self,
        graph: &mut Graph<'_>,
        prefix: &str,
        rep: &RepVar,
        context: &AlignedSample,
        query: &ForecastQuery,
    ) -> Result<Var>;
}

/// Encodes one aligned sample with the encoder registered under `prefix`.
pub fn encode(
    backbone: &dyn Backbone,
    params: &ParamStore,
    prefix: &str,
    aligned: &AlignedSample,
    query: &ForecastQuery,
) -> Result<Representation> {
    let mut graph = Graph::new(params);
    let rep = backbone.encode(&mut graph, prefix, aligned, query)?;
    rep.read(&graph)
}

/// Decodes a representation into an `L_Q × V` grid, flattened row-major.
pub fn decode(
    backbone: &dyn Backbone,
    params: &ParamStore,
    prefix: &str,
    rep: &Representation,
    context: &AlignedSample,
    query: &ForecastQuery,
) -> Result<Vec<f64>> {
    if rep.kind() != backbone.kind() {
        return Err(Error::KindMismatch {
            expected: backbone.kind(),
            found: rep.kind(),
        });
    }
    if !rep.matches(context) {
        return Err(Error::ShapeMismatch(
            "representation does not match the decoding level".into(),
        ));
    }
    let mut graph = Graph::new(params);
    let r = RepVar::constant(&mut graph, rep);
    let out = backbone.decode(&mut graph, prefix, &r, context, query)?;
    Ok(graph.tape.value(out).to_vec())
}

pub(crate) fn check_geometry(spec: &BackboneSpec, aligned: &AlignedSample, query: &ForecastQuery) -> Result<()> {
    if aligned.num_variables() != spec.num_variables || query.num_variables() != spec.num_variables {
        return Err(Error::ShapeMismatch(format!(
            "backbone expects {} variables, sample has {} and query has {}",
            spec.num_variables,
            aligned.num_variables(),
            query.num_variables()
        )));
    }
    Ok(())
}

pub(crate) fn check_rep(spec: &BackboneSpec, rep: &RepVar, context: &AlignedSample) -> Result<()> {
    let expected = spec.kind.representation();
    if rep.kind != expected {
        return Err(Error::KindMismatch {
            expected,
            found: rep.kind,
        });
    }
    if rep.hidden_dim != spec.hidden_dim
        || rep.num_subsamples != context.num_subsamples()
        || rep.num_variables != context.num_variables()
        || (rep.kind != RepresentationKind::Variable && rep.slots != context.slots())
    {
        return Err(Error::ShapeMismatch(
            "representation does not match the decoding level".into(),
        ));
    }
    Ok(())
}

/// Time features of every query position, `(L_Q·V) × TIME_FEATURES`.
pub(crate) fn query_features(query: &ForecastQuery, time_scale: f64) -> Vec<f64> {
    query
        .timestamps()
        .iter()
        .flat_map(|&t| time_features(t, time_scale))
        .collect()
}

/// Query-conditioned head shared by the reference decoders:
/// `relu([summary_row(r), τ(t_r)] · W₁ + b₁) · W₂ + b₂` for every query row `r`,
/// where `summary_row` picks a row of `summary` per query position.
pub(crate) fn query_head(
    graph: &mut Graph<'_>,
    prefix: &str,
    summary: Var,
    summary_rows: Vec<usize>,
    query: &ForecastQuery,
    time_scale: f64,
) -> Result<Var> {
    let rows = summary_rows.len();
    let in_rows = graph.tape.rows(summary);
    let broadcast = RowMap::new(
        rows,
        in_rows,
        summary_rows.into_iter().enumerate().map(|(r, s)| (r, s, 1.0)).collect(),
    );
    let spread = graph.tape.rows_map(summary, Arc::new(broadcast));
    let feats = graph.constant(rows, TIME_FEATURES, query_features(query, time_scale));
    let input = graph.tape.concat(&[spread, feats]);
    let hidden = graph.linear(&format!("{prefix}.hidden"), input)?;
    let hidden = graph.tape.relu(hidden);
    graph.linear(&format!("{prefix}.out"), hidden)
}

pub(crate) fn register_query_head(
    store: &mut ParamStore,
    prefix: &str,
    summary_width: usize,
    hidden: usize,
    outputs: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<()> {
    crate::params::register_linear(store, &format!("{prefix}.hidden"), summary_width + TIME_FEATURES, hidden, rng)?;
    crate::params::register_linear(store, &format!("{prefix}.out"), hidden, outputs, rng)
}

/// Per-variable `[masked mean, latest observation]` pooling of an
/// observation-kind representation: a `V × 2D` summary.
pub(crate) fn pool_per_variable(graph: &mut Graph<'_>, rep: Var, context: &AlignedSample) -> Var {
    let v_count = context.num_variables();
    let rows = graph.tape.rows(rep);
    let mut counts = vec![0usize; v_count];
    let mut latest: Vec<Option<(f64, usize)>> = vec![None; v_count];
    for (k, i, obs) in context.observations() {
        let v = obs.variable;
        counts[v] += 1;
        let idx = context.index(k, i, v);
        if latest[v].is_none_or(|(t, _)| obs.timestamp >= t) {
            latest[v] = Some((obs.timestamp, idx));
        }
    }
    let mut mean_entries = Vec::new();
    for (k, i, obs) in context.observations() {
        let v = obs.variable;
        mean_entries.push((v, context.index(k, i, v), 1.0 / counts[v] as f64));
    }
    let last_entries = latest
        .iter()
        .enumerate()
        .filter_map(|(v, l)| l.map(|(_, idx)| (v, idx, 1.0)))
        .collect();
    let mean = graph
        .tape
        .rows_map(rep, Arc::new(RowMap::new(v_count, rows, mean_entries)));
    let last = graph
        .tape
        .rows_map(rep, Arc::new(RowMap::new(v_count, rows, last_entries)));
    graph.tape.concat(&[mean, last])
}

/// Parameter prefix of the level-`n` encoder.
pub fn encoder_prefix(level: usize) -> String {
    format!("enc.{level}")
}

pub const DECODER_PREFIX: &str = "dec";
