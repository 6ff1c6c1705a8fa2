//! Irregularity-aware fusion of a transported global representation `Hⁿ` with
//! the local representation `Eⁿ⁺¹`:
//!
//! ```text
//! H_IMTS = Hⁿ ⊙ Mⁿ⁺¹        (temporal / observation kinds; identity for variable)
//! α      = ReLU(H_IMTS W + b)
//! Gⁿ⁺¹   = Eⁿ⁺¹ + α ⊙ H_IMTS
//! ```
//!
//! The temporal kind has one row per `(subsample, slot)`, so its mask is the
//! row mask: a row counts as observed when any variable is observed in it.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbones::RepVar;
use crate::error::{Error, Result};
use crate::params::{Graph, ParamStore};
use crate::tape::Var;
use crate::types::{AlignedSample, Representation, RepresentationKind};

/// Shape of the gate `α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateShape {
    /// `FF: D → D`, one weight per hidden channel.
    #[default]
    Elementwise,
    /// `FF: D → 1`, one weight per position broadcast over the hidden axis.
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionInit {
    /// Weights uniform in `±bound`, bias zero.
    SmallUniform { bound: f64 },
    /// Weights and bias zero: every gate starts closed.
    #[default]
    Zero,
}

impl FusionInit {
    pub fn small() -> Self {
        Self::SmallUniform { bound: 0.01 }
    }
}

/// Parameter prefix of the fusion between levels `n` and `n + 1`.
pub fn fusion_prefix(boundary: usize) -> String {
    format!("fusion.{boundary}")
}

pub fn register_fusion<R: Rng + ?Sized>(
    store: &mut ParamStore,
    boundary: usize,
    hidden_dim: usize,
    gate: GateShape,
    init: FusionInit,
    rng: &mut R,
) -> Result<()> {
    let prefix = fusion_prefix(boundary);
    let out = match gate {
        GateShape::Elementwise => hidden_dim,
        GateShape::Scalar => 1,
    };
    match init {
        FusionInit::SmallUniform { bound } => store.uniform(format!("{prefix}.w"), hidden_dim, out, bound, rng)?,
        FusionInit::Zero => store.zeros(format!("{prefix}.w"), hidden_dim, out)?,
    }
    store.zeros(format!("{prefix}.b"), 1, out)
}

/// Per-row mask of a representation of `kind` over `mask`'s geometry, or
/// `None` for the variable kind.
pub(crate) fn row_mask(kind: RepresentationKind, mask: &AlignedSample) -> Option<Vec<f64>> {
    let (p, l) = (mask.num_subsamples(), mask.slots());
    match kind {
        RepresentationKind::Variable => None,
        RepresentationKind::Observation => Some(mask.mask().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()),
        RepresentationKind::Temporal => Some(
            (0..p)
                .flat_map(|k| (0..l).map(move |i| (k, i)))
                .map(|(k, i)| if mask.row_observed(k, i) { 1.0 } else { 0.0 })
                .collect(),
        ),
    }
}

fn check_against(rep: &Representation, mask: &AlignedSample) -> Result<()> {
    if !rep.matches(mask) {
        return Err(Error::ShapeMismatch(format!(
            "{} representation at level {} does not match the level-{} mask",
            rep.kind().as_str(),
            rep.scale_level(),
            mask.scale_level()
        )));
    }
    Ok(())
}

/// `Hⁿ_IMTS`: the transported representation gated by the level-`n+1` mask.
pub fn mask_global(h: &Representation, mask: &AlignedSample) -> Result<Representation> {
    check_against(h, mask)?;
    let Some(rows) = row_mask(h.kind(), mask) else {
        return Ok(h.clone());
    };
    let d = h.hidden_dim();
    let data = h
        .data()
        .chunks(d)
        .zip(&rows)
        .flat_map(|(row, &m)| row.iter().map(move |x| x * m))
        .collect();
    Ok(h.with_data(data))
}

/// `α = ReLU(FF(H_IMTS))` with the parameters of `boundary`. The result has
/// `rows × D` entries for the elementwise gate and `rows` for the scalar one.
pub fn score(params: &ParamStore, boundary: usize, h_imts: &Representation) -> Result<Vec<f64>> {
    let mut graph = Graph::new(params);
    let h = graph.constant(h_imts.rows(), h_imts.hidden_dim(), h_imts.data().to_vec());
    let alpha = score_var(&mut graph, boundary, h)?;
    Ok(graph.tape.value(alpha).to_vec())
}

/// `G = E + α ⊙ H_IMTS`, with a scalar gate broadcast over the hidden axis.
pub fn fuse(local: &Representation, h_imts: &Representation, alpha: &[f64]) -> Result<Representation> {
    if !local.same_geometry(h_imts) {
        return Err(Error::ShapeMismatch(
            "local and global representations differ in geometry".into(),
        ));
    }
    let d = local.hidden_dim();
    let n = local.data().len();
    let data = if alpha.len() == n {
        local
            .data()
            .iter()
            .zip(h_imts.data())
            .zip(alpha)
            .map(|((e, h), a)| e + a * h)
            .collect()
    } else if alpha.len() * d == n {
        local
            .data()
            .iter()
            .zip(h_imts.data())
            .enumerate()
            .map(|(j, (e, h))| e + h * alpha[j / d])
            .collect()
    } else {
        return Err(Error::ShapeMismatch(format!(
            "gate has {} entries for a {}-entry representation",
            alpha.len(),
            n
        )));
    };
    Ok(local.with_data(data))
}

pub(crate) fn mask_global_var(graph: &mut Graph<'_>, h: RepVar, mask: &AlignedSample) -> RepVar {
    match row_mask(h.kind, mask) {
        None => h,
        Some(rows) => {
            let m = graph.constant(rows.len(), 1, rows);
            h.with_var(graph.tape.mul_col(h.var, m))
        }
    }
}

pub(crate) fn score_var(graph: &mut Graph<'_>, boundary: usize, h_imts: Var) -> Result<Var> {
    let ff = graph.linear(&fusion_prefix(boundary), h_imts)?;
    Ok(graph.tape.relu(ff))
}

pub(crate) fn fuse_var(graph: &mut Graph<'_>, local: RepVar, h_imts: Var, alpha: Var) -> RepVar {
    let gated = if graph.tape.cols(alpha) == graph.tape.cols(h_imts) {
        graph.tape.mul(alpha, h_imts)
    } else {
        graph.tape.mul_col(h_imts, alpha)
    };
    local.with_var(graph.tape.add(local.var, gated))
}
