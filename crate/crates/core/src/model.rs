//! The recursive multi-scale wrapper around a backbone.
//!
//! ```text
//! E¹ = enc¹(S¹);  G¹ = E¹
//! for n = 1 .. N−1:
//!     Hⁿ   = transport(Gⁿ)                 onto level n+1
//!     Eⁿ⁺¹ = encⁿ⁺¹(Sⁿ⁺¹)
//!     Gⁿ⁺¹ = Eⁿ⁺¹ + α ⊙ (Hⁿ ⊙ Mⁿ⁺¹)
//! Ẑ = dec(proj(concat(G¹..ᴺ at level N)))  or  dec(Gᴺ)
//! ```

use alloc::boxed::Box;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbones::{encoder_prefix, Backbone, BackboneSpec, RepVar, DECODER_PREFIX};
use crate::error::{Error, Result};
use crate::fusion::{fuse_var, mask_global_var, register_fusion, score_var, FusionInit, GateShape};
use crate::params::{register_linear, Gradients, Graph, ParamStore};
use crate::splitting::{relabel, split_by_count, split_sample, transport_map, RowMap};
use crate::tape::Var;
use crate::types::{align_and_pad, AlignedSample, ForecastQuery, RawSample, Representation, ScaleStack};

const PROJECTION_PREFIX: &str = "proj";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Every `Gⁿ` is carried to level `N`, concatenated along the hidden axis
    /// and projected back to `D` before decoding.
    #[default]
    ConcatAllLevels,
    /// Only `Gᴺ` is decoded.
    LowestLevelOnly,
}

impl DecodeMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "concat" | "concat_all_levels" => Some(Self::ConcatAllLevels),
            "lowest" | "lowest_level_only" => Some(Self::LowestLevelOnly),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ConcatAllLevels => "concat_all_levels",
            Self::LowestLevelOnly => "lowest_level_only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Every level encodes the unsplit sample.
    RpSample,
    /// Subsamples hold equal observation counts instead of equal time spans.
    RpSplit,
    /// `Gⁿ⁺¹ = Eⁿ⁺¹ + Hⁿ`: no mask, no gate.
    RpIarf,
    /// `Gⁿ = Eⁿ`; upper levels reach the decoder only through concatenation.
    WoIarf,
}

impl Ablation {
    pub const ALL: [Self; 5] = [Self::Full, Self::RpSample, Self::RpSplit, Self::RpIarf, Self::WoIarf];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::RpSample => "rp_sample",
            Self::RpSplit => "rp_split",
            Self::RpIarf => "rp_iarf",
            Self::WoIarf => "wo_iarf",
        }
    }

    fn gated(self) -> bool {
        !matches!(self, Self::RpIarf | Self::WoIarf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReimtsConfig {
    pub stack: ScaleStack,
    pub backbone: BackboneSpec,
    #[serde(default)]
    pub decode_mode: DecodeMode,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub gate: GateShape,
    #[serde(default)]
    pub fusion_init: FusionInit,
}

impl ReimtsConfig {
    /// Defaults around `stack`; the backbone time scale is `T¹`.
    pub fn new(stack: ScaleStack, mut backbone: BackboneSpec) -> Self {
        backbone.time_scale = stack.total_span();
        Self {
            stack,
            backbone,
            decode_mode: DecodeMode::default(),
            ablation: Ablation::default(),
            gate: GateShape::default(),
            fusion_init: FusionInit::small(),
        }
    }

    pub fn levels(&self) -> usize {
        self.stack.levels()
    }

    /// The decode mode actually used: `wo_iarf` always concatenates.
    pub fn effective_decode_mode(&self) -> DecodeMode {
        if self.ablation == Ablation::WoIarf {
            DecodeMode::ConcatAllLevels
        } else {
            self.decode_mode
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if let FusionInit::SmallUniform { bound } = self.fusion_init {
            if !(bound.is_finite() && bound >= 0.0) {
                return Err(Error::InvalidConfig("fusion init bound must be non-negative".into()));
            }
        }
        Ok(())
    }

    fn uses_projection(&self) -> bool {
        self.levels() > 1 && self.effective_decode_mode() == DecodeMode::ConcatAllLevels
    }
}

/// Geometry of one level of a prepared sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelShape {
    pub level: usize,
    pub num_subsamples: usize,
    pub slots: usize,
    pub num_variables: usize,
    pub observed: usize,
}

impl LevelShape {
    fn of(aligned: &AlignedSample) -> Self {
        Self {
            level: aligned.scale_level(),
            num_subsamples: aligned.num_subsamples(),
            slots: aligned.slots(),
            num_variables: aligned.num_variables(),
            observed: aligned.observed_count(),
        }
    }
}

/// Invocation counts and level shapes of one forward pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForwardTrace {
    pub encoder_calls: usize,
    pub fusion_calls: usize,
    pub decoder_calls: usize,
    pub levels: Vec<LevelShape>,
}

/// A sample split into every level, with the transport maps between levels.
/// Depends on the stack, the ablation and the representation kind, not on
/// parameters, so it can be reused across epochs.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    levels: Vec<AlignedSample>,
    /// `levels[n] → levels[n+1]`.
    transports: Vec<Arc<RowMap>>,
    /// `levels[n] → levels[N−1]`, for concatenation.
    to_lowest: Vec<Arc<RowMap>>,
    query: ForecastQuery,
}

impl PreparedSample {
    pub fn levels(&self) -> &[AlignedSample] {
        &self.levels
    }

    pub fn level(&self, n: usize) -> &AlignedSample {
        &self.levels[n - 1]
    }

    pub fn query(&self) -> &ForecastQuery {
        &self.query
    }

    pub fn shapes(&self) -> Vec<LevelShape> {
        self.levels.iter().map(LevelShape::of).collect()
    }
}

pub struct Reimts {
    config: ReimtsConfig,
    backbone: Box<dyn Backbone>,
    params: ParamStore,
}

impl core::fmt::Debug for Reimts {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Reimts")
            .field("config", &self.config)
            .field("params", &self.params.num_values())
            .finish()
    }
}

impl Reimts {
    pub fn new(config: ReimtsConfig, seed: u64) -> Result<Self> {
        let params = Self::init_params(&config, seed)?;
        let backbone = config.backbone.build()?;
        Ok(Self {
            config,
            backbone,
            params,
        })
    }

    /// Rebuilds a model from saved parameters, checking every expected tensor.
    pub fn from_params(config: ReimtsConfig, params: ParamStore) -> Result<Self> {
        let expected = Self::init_params(&config, 0)?;
        if expected.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for p in expected.params() {
            match params.get(&p.name) {
                Some(q) if q.rows == p.rows && q.cols == p.cols => {}
                Some(q) => {
                    return Err(Error::ShapeMismatch(format!(
                        "parameter {} is {}x{}, expected {}x{}",
                        p.name, q.rows, q.cols, p.rows, p.cols
                    )))
                }
                None => return Err(Error::UnknownParameter(p.name.clone())),
            }
        }
        let backbone = config.backbone.build()?;
        Ok(Self {
            config,
            backbone,
            params,
        })
    }

    fn init_params(config: &ReimtsConfig, seed: u64) -> Result<ParamStore> {
        config.validate()?;
        let backbone = config.backbone.build()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.backbone.hidden_dim;
        let levels = config.levels();
        for n in 1..=levels {
            backbone.init_encoder(&mut store, &encoder_prefix(n), &mut rng)?;
        }
        if config.ablation.gated() {
            for n in 1..levels {
                register_fusion(&mut store, n, d, config.gate, config.fusion_init, &mut rng)?;
            }
        }
        if config.uses_projection() {
            register_linear(&mut store, PROJECTION_PREFIX, levels * d, d, &mut rng)?;
        }
        backbone.init_decoder(&mut store, DECODER_PREFIX, &mut rng)?;
        Ok(store)
    }

    pub fn config(&self) -> &ReimtsConfig {
        &self.config
    }

    pub fn backbone(&self) -> &dyn Backbone {
        self.backbone.as_ref()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// Splits a level-1 sample into every level of the stack.
    pub fn prepare(&self, aligned: &AlignedSample, query: &ForecastQuery) -> Result<PreparedSample> {
        let stack = &self.config.stack;
        let v_count = self.config.backbone.num_variables;
        if aligned.scale_level() != 1 || aligned.num_subsamples() != 1 {
            return Err(Error::ShapeMismatch("prepare expects a level-1 sample".into()));
        }
        if aligned.num_variables() != v_count || query.num_variables() != v_count {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} variables, sample has {} and query has {}",
                v_count,
                aligned.num_variables(),
                query.num_variables()
            )));
        }
        let mut levels = Vec::with_capacity(stack.levels());
        // bucket level 1 by time as well, which checks every timestamp fits in T¹
        levels.push(split_sample(aligned, stack, 1)?);
        for n in 2..=stack.levels() {
            let next = match self.config.ablation {
                Ablation::RpSample => relabel(&levels[0], n),
                Ablation::RpSplit => {
                    let ratio = stack.subsamples(n)? / stack.subsamples(n - 1)?;
                    split_by_count(&levels[n - 2], ratio, n)?
                }
                _ => split_sample(&levels[n - 2], stack, n)?,
            };
            levels.push(next);
        }
        let kind = self.backbone.kind();
        let transports = levels
            .windows(2)
            .map(|w| transport_map(kind, &w[0], &w[1]).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let lowest = levels.last().expect("at least one level");
        let to_lowest = if self.config.uses_projection() {
            levels[..levels.len() - 1]
                .iter()
                .map(|l| transport_map(kind, l, lowest).map(Arc::new))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(PreparedSample {
            levels,
            transports,
            to_lowest,
            query: query.clone(),
        })
    }

    pub fn prepare_raw(&self, raw: &RawSample, query: &ForecastQuery) -> Result<PreparedSample> {
        self.prepare(&align_and_pad(raw)?, query)
    }

    /// Runs the recursion on `graph`, returning every `Gⁿ` and the
    /// `(L_Q·V) × 1` prediction column.
    fn build(
        &self,
        graph: &mut Graph<'_>,
        sample: &PreparedSample,
        trace: &mut ForwardTrace,
    ) -> Result<(Vec<RepVar>, Var)> {
        let backbone = self.backbone.as_ref();
        let query = &sample.query;
        let levels = &sample.levels;
        let ablation = self.config.ablation;
        trace.levels = sample.shapes();

        let e1 = backbone.encode(graph, &encoder_prefix(1), &levels[0], query)?;
        trace.encoder_calls += 1;
        let mut g = Vec::with_capacity(levels.len());
        g.push(e1);
        for n in 1..levels.len() {
            let upper = g[n - 1];
            let h = graph.tape.rows_map(upper.var, sample.transports[n - 1].clone());
            let h = RepVar::over(h, upper.kind, &levels[n], upper.hidden_dim);
            let e = backbone.encode(graph, &encoder_prefix(n + 1), &levels[n], query)?;
            trace.encoder_calls += 1;
            let next = match ablation {
                Ablation::WoIarf => e,
                Ablation::RpIarf => {
                    trace.fusion_calls += 1;
                    e.with_var(graph.tape.add(e.var, h.var))
                }
                _ => {
                    trace.fusion_calls += 1;
                    let h_imts = mask_global_var(graph, h, &levels[n]);
                    let alpha = score_var(graph, n, h_imts.var)?;
                    fuse_var(graph, e, h_imts.var, alpha)
                }
            };
            g.push(next);
        }

        let lowest = levels.last().expect("at least one level");
        let top = *g.last().expect("at least one level");
        let decoded = if self.config.uses_projection() {
            let mut parts: Vec<Var> = g[..g.len() - 1]
                .iter()
                .zip(&sample.to_lowest)
                .map(|(rep, map)| graph.tape.rows_map(rep.var, map.clone()))
                .collect();
            parts.push(top.var);
            let stacked = graph.tape.concat(&parts);
            let projected = graph.linear(PROJECTION_PREFIX, stacked)?;
            top.with_var(projected)
        } else {
            top
        };
        let out = backbone.decode(graph, DECODER_PREFIX, &decoded, lowest, query)?;
        trace.decoder_calls += 1;
        Ok((g, out))
    }

    /// Predictions as an `L_Q × V` grid, flattened row-major.
    pub fn forward(&self, sample: &PreparedSample) -> Result<Vec<f64>> {
        Ok(self.forward_traced(sample)?.0)
    }

    pub fn forward_traced(&self, sample: &PreparedSample) -> Result<(Vec<f64>, ForwardTrace)> {
        let mut graph = Graph::new(&self.params);
        let mut trace = ForwardTrace::default();
        let (_, out) = self.build(&mut graph, sample, &mut trace)?;
        Ok((graph.tape.value(out).to_vec(), trace))
    }

    /// The fused representations `G¹ … Gᴺ`.
    pub fn representations(&self, sample: &PreparedSample) -> Result<Vec<Representation>> {
        let mut graph = Graph::new(&self.params);
        let (g, _) = self.build(&mut graph, sample, &mut ForwardTrace::default())?;
        g.iter().map(|r| r.read(&graph)).collect()
    }

    pub fn loss(&self, sample: &PreparedSample) -> Result<f64> {
        crate::loss::masked_mse_loss(&self.forward(sample)?, &sample.query)
    }

    /// Masked MSE and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, sample: &PreparedSample) -> Result<(f64, Gradients)> {
        let (loss, graph, root, _) = self.loss_graph(sample)?;
        let grads = graph.tape.backward(root);
        Ok((loss, graph.gradients(&grads)))
    }

    /// Masked MSE and its gradient with respect to the predictions.
    pub fn loss_and_prediction_grad(&self, sample: &PreparedSample) -> Result<(f64, Vec<f64>)> {
        let (loss, graph, root, pred) = self.loss_graph(sample)?;
        let grads = graph.tape.backward(root);
        let g = grads
            .get(pred)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| alloc::vec![0.0; graph.tape.rows(pred)]);
        Ok((loss, g))
    }

    fn loss_graph(&self, sample: &PreparedSample) -> Result<(f64, Graph<'_>, Var, Var)> {
        let query = &sample.query;
        let truth = query
            .truth()
            .ok_or_else(|| Error::InvalidQuery("query carries no ground truth".into()))?
            .to_vec();
        if query.num_targets() == 0 {
            return Err(Error::NoForecastTargets);
        }
        let mut graph = Graph::new(&self.params);
        let (_, pred) = self.build(&mut graph, sample, &mut ForwardTrace::default())?;
        let root = graph.tape.masked_mse(pred, truth, query.mask().to_vec());
        let loss = graph.tape.value(root)[0];
        Ok((loss, graph, root, pred))
    }
}
