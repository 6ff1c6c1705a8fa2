//! Set-attention reference backbone producing one vector per observation.
//!
//! Observations are embedded from value, time encoding and a variable
//! embedding, then mixed by self-attention restricted to the observations of
//! the same subsample. Padding slots get zero rows.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use super::{
    check_geometry, check_rep, pool_per_variable, query_head, register_query_head, time_features, Backbone,
    BackboneSpec, RepVar, TIME_FEATURES,
};
use crate::error::Result;
use crate::math::sqrt;
use crate::params::{register_linear, Graph, ParamStore};
use crate::splitting::RowMap;
use crate::tape::{Segment, Var};
use crate::types::{AlignedSample, ForecastQuery, RepresentationKind};

pub struct ObservationSet {
    spec: BackboneSpec,
}

struct Inputs {
    features: Vec<f64>,
    variables: Vec<usize>,
    grid_index: Vec<usize>,
    blocks: Vec<Segment>,
}

impl ObservationSet {
    pub fn new(spec: BackboneSpec) -> Self {
        Self { spec }
    }

    fn inputs(&self, aligned: &AlignedSample) -> Inputs {
        let mut out = Inputs {
            features: Vec::new(),
            variables: Vec::new(),
            grid_index: Vec::new(),
            blocks: Vec::with_capacity(aligned.num_subsamples()),
        };
        let mut start = 0;
        let mut current = 0;
        for (k, i, obs) in aligned.observations() {
            while current < k {
                out.blocks.push((start, out.variables.len()));
                start = out.variables.len();
                current += 1;
            }
            out.features.push(obs.value);
            out.features.extend(time_features(obs.timestamp, self.spec.time_scale));
            out.variables.push(obs.variable);
            out.grid_index.push(aligned.index(k, i, obs.variable));
        }
        while out.blocks.len() < aligned.num_subsamples() {
            out.blocks.push((start, out.variables.len()));
            start = out.variables.len();
        }
        out
    }
}

impl Backbone for ObservationSet {
    fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    fn init_encoder(&self, store: &mut ParamStore, prefix: &str, rng: &mut dyn rand::RngCore) -> Result<()> {
        let d = self.spec.hidden_dim;
        register_linear(store, &format!("{prefix}.embed"), 1 + TIME_FEATURES, d, rng)?;
        store.uniform(format!("{prefix}.var_emb"), self.spec.num_variables, d, 0.1, rng)?;
        for layer in 0..self.spec.num_layers {
            for name in ["q", "k", "v"] {
                store.glorot(format!("{prefix}.attn{layer}.{name}"), d, d, rng)?;
            }
        }
        Ok(())
    }

    fn init_decoder(&self, store: &mut ParamStore, prefix: &str, rng: &mut dyn rand::RngCore) -> Result<()> {
        let d = self.spec.hidden_dim;
        register_query_head(store, prefix, 2 * d, d, 1, rng)
    }

    fn encode(
        &self,
        graph: &mut Graph<'_>,
        prefix: &str,
        aligned: &AlignedSample,
        query: &ForecastQuery,
    ) -> Result<RepVar> {
        check_geometry(&self.spec, aligned, query)?;
        let d = self.spec.hidden_dim;
        let rows = RepresentationKind::Observation.rows_for(aligned);
        let inputs = self.inputs(aligned);
        let n = inputs.variables.len();
        let x = graph.constant(n, 1 + TIME_FEATURES, inputs.features);
        let e = graph.linear(&format!("{prefix}.embed"), x)?;
        let mut e = graph.tape.tanh(e);
        let var_emb = graph.param(&format!("{prefix}.var_emb"))?;
        let gather = RowMap::new(
            n,
            self.spec.num_variables,
            inputs.variables.iter().enumerate().map(|(r, &v)| (r, v, 1.0)).collect(),
        );
        let var_emb = graph.tape.rows_map(var_emb, Arc::new(gather));
        e = graph.tape.add(e, var_emb);
        let blocks = Arc::new(inputs.blocks);
        let scale = 1.0 / sqrt(d as f64);
        for layer in 0..self.spec.num_layers {
            let wq = graph.param(&format!("{prefix}.attn{layer}.q"))?;
            let wk = graph.param(&format!("{prefix}.attn{layer}.k"))?;
            let wv = graph.param(&format!("{prefix}.attn{layer}.v"))?;
            let q = graph.tape.matmul(e, wq);
            let k = graph.tape.matmul(e, wk);
            let v = graph.tape.matmul(e, wv);
            let mixed = graph.tape.block_attention(q, k, v, blocks.clone(), scale);
            e = graph.tape.add(e, mixed);
        }
        let scatter = RowMap::new(
            rows,
            n,
            inputs.grid_index.iter().enumerate().map(|(r, &g)| (g, r, 1.0)).collect(),
        );
        let e = graph.tape.rows_map(e, Arc::new(scatter));
        Ok(RepVar::over(e, RepresentationKind::Observation, aligned, d))
    }

    fn decode(
        &self,
        graph: &mut Graph<'_>,
        prefix: &str,
        rep: &RepVar,
        context: &AlignedSample,
        query: &ForecastQuery,
    ) -> Result<Var> {
        check_rep(&self.spec, rep, context)?;
        let v_count = context.num_variables();
        let summary = pool_per_variable(graph, rep.var, context);
        let rows = (0..query.timestamps().len()).map(|r| r % v_count).collect();
        query_head(graph, prefix, summary, rows, query, self.spec.time_scale)
    }
}
