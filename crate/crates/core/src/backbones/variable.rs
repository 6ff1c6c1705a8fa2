//! Attention-pooling reference backbone producing one vector per
//! `(subsample, variable)`.
//!
//! Each observation is embedded from its value and time encoding; the
//! embeddings of a variable inside a subsample are pooled with learned
//! softmax scores and added to a per-variable embedding. A variable without
//! observations in a subsample keeps just its embedding.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::{check_geometry, check_rep, query_head, register_query_head, time_features, Backbone, BackboneSpec, RepVar, TIME_FEATURES};
use crate::error::Result;
use crate::params::{register_linear, Graph, ParamStore};
use crate::splitting::RowMap;
use crate::tape::{Segment, Var};
use crate::types::{AlignedSample, ForecastQuery, RepresentationKind};

pub struct VariablePool {
    spec: BackboneSpec,
}

impl VariablePool {
    pub fn new(spec: BackboneSpec) -> Self {
        Self { spec }
    }

    /// Observation features in `(k, v, i)` order and one segment per
    /// `(k, v)` row of the representation.
    fn inputs(&self, aligned: &AlignedSample) -> (Vec<f64>, Vec<Segment>) {
        let (p, v_count) = (aligned.num_subsamples(), aligned.num_variables());
        let width = 1 + TIME_FEATURES;
        let mut x = Vec::with_capacity(aligned.observed_count() * width);
        let mut segments = Vec::with_capacity(p * v_count);
        let mut n = 0;
        for k in 0..p {
            for v in 0..v_count {
                let start = n;
                for i in 0..aligned.column_count(k, v) {
                    let idx = aligned.index(k, i, v);
                    x.push(aligned.values()[idx]);
                    x.extend(time_features(aligned.timestamps()[idx], self.spec.time_scale));
                    n += 1;
                }
                segments.push((start, n));
            }
        }
        (x, segments)
    }
}

impl Backbone for VariablePool {
    fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    fn init_encoder(&self, store: &mut ParamStore, prefix: &str, rng: &mut dyn rand::RngCore) -> Result<()> {
        let d = self.spec.hidden_dim;
        for layer in 0..self.spec.num_layers {
            let input = if layer == 0 { 1 + TIME_FEATURES } else { d };
            register_linear(store, &format!("{prefix}.embed{layer}"), input, d, rng)?;
        }
        store.glorot(format!("{prefix}.score"), d, 1, rng)?;
        store.glorot(format!("{prefix}.value"), d, d, rng)?;
        store.uniform(format!("{prefix}.var_emb"), self.spec.num_variables, d, 0.1, rng)
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
        let (p, v_count) = (aligned.num_subsamples(), aligned.num_variables());
        let (x, segments) = self.inputs(aligned);
        let n = x.len() / (1 + TIME_FEATURES);
        let pooled = if n == 0 {
            graph.constant(p * v_count, d, vec![0.0; p * v_count * d])
        } else {
            let x = graph.constant(n, 1 + TIME_FEATURES, x);
            let mut e = graph.linear(&format!("{prefix}.embed0"), x)?;
            e = graph.tape.tanh(e);
            for layer in 1..self.spec.num_layers {
                let h = graph.linear(&format!("{prefix}.embed{layer}"), e)?;
                let h = graph.tape.tanh(h);
                e = graph.tape.add(e, h);
            }
            let w_score = graph.param(&format!("{prefix}.score"))?;
            let scores = graph.tape.matmul(e, w_score);
            graph.tape.segment_pool(scores, e, Arc::new(segments))
        };
        let w_value = graph.param(&format!("{prefix}.value"))?;
        let value = graph.tape.matmul(pooled, w_value);
        let var_emb = graph.param(&format!("{prefix}.var_emb"))?;
        let gather = RowMap::new(
            p * v_count,
            v_count,
            (0..p * v_count).map(|r| (r, r % v_count, 1.0)).collect(),
        );
        let var_emb = graph.tape.rows_map(var_emb, Arc::new(gather));
        let e = graph.tape.add(value, var_emb);
        Ok(RepVar::over(e, RepresentationKind::Variable, aligned, d))
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
        let (p, v_count) = (context.num_subsamples(), context.num_variables());
        let mean = RowMap::new(
            v_count,
            p * v_count,
            (0..p)
                .flat_map(|k| (0..v_count).map(move |v| (v, k * v_count + v, 1.0 / p as f64)))
                .collect(),
        );
        let last = RowMap::new(
            v_count,
            p * v_count,
            (0..v_count).map(|v| (v, (p - 1) * v_count + v, 1.0)).collect(),
        );
        let mean = graph.tape.rows_map(rep.var, Arc::new(mean));
        let last = graph.tape.rows_map(rep.var, Arc::new(last));
        let summary = graph.tape.concat(&[mean, last]);
        let rows = (0..query.timestamps().len()).map(|r| r % v_count).collect();
        query_head(graph, prefix, summary, rows, query, self.spec.time_scale)
    }
}
