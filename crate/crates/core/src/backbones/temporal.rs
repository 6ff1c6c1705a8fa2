//! Recurrent reference backbone producing temporal representations.
//!
//! Missing entries of a slot row are filled with the variable's last observed
//! value inside the subsample (zero before the first one), and the row is fed
//! to a GRU cell together with its mask and normalised timestamps. Rows with
//! no observation leave the state untouched, so a subsample without
//! observations keeps the learned initial state throughout. No time decay is
//! applied.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::{check_geometry, check_rep, query_head, register_query_head, Backbone, BackboneSpec, RepVar};
use crate::error::Result;
use crate::params::{Graph, ParamStore};
use crate::splitting::RowMap;
use crate::tape::Var;
use crate::types::{AlignedSample, ForecastQuery, RepresentationKind};

pub struct TemporalRecurrent {
    spec: BackboneSpec,
}

impl TemporalRecurrent {
    pub fn new(spec: BackboneSpec) -> Self {
        Self { spec }
    }

    fn input_width(&self) -> usize {
        3 * self.spec.num_variables
    }

    /// `[LOCF values, mask, masked t/T¹]` per slot row, rows in `(k, i)` order,
    /// plus the per-row update indicator.
    fn inputs(&self, aligned: &AlignedSample) -> (Vec<f64>, Vec<Vec<f64>>) {
        let (p, l, v_count) = (aligned.num_subsamples(), aligned.slots(), aligned.num_variables());
        let width = 3 * v_count;
        let mut x = vec![0.0; p * l * width];
        let mut observed = vec![vec![0.0; p]; l];
        for k in 0..p {
            for v in 0..v_count {
                let mut last = 0.0;
                for i in 0..l {
                    let idx = aligned.index(k, i, v);
                    let row = &mut x[(k * l + i) * width..(k * l + i + 1) * width];
                    if aligned.mask()[idx] {
                        last = aligned.values()[idx];
                        row[v_count + v] = 1.0;
                        row[2 * v_count + v] = aligned.timestamps()[idx] / self.spec.time_scale;
                        observed[i][k] = 1.0;
                    }
                    row[v] = last;
                }
            }
        }
        (x, observed)
    }

    fn gru_layer(
        &self,
        graph: &mut Graph<'_>,
        prefix: &str,
        input: Var,
        p: usize,
        l: usize,
        observed: &[Vec<f64>],
    ) -> Result<Var> {
        let d = self.spec.hidden_dim;
        let wx = graph.param(&format!("{prefix}.wx"))?;
        let wh = graph.param(&format!("{prefix}.wh"))?;
        let b = graph.param(&format!("{prefix}.b"))?;
        let h0 = graph.param(&format!("{prefix}.h0"))?;
        let xw = graph.tape.matmul(input, wx);
        let xw = graph.tape.add_row(xw, b);
        let spread = RowMap::new(p, 1, (0..p).map(|k| (k, 0, 1.0)).collect());
        let mut h = graph.tape.rows_map(h0, Arc::new(spread));
        let mut states = Vec::with_capacity(l);
        for (i, row_mask) in observed.iter().enumerate() {
            if row_mask.iter().all(|m| *m == 0.0) {
                states.push(h);
                continue;
            }
            let gather = RowMap::new(p, p * l, (0..p).map(|k| (k, k * l + i, 1.0)).collect());
            let xi = graph.tape.rows_map(xw, Arc::new(gather));
            let hw = graph.tape.matmul(h, wh);
            let t = &mut graph.tape;
            let (xz, xr, xn) = (t.slice_cols(xi, 0, d), t.slice_cols(xi, d, 2 * d), t.slice_cols(xi, 2 * d, 3 * d));
            let (hz, hr, hn) = (t.slice_cols(hw, 0, d), t.slice_cols(hw, d, 2 * d), t.slice_cols(hw, 2 * d, 3 * d));
            let z = t.add(xz, hz);
            let z = t.sigmoid(z);
            let r = t.add(xr, hr);
            let r = t.sigmoid(r);
            let rh = t.mul(r, hn);
            let n = t.add(xn, rh);
            let n = t.tanh(n);
            let delta = t.sub(n, h);
            let step = t.mul(z, delta);
            let gate = t.leaf(p, 1, row_mask.clone());
            let step = t.mul_col(step, gate);
            h = t.add(h, step);
            states.push(h);
        }
        let stacked = graph.tape.vstack(&states);
        // (i, k) -> (k, i)
        let reorder = RowMap::new(
            p * l,
            p * l,
            (0..p)
                .flat_map(|k| (0..l).map(move |i| (k * l + i, i * p + k, 1.0)))
                .collect(),
        );
        Ok(graph.tape.rows_map(stacked, Arc::new(reorder)))
    }
}

impl Backbone for TemporalRecurrent {
    fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    fn init_encoder(&self, store: &mut ParamStore, prefix: &str, rng: &mut dyn rand::RngCore) -> Result<()> {
        let d = self.spec.hidden_dim;
        for layer in 0..self.spec.num_layers {
            let input = if layer == 0 { self.input_width() } else { d };
            let p = format!("{prefix}.gru{layer}");
            store.glorot(format!("{p}.wx"), input, 3 * d, rng)?;
            store.glorot(format!("{p}.wh"), d, 3 * d, rng)?;
            store.zeros(format!("{p}.b"), 1, 3 * d)?;
            store.uniform(format!("{p}.h0"), 1, d, 0.1, rng)?;
        }
        Ok(())
    }

    fn init_decoder(&self, store: &mut ParamStore, prefix: &str, rng: &mut dyn rand::RngCore) -> Result<()> {
        let d = self.spec.hidden_dim;
        register_query_head(store, prefix, 2 * d, d, self.spec.num_variables, rng)
    }

    fn encode(
        &self,
        graph: &mut Graph<'_>,
        prefix: &str,
        aligned: &AlignedSample,
        query: &ForecastQuery,
    ) -> Result<RepVar> {
        check_geometry(&self.spec, aligned, query)?;
        let (p, l) = (aligned.num_subsamples(), aligned.slots());
        let (x, observed) = self.inputs(aligned);
        let mut h = graph.constant(p * l, self.input_width(), x);
        for layer in 0..self.spec.num_layers {
            h = self.gru_layer(graph, &format!("{prefix}.gru{layer}"), h, p, l, &observed)?;
        }
        Ok(RepVar::over(h, RepresentationKind::Temporal, aligned, self.spec.hidden_dim))
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
        let (p, l) = (context.num_subsamples(), context.slots());
        let rows: Vec<usize> = (0..p)
            .flat_map(|k| (0..l).map(move |i| (k, i)))
            .filter(|&(k, i)| context.row_observed(k, i))
            .map(|(k, i)| k * l + i)
            .collect();
        let n = rows.len().max(1) as f64;
        let mean = RowMap::new(1, p * l, rows.iter().map(|&r| (0, r, 1.0 / n)).collect());
        let last = RowMap::new(1, p * l, rows.last().map(|&r| (0, r, 1.0)).into_iter().collect());
        let mean = graph.tape.rows_map(rep.var, Arc::new(mean));
        let last = graph.tape.rows_map(rep.var, Arc::new(last));
        let summary = graph.tape.concat(&[mean, last]);
        let v_count = query.num_variables();
        let positions = query.timestamps().len();
        let out = query_head(graph, prefix, summary, vec![0; positions], query, self.spec.time_scale)?;
        Ok(graph.tape.pick_cols(out, (0..positions).map(|r| r % v_count).collect()))
    }
}
