//! `sample_id,timestamp,variable_id,value` files.

use std::collections::HashMap;
use std::path::Path;

use reimts_core::{ObservationTuple, RawSample};
use serde::{Deserialize, Serialize};

use super::{write_atomic, DataError, Result};

/// Raw samples sharing a variable count and total span (lookback plus
/// horizon).
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub num_variables: usize,
    pub total_span: f64,
    pub samples: Vec<RawSample>,
}

impl Corpus {
    pub fn num_observations(&self) -> usize {
        self.samples.iter().map(|s| s.observations().len()).sum()
    }

    pub fn mean_observations(&self) -> f64 {
        self.num_observations() as f64 / self.samples.len().max(1) as f64
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    sample_id: String,
    timestamp: f64,
    variable_id: usize,
    value: f64,
}

pub fn save_tuples(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &corpus.samples {
        for o in s.observations() {
            w.serialize(Row {
                sample_id: s.id().to_string(),
                timestamp: o.timestamp,
                variable_id: o.variable,
                value: o.value,
            })
            .map_err(|e| DataError::Invalid(e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| DataError::Invalid(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Reads a tuple file. Rows may come in any order; samples keep the order of
/// their first row.
pub fn load_tuples(path: &Path, num_variables: usize, total_span: f64) -> Result<Corpus> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => DataError::io(path, io),
        other => DataError::Invalid(format!("{}: {other:?}", path.display())),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| DataError::Invalid(format!("{}: {e}", path.display())))?
        .clone();
    let expected = ["sample_id", "timestamp", "variable_id", "value"];
    if headers.iter().map(str::trim).ne(expected) {
        return Err(DataError::Malformed {
            path: path.into(),
            line: 1,
            reason: format!("expected header {}", expected.join(",")),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<ObservationTuple>> = HashMap::new();
    for record in reader.deserialize::<Row>() {
        let row = record.map_err(|e| DataError::Malformed {
            path: path.into(),
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        if row.variable_id >= num_variables {
            return Err(DataError::Invalid(format!(
                "{}: sample {} uses unknown variable id {} (dataset has {num_variables})",
                path.display(),
                row.sample_id,
                row.variable_id
            )));
        }
        let obs = ObservationTuple::new(row.timestamp, row.value, row.variable_id);
        match grouped.get_mut(&row.sample_id) {
            Some(list) => list.push(obs),
            None => {
                order.push(row.sample_id.clone());
                grouped.insert(row.sample_id, vec![obs]);
            }
        }
    }
    if order.is_empty() {
        return Err(DataError::EmptyCorpus { path: path.into() });
    }
    let samples = order
        .into_iter()
        .map(|id| {
            let obs = grouped.remove(&id).unwrap_or_default();
            RawSample::new(id, obs, total_span, num_variables)
        })
        .collect::<reimts_core::Result<Vec<_>>>()?;
    Ok(Corpus {
        num_variables,
        total_span,
        samples,
    })
}
