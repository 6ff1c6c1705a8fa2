//! Named parameter tensors, their gradients, and the binding of a parameter
//! store onto a tape.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, TapeGrads, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Parameters keyed by module path, e.g. `enc.2.gru.w_x`, kept in
/// registration order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Param>", into = "Vec<Param>")]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl TryFrom<Vec<Param>> for ParamStore {
    type Error = Error;

    fn try_from(params: Vec<Param>) -> Result<Self> {
        Self::from_params(params)
    }
}

impl From<ParamStore> for Vec<Param> {
    fn from(store: ParamStore) -> Self {
        store.params
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds the name index after deserialization.
    pub fn from_params(params: Vec<Param>) -> Result<Self> {
        let mut store = Self::new();
        for p in params {
            if p.data.len() != p.rows * p.cols {
                return Err(Error::ShapeMismatch(alloc::format!(
                    "parameter {} holds {} values for {}x{}",
                    p.name,
                    p.data.len(),
                    p.rows,
                    p.cols
                )));
            }
            store.insert(p.name, p.rows, p.cols, p.data)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidConfig(alloc::format!("parameter {name} registered twice")));
        }
        debug_assert_eq!(data.len(), rows * cols);
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            rows,
            cols,
            data,
        });
        Ok(())
    }

    /// Registers a `rows × cols` tensor drawn uniformly from `±bound`.
    pub fn uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) -> Result<()> {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, rows, cols, data)
    }

    /// Glorot-style uniform initialisation for a `fan_in × fan_out` matrix.
    pub fn glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<()> {
        let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        self.uniform(name, fan_in, fan_out, bound, rng)
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Result<()> {
        self.insert(name, rows, cols, vec![0.0; rows * cols])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.position(name).map(|i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.position(name).map(move |i| &mut self.params[i])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub(crate) fn param_at(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    /// Flat copy of every value, in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data.iter().copied()).collect()
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            data: self.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }
}

/// Gradient buffers laid out like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) data: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn get<'a>(&'a self, store: &ParamStore, name: &str) -> Option<&'a [f64]> {
        store.position(name).map(|i| self.data[i].as_slice())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for x in self.data.iter_mut().flatten() {
            *x *= s;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().flatten().map(|x| x * x).sum())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().flatten().all(|x| x.is_finite())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.data.iter().flatten().copied().collect()
    }
}

/// A tape bound to a parameter store. Each parameter becomes a leaf the first
/// time it is requested.
pub struct Graph<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let idx = self
            .store
            .position(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if let Some(v) = self.bound[idx] {
            return Ok(v);
        }
        let p = self.store.param_at(idx);
        let v = self.tape.leaf(p.rows, p.cols, p.data.clone());
        self.bound[idx] = Some(v);
        Ok(v)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        self.tape.leaf(rows, cols, data)
    }

    /// `x · W + b` with parameters `{prefix}.w` and `{prefix}.b`.
    pub fn linear(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w = self.param(&alloc::format!("{prefix}.w"))?;
        let b = self.param(&alloc::format!("{prefix}.b"))?;
        let xw = self.tape.matmul(x, w);
        Ok(self.tape.add_row(xw, b))
    }

    /// Collects leaf gradients into store layout. Parameters the output did
    /// not touch get zeros.
    pub fn gradients(&self, grads: &TapeGrads) -> Gradients {
        let data = self
            .bound
            .iter()
            .enumerate()
            .map(|(i, v)| match v.and_then(|v| grads.get(v)) {
                Some(g) => g.to_vec(),
                None => vec![0.0; self.store.param_at(i).data.len()],
            })
            .collect();
        Gradients { data }
    }
}

/// Registers `{prefix}.w` (Glorot) and a zero `{prefix}.b`.
pub(crate) fn register_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<()> {
    store.glorot(alloc::format!("{prefix}.w"), fan_in, fan_out, rng)?;
    store.zeros(alloc::format!("{prefix}.b"), 1, fan_out)
}
