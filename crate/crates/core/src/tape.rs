//! A small reverse-mode autodiff tape over dense row-major matrices.
//!
//! Every value is a `rows × cols` matrix of `f64`. Nodes are appended in
//! evaluation order, so a reverse sweep over the node list is a valid
//! topological order for backpropagation.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, sigmoid, tanh};
use crate::splitting::RowMap;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous row range `[start, end)`.
pub type Segment = (usize, usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Concat(Vec<Var>),
    VStack(Vec<Var>),
    SliceCols(Var, usize),
    Rows(Var, Arc<RowMap>),
    PickCols(Var, Vec<usize>),
    SegmentPool {
        scores: Var,
        values: Var,
        segments: Arc<Vec<Segment>>,
        weights: Vec<f64>,
    },
    BlockAttention {
        q: Var,
        k: Var,
        v: Var,
        blocks: Arc<Vec<Segment>>,
        scale: f64,
        probs: Vec<Vec<f64>>,
    },
    MaskedMse {
        pred: Var,
        target: Vec<f64>,
        mask: Vec<bool>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every node of a tape.
#[derive(Debug)]
pub struct TapeGrads {
    grads: Vec<Vec<f64>>,
}

impl TapeGrads {
    /// Gradient of `var`, or `None` if the output does not depend on it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        let g = &self.grads[var.0];
        (!g.is_empty()).then_some(g.as_slice())
    }
}

fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    out
}

/// `a · bᵀ` with `a: n×k`, `b: m×k`.
fn matmul_t(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            out[i * m + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `grad += aᵀ · b` with `a: n×k`, `b: n×m`, result `k×m`.
fn add_t_matmul(grad: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            let g = &mut grad[p * m..(p + 1) * m];
            for (o, y) in g.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = exp(*x - max);
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        let n = &self.nodes[var.0];
        (n.rows, n.cols)
    }

    pub fn rows(&self, var: Var) -> usize {
        self.nodes[var.0].rows
    }

    pub fn cols(&self, var: Var) -> usize {
        self.nodes[var.0].cols
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf: an input or a parameter. Gradients are read back with [`TapeGrads::get`].
    pub fn leaf(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape");
        self.push(rows, cols, value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims");
        let value = matmul(self.value(a), self.value(b), n, k, m);
        self.push(n, m, value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.shape(a);
        let (m, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_t inner dims");
        let value = matmul_t(self.value(a), self.value(b), n, k, m);
        self.push(n, m, value, Op::MatMulT(a, b))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let shape = self.shape(a);
        assert_eq!(shape, self.shape(b), "elementwise shapes");
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        self.push(shape.0, shape.1, value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a + 1·b` with `b` a single row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(b), (1, c), "add_row bias shape");
        let bias = self.value(b).to_vec();
        let mut value = self.value(a).to_vec();
        for row in value.chunks_mut(c.max(1)) {
            for (x, y) in row.iter_mut().zip(&bias) {
                *x += y;
            }
        }
        self.push(r, c, value, Op::AddRow(a, b))
    }

    /// `a ⊙ b1ᵀ` with `b` a single column.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(b), (r, 1), "mul_col column shape");
        let col = self.value(b).to_vec();
        let mut value = self.value(a).to_vec();
        if c > 0 {
            for (row, s) in value.chunks_mut(c).zip(&col) {
                for x in row {
                    *x *= s;
                }
            }
        }
        self.push(r, c, value, Op::MulCol(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let value = self.value(a).iter().map(|x| x * s).collect();
        self.push(r, c, value, Op::Scale(a, s))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let value = self.value(a).iter().map(|x| f(*x)).collect();
        self.push(r, c, value, op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    /// Concatenation along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.rows(parts[0]);
        assert!(parts.iter().all(|p| self.rows(*p) == rows), "concat rows");
        let cols: usize = parts.iter().map(|p| self.cols(*p)).sum();
        let mut value = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let c = self.cols(*p);
                value.extend_from_slice(&self.value(*p)[r * c..(r + 1) * c]);
            }
        }
        self.push(rows, cols, value, Op::Concat(parts.to_vec()))
    }

    /// Concatenation along rows.
    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "vstack of nothing");
        let cols = self.cols(parts[0]);
        assert!(parts.iter().all(|p| self.cols(*p) == cols), "vstack cols");
        let rows: usize = parts.iter().map(|p| self.rows(*p)).sum();
        let mut value = Vec::with_capacity(rows * cols);
        for p in parts {
            value.extend_from_slice(self.value(*p));
        }
        self.push(rows, cols, value, Op::VStack(parts.to_vec()))
    }

    /// Columns `[start, end)` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start <= end && end <= c, "slice_cols range");
        let v = self.value(a);
        let mut value = Vec::with_capacity(r * (end - start));
        for row in 0..r {
            value.extend_from_slice(&v[row * c + start..row * c + end]);
        }
        self.push(r, end - start, value, Op::SliceCols(a, start))
    }

    /// Sparse row combination `M · a`.
    pub fn rows_map(&mut self, a: Var, map: Arc<RowMap>) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(r, map.in_rows(), "row map input rows");
        let value = map.apply(self.value(a), c);
        self.push(map.out_rows(), c, value, Op::Rows(a, map))
    }

    /// `out[r] = a[r, cols[r]]`, a single column.
    pub fn pick_cols(&mut self, a: Var, cols: Vec<usize>) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(cols.len(), r, "pick_cols length");
        let v = self.value(a);
        let value = cols
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                assert!(j < c);
                v[i * c + j]
            })
            .collect();
        self.push(r, 1, value, Op::PickCols(a, cols))
    }

    /// Softmax-weighted pooling: for each segment of rows, softmax the
    /// `scores` (a column) inside the segment and sum the matching `values`
    /// rows with those weights. Empty segments give a zero row.
    pub fn segment_pool(&mut self, scores: Var, values: Var, segments: Arc<Vec<Segment>>) -> Var {
        let (n, e) = self.shape(values);
        assert_eq!(self.shape(scores), (n, 1), "segment_pool scores");
        let s = self.value(scores);
        let vals = self.value(values);
        let mut weights = vec![0.0; n];
        let mut value = vec![0.0; segments.len() * e];
        for (g, &(start, end)) in segments.iter().enumerate() {
            if start == end {
                continue;
            }
            weights[start..end].copy_from_slice(&s[start..end]);
            softmax_in_place(&mut weights[start..end]);
            let out = &mut value[g * e..(g + 1) * e];
            for i in start..end {
                let w = weights[i];
                for (o, x) in out.iter_mut().zip(&vals[i * e..(i + 1) * e]) {
                    *o += w * x;
                }
            }
        }
        let rows = segments.len();
        self.push(
            rows,
            e,
            value,
            Op::SegmentPool {
                scores,
                values,
                segments,
                weights,
            },
        )
    }

    /// Scaled dot-product attention restricted to diagonal blocks of rows:
    /// rows of `q` in a block attend only to rows of `k`/`v` in that block.
    pub fn block_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        blocks: Arc<Vec<Segment>>,
        scale: f64,
    ) -> Var {
        let (n, d) = self.shape(q);
        assert_eq!(self.shape(k), (n, d), "attention keys");
        let e = self.cols(v);
        assert_eq!(self.rows(v), n, "attention values");
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut value = vec![0.0; n * e];
        let mut probs = Vec::with_capacity(blocks.len());
        for &(start, end) in blocks.iter() {
            let len = end - start;
            let mut p = matmul_t(&qv[start * d..end * d], &kv[start * d..end * d], len, d, len);
            for row in p.chunks_mut(len.max(1)) {
                for x in row.iter_mut() {
                    *x *= scale;
                }
                softmax_in_place(row);
            }
            let out = matmul(&p, &vv[start * e..end * e], len, len, e);
            value[start * e..end * e].copy_from_slice(&out);
            probs.push(p);
        }
        self.push(
            n,
            e,
            value,
            Op::BlockAttention {
                q,
                k,
                v,
                blocks,
                scale,
                probs,
            },
        )
    }

    /// `(1/Y) Σ_{mask} (pred − target)²`, a `1×1` node. Masked-out positions
    /// are skipped entirely, so they neither contribute nor receive gradient.
    pub fn masked_mse(&mut self, pred: Var, target: Vec<f64>, mask: Vec<bool>) -> Var {
        let p = self.value(pred);
        assert_eq!(p.len(), target.len(), "masked_mse target");
        assert_eq!(p.len(), mask.len(), "masked_mse mask");
        let count = mask.iter().filter(|m| **m).count();
        let mut acc = 0.0;
        for ((x, z), m) in p.iter().zip(&target).zip(&mask) {
            if *m {
                let d = x - z;
                acc += d * d;
            }
        }
        let value = if count == 0 { 0.0 } else { acc / count as f64 };
        self.push(
            1,
            1,
            vec![value],
            Op::MaskedMse {
                pred,
                target,
                mask,
                count,
            },
        )
    }

    /// Backpropagates from `root`, which must be `1×1`.
    pub fn backward(&self, root: Var) -> TapeGrads {
        assert_eq!(self.shape(root), (1, 1), "backward from a scalar");
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[root.0] = vec![1.0];
        for idx in (0..=root.0).rev() {
            if grads[idx].is_empty() {
                continue;
            }
            let g = core::mem::take(&mut grads[idx]);
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = g;
        }
        TapeGrads { grads }
    }

    fn grad_buffer<'g>(&self, grads: &'g mut [Vec<f64>], v: Var) -> &'g mut Vec<f64> {
        if grads[v.0].is_empty() {
            let n = &self.nodes[v.0];
            grads[v.0] = vec![0.0; n.rows * n.cols];
        }
        &mut grads[v.0]
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[idx];
        macro_rules! grad_of {
            ($v:expr) => {
                self.grad_buffer(grads, $v)
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.shape(*a);
                let m = node.cols;
                let av = self.value(*a);
                let bv = self.value(*b);
                {
                    let ga = grad_of!(*a);
                    let gb_t = matmul_t(g, bv, n, m, k);
                    for (x, y) in ga.iter_mut().zip(gb_t) {
                        *x += y;
                    }
                }
                let gb = grad_of!(*b);
                add_t_matmul(gb, av, g, n, k, m);
            }
            Op::MatMulT(a, b) => {
                let (n, k) = self.shape(*a);
                let m = node.cols;
                let av = self.value(*a);
                let bv = self.value(*b);
                {
                    let ga = grad_of!(*a);
                    let t = matmul(g, bv, n, m, k);
                    for (x, y) in ga.iter_mut().zip(t) {
                        *x += y;
                    }
                }
                let gb = grad_of!(*b);
                add_t_matmul(gb, g, av, n, m, k);
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    let ga = grad_of!(v);
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            Op::Sub(a, b) => {
                {
                    let ga = grad_of!(*a);
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                let gb = grad_of!(*b);
                for (x, y) in gb.iter_mut().zip(g) {
                    *x -= y;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                {
                    let ga = grad_of!(*a);
                    for ((x, y), w) in ga.iter_mut().zip(g).zip(bv) {
                        *x += y * w;
                    }
                }
                let gb = grad_of!(*b);
                for ((x, y), w) in gb.iter_mut().zip(g).zip(av) {
                    *x += y * w;
                }
            }
            Op::AddRow(a, b) => {
                let c = node.cols;
                {
                    let ga = grad_of!(*a);
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                let gb = grad_of!(*b);
                if c > 0 {
                    for row in g.chunks(c) {
                        for (x, y) in gb.iter_mut().zip(row) {
                            *x += y;
                        }
                    }
                }
            }
            Op::MulCol(a, b) => {
                let c = node.cols;
                let (av, bv) = (self.value(*a), self.value(*b));
                {
                    let ga = grad_of!(*a);
                    if c > 0 {
                        for ((grow, gr), s) in ga.chunks_mut(c).zip(g.chunks(c)).zip(bv) {
                            for (x, y) in grow.iter_mut().zip(gr) {
                                *x += y * s;
                            }
                        }
                    }
                }
                let gb = grad_of!(*b);
                if c > 0 {
                    for ((x, gr), ar) in gb.iter_mut().zip(g.chunks(c)).zip(av.chunks(c)) {
                        *x += gr.iter().zip(ar).map(|(p, q)| p * q).sum::<f64>();
                    }
                }
            }
            Op::Scale(a, s) => {
                let ga = grad_of!(*a);
                for (x, y) in ga.iter_mut().zip(g) {
                    *x += y * s;
                }
            }
            Op::Tanh(a) => {
                let ga = grad_of!(*a);
                for ((x, y), o) in ga.iter_mut().zip(g).zip(&node.value) {
                    *x += y * (1.0 - o * o);
                }
            }
            Op::Sigmoid(a) => {
                let ga = grad_of!(*a);
                for ((x, y), o) in ga.iter_mut().zip(g).zip(&node.value) {
                    *x += y * o * (1.0 - o);
                }
            }
            Op::Relu(a) => {
                let ga = grad_of!(*a);
                for ((x, y), o) in ga.iter_mut().zip(g).zip(&node.value) {
                    if *o > 0.0 {
                        *x += y;
                    }
                }
            }
            Op::Concat(parts) => {
                let cols = node.cols;
                let mut offset = 0;
                for p in parts {
                    let c = self.cols(*p);
                    let gp = grad_of!(*p);
                    for r in 0..node.rows {
                        let src = &g[r * cols + offset..r * cols + offset + c];
                        for (x, y) in gp[r * c..(r + 1) * c].iter_mut().zip(src) {
                            *x += y;
                        }
                    }
                    offset += c;
                }
            }
            Op::VStack(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.rows(*p) * node.cols;
                    let gp = grad_of!(*p);
                    for (x, y) in gp.iter_mut().zip(&g[offset..offset + n]) {
                        *x += y;
                    }
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let c = self.cols(*a);
                let w = node.cols;
                let ga = grad_of!(*a);
                for r in 0..node.rows {
                    for (x, y) in ga[r * c + start..r * c + start + w].iter_mut().zip(&g[r * w..(r + 1) * w]) {
                        *x += y;
                    }
                }
            }
            Op::Rows(a, map) => {
                let c = node.cols;
                let ga = grad_of!(*a);
                map.apply_transpose_add(g, c, ga);
            }
            Op::PickCols(a, cols) => {
                let c = self.cols(*a);
                let ga = grad_of!(*a);
                for (i, &j) in cols.iter().enumerate() {
                    ga[i * c + j] += g[i];
                }
            }
            Op::SegmentPool {
                scores,
                values,
                segments,
                weights,
            } => {
                let e = node.cols;
                let vals = self.value(*values);
                let mut dscore = vec![0.0; weights.len()];
                {
                    let gv = grad_of!(*values);
                    for (gi, &(start, end)) in segments.iter().enumerate() {
                        let go = &g[gi * e..(gi + 1) * e];
                        let mut weighted = 0.0;
                        for i in start..end {
                            let da: f64 = go
                                .iter()
                                .zip(&vals[i * e..(i + 1) * e])
                                .map(|(p, q)| p * q)
                                .sum();
                            dscore[i] = da;
                            weighted += weights[i] * da;
                            for (x, y) in gv[i * e..(i + 1) * e].iter_mut().zip(go) {
                                *x += weights[i] * y;
                            }
                        }
                        for i in start..end {
                            dscore[i] = weights[i] * (dscore[i] - weighted);
                        }
                    }
                }
                let gs = grad_of!(*scores);
                for (x, y) in gs.iter_mut().zip(dscore) {
                    *x += y;
                }
            }
            Op::BlockAttention {
                q,
                k,
                v,
                blocks,
                scale,
                probs,
            } => {
                let d = self.cols(*q);
                let e = node.cols;
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                for (&(start, end), p) in blocks.iter().zip(probs) {
                    let len = end - start;
                    if len == 0 {
                        continue;
                    }
                    let go = &g[start * e..end * e];
                    {
                        let gv = grad_of!(*v);
                        add_t_matmul(&mut gv[start * e..end * e], p, go, len, len, e);
                    }
                    // dP = dO · Vᵀ, then the softmax Jacobian per row
                    let mut ds = matmul_t(go, &vv[start * e..end * e], len, e, len);
                    for (row, prow) in ds.chunks_mut(len).zip(p.chunks(len)) {
                        let dot: f64 = row.iter().zip(prow).map(|(a, b)| a * b).sum();
                        for (x, pr) in row.iter_mut().zip(prow) {
                            *x = pr * (*x - dot) * scale;
                        }
                    }
                    {
                        let gq = grad_of!(*q);
                        let t = matmul(&ds, &kv[start * d..end * d], len, len, d);
                        for (x, y) in gq[start * d..end * d].iter_mut().zip(t) {
                            *x += y;
                        }
                    }
                    let gk = grad_of!(*k);
                    add_t_matmul(&mut gk[start * d..end * d], &ds, &qv[start * d..end * d], len, len, d);
                }
            }
            Op::MaskedMse {
                pred,
                target,
                mask,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let pv = self.value(*pred);
                let s = 2.0 * g[0] / *count as f64;
                let gp = grad_of!(*pred);
                for (((x, p), z), m) in gp.iter_mut().zip(pv).zip(target).zip(mask) {
                    if *m {
                        *x += s * (p - z);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of d(sum(w ⊙ f(x)))/dx for a tape builder `f`.
    fn check(build: impl Fn(&mut Tape, Var) -> Var, x0: Vec<f64>, rows: usize, cols: usize) {
        let eval = |x: &[f64]| -> (f64, Option<Vec<f64>>) {
            let mut t = Tape::new();
            let x = t.leaf(rows, cols, x.to_vec());
            let y = build(&mut t, x);
            let (r, c) = t.shape(y);
            let w: Vec<f64> = (0..r * c).map(|i| 0.3 + 0.17 * i as f64).collect();
            let ones = t.leaf(1, r, vec![1.0; r]);
            let wmat = t.leaf(r, c, w);
            let prod = t.mul(y, wmat);
            let rowsum = t.matmul(ones, prod);
            let onec = t.leaf(c, 1, vec![1.0; c]);
            let total = t.matmul(rowsum, onec);
            let value = t.value(total)[0];
            let grads = t.backward(total);
            (value, grads.get(x).map(|g| g.to_vec()))
        };
        let (_, analytic) = eval(&x0);
        let analytic = analytic.unwrap_or_else(|| vec![0.0; x0.len()]);
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            xp[i] += h;
            let mut xm = x0.clone();
            xm[i] -= h;
            let numeric = (eval(&xp).0 - eval(&xm).0) / (2.0 * h);
            let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-6);
            assert!(err < 1e-5, "entry {i}: numeric {numeric} analytic {}", analytic[i]);
        }
    }

    fn x(n: usize) -> Vec<f64> {
        (0..n).map(|i| libm::sin(1.3 * i as f64 + 0.4)).collect()
    }

    #[test]
    fn grad_matmul_and_activations() {
        check(
            |t, a| {
                let w = t.leaf(3, 2, x(6));
                let m = t.matmul(a, w);
                let s = t.sigmoid(m);
                let th = t.tanh(s);
                t.relu(th)
            },
            x(12),
            4,
            3,
        );
    }

    #[test]
    fn grad_matmul_t_and_concat() {
        check(
            |t, a| {
                let b = t.matmul_t(a, a);
                let c = t.concat(&[b, a]);
                let bias = t.leaf(1, 6, x(6));
                let d = t.add_row(c, bias);
                t.scale(d, 0.7)
            },
            x(9),
            3,
            3,
        );
    }

    #[test]
    fn grad_mul_col_sub_pick() {
        check(
            |t, a| {
                let w = t.leaf(3, 1, vec![0.5, -0.2, 0.9]);
                let col = t.matmul(a, w);
                let m = t.mul_col(a, col);
                let s = t.sub(m, a);
                let p = t.mul(s, a);
                t.pick_cols(p, vec![0, 2, 1])
            },
            x(9),
            3,
            3,
        );
    }

    #[test]
    fn grad_vstack_slice() {
        check(
            |t, a| {
                let s = t.slice_cols(a, 1, 3);
                let th = t.tanh(s);
                t.vstack(&[th, s, th])
            },
            x(12),
            3,
            4,
        );
    }

    #[test]
    fn grad_segment_pool() {
        check(
            |t, a| {
                let w = t.leaf(2, 1, vec![0.8, -0.4]);
                let scores = t.matmul(a, w);
                t.segment_pool(scores, a, Arc::new(vec![(0, 2), (2, 2), (2, 5)]))
            },
            x(10),
            5,
            2,
        );
    }

    #[test]
    fn grad_block_attention() {
        check(
            |t, a| {
                let wq = t.leaf(2, 2, vec![0.3, -0.5, 0.9, 0.1]);
                let q = t.matmul(a, wq);
                let v = t.tanh(a);
                t.block_attention(q, a, v, Arc::new(vec![(0, 3), (3, 5)]), 0.7)
            },
            x(10),
            5,
            2,
        );
    }

    #[test]
    fn grad_rows_map() {
        let map = Arc::new(RowMap::new(3, 2, vec![(0, 1, 0.5), (2, 0, 2.0), (2, 1, 1.0)]));
        check(move |t, a| t.rows_map(a, map.clone()), x(4), 2, 2);
    }

    #[test]
    fn masked_mse_ignores_masked_positions() {
        let mut t = Tape::new();
        let p = t.leaf(2, 1, vec![3.0, 1.0]);
        let l = t.masked_mse(p, vec![1.0, 1.0], vec![true, false]);
        assert_eq!(t.value(l)[0], 4.0);
        let g = t.backward(l);
        assert_eq!(g.get(p).unwrap(), &[4.0, 0.0]);

        let mut t = Tape::new();
        let p = t.leaf(2, 1, vec![3.0, f64::INFINITY]);
        let l = t.masked_mse(p, vec![1.0, 1.0], vec![true, false]);
        assert_eq!(t.value(l)[0], 4.0);
        assert_eq!(t.backward(l).get(p).unwrap()[1], 0.0);
    }

    #[test]
    fn unrelated_nodes_get_no_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(1, 1, vec![2.0]);
        let b = t.leaf(1, 1, vec![5.0]);
        let c = t.mul(a, a);
        let g = t.backward(c);
        assert_eq!(g.get(a).unwrap(), &[4.0]);
        assert!(g.get(b).is_none());
    }
}
