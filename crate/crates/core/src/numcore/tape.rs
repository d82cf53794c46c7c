//! Recorded-tape reverse-mode differentiation over 2-D `f64` arrays.
//!
//! Every operation appends one node holding its forward value. Leaves may
//! borrow their storage from a [`Tensor`], so binding a large embedding table
//! costs nothing. [`Tape::backward`] walks the nodes once, newest first.

use std::borrow::Cow;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use crate::error::{GrapeError, Result};
use crate::numcore::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx as usize
    }
}

/// Boolean attention mask; `true` means the entry may be attended to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(GrapeError::dim("mask", &[rows, cols], &[allowed.len()]));
        }
        Ok(Mask {
            rows,
            cols,
            allowed,
        })
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    /// Lower-triangular mask over `w` positions whose first `pad` positions
    /// are padding. Real queries see real keys at or before themselves; a
    /// padding query sees only itself so its row stays well-defined.
    pub fn causal(w: usize, pad: usize) -> Self {
        let mut allowed = vec![false; w * w];
        for t in 0..w {
            for s in 0..=t {
                allowed[t * w + s] = if t < pad { s == t } else { s >= pad };
            }
        }
        Mask {
            rows: w,
            cols: w,
            allowed,
        }
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.allowed[r * self.cols + c]
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    AffineScalar { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    MaskedSoftmax(Var),
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    Dot(Var, Var),
    Select(Var, usize),
    WeightedSum(Var, Vec<Var>),
    AddN(Vec<Var>),
    StopGradient,
}

struct Node<'a> {
    value: Cow<'a, [f64]>,
    rows: usize,
    cols: usize,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of forward operations.
pub struct Tape<'a> {
    id: u32,
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> Result<&Node<'a>> {
        if v.tape != self.id {
            return Err(GrapeError::Backward(
                "variable belongs to a detached tape".into(),
            ));
        }
        self.nodes
            .get(v.idx as usize)
            .ok_or_else(|| GrapeError::Backward("unknown variable".into()))
    }

    fn push(&mut self, value: Cow<'a, [f64]>, rows: usize, cols: usize, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        debug_assert!(
            value.iter().all(|v| v.is_finite()),
            "non-finite forward value in {op:?}"
        );
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            needs_grad,
        });
        Var { tape: self.id, idx }
    }

    fn push_owned(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op, needs_grad: bool) -> Var {
        self.push(Cow::Owned(value), rows, cols, op, needs_grad)
    }

    /// Binds a tensor as a leaf without copying it.
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(Cow::Borrowed(t.values()), t.rows(), t.cols(), Op::Leaf, needs)
    }

    /// Copies a tensor in as a leaf.
    pub fn leaf_owned(&mut self, t: &Tensor) -> Var {
        let needs = t.requires_grad();
        self.push_owned(t.values().to_vec(), t.rows(), t.cols(), Op::Leaf, needs)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<Var> {
        if values.len() != rows * cols {
            return Err(GrapeError::dim("constant", &[rows, cols], &[values.len()]));
        }
        Ok(self.push_owned(values, rows, cols, Op::Leaf, false))
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push_owned(vec![v], 1, 1, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Result<&[f64]> {
        Ok(&self.node(v)?.value)
    }

    pub fn shape(&self, v: Var) -> Result<[usize; 2]> {
        let n = self.node(v)?;
        Ok([n.rows, n.cols])
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let n = self.node(v)?;
        if n.value.len() != 1 {
            return Err(GrapeError::dim("scalar_value", &[n.rows, n.cols], &[1, 1]));
        }
        Ok(n.value[0])
    }

    /// Gradient of the last backward pass with respect to `v`, if it
    /// participates in the gradient flow.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        if v.tape != self.id {
            return None;
        }
        self.grads.get(v.idx as usize)?.as_deref()
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.idx as usize].needs_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if na.rows != nb.rows || na.cols != nb.cols {
            return Err(GrapeError::dim(op, &[na.rows, na.cols], &[nb.rows, nb.cols]));
        }
        Ok((na.rows, na.cols))
    }

    fn expect_scalar(&self, op: &'static str, v: Var) -> Result<()> {
        let n = self.node(v)?;
        if n.rows * n.cols != 1 {
            return Err(GrapeError::dim(op, &[n.rows, n.cols], &[1, 1]));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if na.cols != nb.rows {
            return Err(GrapeError::dim("matmul", &[na.rows, na.cols], &[nb.rows, nb.cols]));
        }
        let (p, q, r) = (na.rows, na.cols, nb.cols);
        let mut out = vec![0.0; p * r];
        matmul_into(&na.value, &nb.value, p, q, r, &mut out);
        let needs = self.needs(&[a, b]);
        Ok(self.push_owned(out, p, r, Op::MatMul(a, b), needs))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if na.cols != nb.cols {
            return Err(GrapeError::dim("matmul_nt", &[na.rows, na.cols], &[nb.rows, nb.cols]));
        }
        let (p, q, r) = (na.rows, na.cols, nb.rows);
        let mut out = vec![0.0; p * r];
        matmul_nt_into(&na.value, &nb.value, p, q, r, &mut out);
        let needs = self.needs(&[a, b]);
        Ok(self.push_owned(out, p, r, Op::MatMulNt(a, b), needs))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, rec: Op) -> Result<Var> {
        let (rows, cols) = self.same_shape(op, a, b)?;
        let out: Vec<f64> = self.nodes[a.idx as usize]
            .value
            .iter()
            .zip(self.nodes[b.idx as usize].value.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(&[a, b]);
        Ok(self.push_owned(out, rows, cols, rec, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(bias)?);
        if nb.rows != 1 || nb.cols != na.cols {
            return Err(GrapeError::dim("add_row", &[na.rows, na.cols], &[nb.rows, nb.cols]));
        }
        let (rows, cols) = (na.rows, na.cols);
        let mut out = na.value.to_vec();
        for row in out.chunks_mut(cols) {
            for (o, b) in row.iter_mut().zip(nb.value.iter()) {
                *o += b;
            }
        }
        let needs = self.needs(&[a, bias]);
        Ok(self.push_owned(out, rows, cols, Op::AddRow(a, bias), needs))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let n = self.node(a)?;
        let (rows, cols) = (n.rows, n.cols);
        let out = n.value.iter().map(|x| x * c).collect();
        let needs = self.needs(&[a]);
        Ok(self.push_owned(out, rows, cols, Op::Scale(a, c), needs))
    }

    /// Multiplies every entry of `a` by the scalar node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        self.expect_scalar("scale_by", s)?;
        let k = self.nodes[s.idx as usize].value[0];
        let n = self.node(a)?;
        let (rows, cols) = (n.rows, n.cols);
        let out = n.value.iter().map(|x| x * k).collect();
        let needs = self.needs(&[a, s]);
        Ok(self.push_owned(out, rows, cols, Op::ScaleBy(a, s), needs))
    }

    /// `x * w + b` elementwise with scalar nodes `w` and `b`.
    pub fn affine_scalar(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.expect_scalar("affine_scalar", w)?;
        self.expect_scalar("affine_scalar", b)?;
        let (wv, bv) = (
            self.nodes[w.idx as usize].value[0],
            self.nodes[b.idx as usize].value[0],
        );
        let n = self.node(x)?;
        let (rows, cols) = (n.rows, n.cols);
        let out = n.value.iter().map(|v| v * wv + bv).collect();
        let needs = self.needs(&[x, w, b]);
        Ok(self.push_owned(out, rows, cols, Op::AffineScalar { x, w, b }, needs))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, rec: Op) -> Result<Var> {
        let n = self.node(a)?;
        let (rows, cols) = (n.rows, n.cols);
        let out = n.value.iter().map(|&x| f(x)).collect();
        let needs = self.needs(&[a]);
        Ok(self.push_owned(out, rows, cols, rec, needs))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    /// `log σ(x)`, computed without overflow for large `|x|`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, log_sigmoid, Op::LogSigmoid(a))
    }

    /// Row-wise softmax over allowed entries; disallowed entries are exactly 0.
    pub fn masked_softmax(&mut self, logits: Var, mask: Arc<Mask>) -> Result<Var> {
        let n = self.node(logits)?;
        if [n.rows, n.cols] != mask.shape() {
            return Err(GrapeError::dim("masked_softmax", &[n.rows, n.cols], &mask.shape()));
        }
        let (rows, cols) = (n.rows, n.cols);
        let out = masked_softmax_values(&n.value, rows, cols, &mask)?;
        let needs = self.needs(&[logits]);
        Ok(self.push_owned(out, rows, cols, Op::MaskedSoftmax(logits), needs))
    }

    /// Softmax over all entries of a `1 x k` row.
    pub fn softmax_row(&mut self, a: Var) -> Result<Var> {
        let [r, c] = self.shape(a)?;
        if r != 1 {
            return Err(GrapeError::dim("softmax_row", &[r, c], &[1, c]));
        }
        self.masked_softmax(a, Arc::new(Mask::full(1, c)))
    }

    /// Gathers rows of `table`; the backward pass scatter-adds.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let n = self.node(table)?;
        let (rows, cols) = (n.rows, n.cols);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(GrapeError::Index { id, len: rows });
            }
            out.extend_from_slice(&n.value[id * cols..(id + 1) * cols]);
        }
        if ids.is_empty() {
            return Err(GrapeError::dim("gather", &[rows, cols], &[0]));
        }
        let needs = self.needs(&[table]);
        Ok(self.push_owned(out, ids.len(), cols, Op::Gather(table, ids.to_vec()), needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| GrapeError::dim("concat_cols", &[0], &[0]))?;
        let rows = self.node(first)?.rows;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let n = self.node(p)?;
            if n.rows != rows {
                return Err(GrapeError::dim("concat_cols", &[rows], &[n.rows, n.cols]));
            }
            widths.push(n.cols);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[p.idx as usize].value[r * w..(r + 1) * w]);
            }
        }
        let needs = self.needs(parts);
        Ok(self.push_owned(out, rows, total, Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.node(a)?.value.iter().sum();
        let needs = self.needs(&[a]);
        Ok(self.push_owned(vec![s], 1, 1, Op::Sum(a), needs))
    }

    /// Sum of the elementwise product of two same-shape nodes.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let s = self.nodes[a.idx as usize]
            .value
            .iter()
            .zip(self.nodes[b.idx as usize].value.iter())
            .map(|(x, y)| x * y)
            .sum();
        let needs = self.needs(&[a, b]);
        Ok(self.push_owned(vec![s], 1, 1, Op::Dot(a, b), needs))
    }

    /// Flat element `i` of `a` as a scalar node.
    pub fn select(&mut self, a: Var, i: usize) -> Result<Var> {
        let n = self.node(a)?;
        let v = *n
            .value
            .get(i)
            .ok_or(GrapeError::Index { id: i, len: n.value.len() })?;
        let needs = self.needs(&[a]);
        Ok(self.push_owned(vec![v], 1, 1, Op::Select(a, i), needs))
    }

    /// `Σ_k weights[k] · items[k]` for a `1 x K` weight row.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let nw = self.node(weights)?;
        if nw.rows != 1 || nw.cols != items.len() || items.is_empty() {
            return Err(GrapeError::dim("weighted_sum", &[nw.rows, nw.cols], &[items.len()]));
        }
        let w = nw.value.to_vec();
        let [rows, cols] = self.shape(items[0])?;
        let mut out = vec![0.0; rows * cols];
        for (&it, &wk) in items.iter().zip(&w) {
            self.same_shape("weighted_sum", items[0], it)?;
            for (o, x) in out.iter_mut().zip(self.nodes[it.idx as usize].value.iter()) {
                *o += wk * x;
            }
        }
        let mut deps = items.to_vec();
        deps.push(weights);
        let needs = self.needs(&deps);
        Ok(self.push_owned(out, rows, cols, Op::WeightedSum(weights, items.to_vec()), needs))
    }

    /// Sum of same-shape nodes.
    pub fn add_n(&mut self, items: &[Var]) -> Result<Var> {
        let first = *items
            .first()
            .ok_or_else(|| GrapeError::dim("add_n", &[0], &[0]))?;
        let [rows, cols] = self.shape(first)?;
        let mut out = vec![0.0; rows * cols];
        for &it in items {
            self.same_shape("add_n", first, it)?;
            for (o, x) in out.iter_mut().zip(self.nodes[it.idx as usize].value.iter()) {
                *o += x;
            }
        }
        let needs = self.needs(items);
        Ok(self.push_owned(out, rows, cols, Op::AddN(items.to_vec()), needs))
    }

    /// Identity in the forward pass, blocks gradient flow.
    pub fn stop_gradient(&mut self, a: Var) -> Result<Var> {
        let n = self.node(a)?;
        let (rows, cols) = (n.rows, n.cols);
        let out = n.value.to_vec();
        Ok(self.push_owned(out, rows, cols, Op::StopGradient, false))
    }

    /// Populates gradients of every node that depends on a trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(GrapeError::Backward(
                "backward already ran on this tape".into(),
            ));
        }
        let n = self.node(loss)?;
        if n.value.len() != 1 {
            return Err(GrapeError::Backward(format!(
                "loss must be scalar, got {}x{}",
                n.rows, n.cols
            )));
        }
        self.backward_done = true;
        let top = loss.idx as usize;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[top] = Some(vec![1.0]);

        for i in (0..=top).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            debug_assert!(g.iter().all(|v| v.is_finite()), "non-finite gradient");
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| -> &[f64] { &self.nodes[v.idx as usize].value };
        let dims = |v: Var| -> (usize, usize) {
            let n = &self.nodes[v.idx as usize];
            (n.rows, n.cols)
        };
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &self.nodes[v.idx as usize];
            if !n.needs_grad {
                return;
            }
            let slot = grads[v.idx as usize].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(slot);
        };

        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            &Op::MatMul(a, b) => {
                let (p, q) = dims(a);
                let r = dims(b).1;
                acc(a, &mut |da| matmul_nt_acc(g, val(b), p, r, q, da));
                acc(b, &mut |db| matmul_tn_acc(val(a), g, q, p, r, db));
            }
            &Op::MatMulNt(a, b) => {
                let (p, q) = dims(a);
                let r = dims(b).0;
                acc(a, &mut |da| matmul_acc(g, val(b), p, r, q, da));
                acc(b, &mut |db| matmul_tn_acc(g, val(a), r, p, q, db));
            }
            &Op::Add(a, b) => {
                acc(a, &mut |d| add_into(d, g));
                acc(b, &mut |d| add_into(d, g));
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |d| add_into(d, g));
                acc(b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            &Op::Mul(a, b) => {
                acc(a, &mut |d| {
                    for ((x, gy), y) in d.iter_mut().zip(g).zip(val(b)) {
                        *x += gy * y;
                    }
                });
                acc(b, &mut |d| {
                    for ((x, gy), y) in d.iter_mut().zip(g).zip(val(a)) {
                        *x += gy * y;
                    }
                });
            }
            &Op::AddRow(a, bias) => {
                acc(a, &mut |d| add_into(d, g));
                let cols = dims(bias).1;
                acc(bias, &mut |d| {
                    for row in g.chunks(cols) {
                        add_into(d, row);
                    }
                });
            }
            &Op::Scale(a, c) => {
                acc(a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += c * y));
            }
            &Op::ScaleBy(a, s) => {
                let k = val(s)[0];
                acc(a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += k * y));
                acc(s, &mut |d| d[0] += dot(g, val(a)));
            }
            &Op::AffineScalar { x, w, b } => {
                let wv = val(w)[0];
                acc(x, &mut |d| d.iter_mut().zip(g).for_each(|(o, y)| *o += wv * y));
                acc(w, &mut |d| d[0] += dot(g, val(x)));
                acc(b, &mut |d| d[0] += g.iter().sum::<f64>());
            }
            &Op::Relu(a) => {
                acc(a, &mut |d| {
                    for ((o, y), x) in d.iter_mut().zip(g).zip(val(a)) {
                        if *x > 0.0 {
                            *o += y;
                        }
                    }
                });
            }
            &Op::Sigmoid(a) => {
                let out = &node.value;
                acc(a, &mut |d| {
                    for ((o, y), s) in d.iter_mut().zip(g).zip(out.iter()) {
                        *o += y * s * (1.0 - s);
                    }
                });
            }
            &Op::LogSigmoid(a) => {
                acc(a, &mut |d| {
                    for ((o, y), x) in d.iter_mut().zip(g).zip(val(a)) {
                        *o += y * sigmoid(-x);
                    }
                });
            }
            Op::MaskedSoftmax(a) => {
                let out = &node.value;
                let cols = node.cols;
                acc(*a, &mut |d| {
                    for ((drow, grow), yrow) in d
                        .chunks_mut(cols)
                        .zip(g.chunks(cols))
                        .zip(out.chunks(cols))
                    {
                        let inner = dot(grow, yrow);
                        for ((o, gy), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *o += y * (gy - inner);
                        }
                    }
                });
            }
            Op::Gather(table, ids) => {
                let cols = node.cols;
                acc(*table, &mut |d| {
                    for (k, &id) in ids.iter().enumerate() {
                        add_into(&mut d[id * cols..(id + 1) * cols], &g[k * cols..(k + 1) * cols]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = (node.rows, node.cols);
                let mut off = 0;
                for &p in parts {
                    let w = dims(p).1;
                    acc(p, &mut |d| {
                        for r in 0..rows {
                            add_into(&mut d[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w]);
                        }
                    });
                    off += w;
                }
            }
            &Op::Sum(a) => {
                let s = g[0];
                acc(a, &mut |d| d.iter_mut().for_each(|x| *x += s));
            }
            &Op::Dot(a, b) => {
                let s = g[0];
                acc(a, &mut |d| d.iter_mut().zip(val(b)).for_each(|(x, y)| *x += s * y));
                acc(b, &mut |d| d.iter_mut().zip(val(a)).for_each(|(x, y)| *x += s * y));
            }
            &Op::Select(a, k) => {
                acc(a, &mut |d| d[k] += g[0]);
            }
            Op::WeightedSum(weights, items) => {
                let w = val(*weights);
                for (k, &it) in items.iter().enumerate() {
                    let wk = w[k];
                    acc(it, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += wk * y));
                }
                acc(*weights, &mut |d| {
                    for (k, &it) in items.iter().enumerate() {
                        d[k] += dot(g, val(it));
                    }
                });
            }
            Op::AddN(items) => {
                for &it in items {
                    acc(it, &mut |d| add_into(d, g));
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(d: &mut [f64], g: &[f64]) {
    d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
}

/// Row-wise softmax restricted to allowed entries, stabilized by the row max.
pub fn masked_softmax_values(logits: &[f64], rows: usize, cols: usize, mask: &Mask) -> Result<Vec<f64>> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &logits[r * cols..(r + 1) * cols];
        let mut max = f64::NEG_INFINITY;
        for (c, &x) in row.iter().enumerate() {
            if mask.get(r, c) && x > max {
                max = x;
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(GrapeError::DegenerateMask { row: r });
        }
        let o = &mut out[r * cols..(r + 1) * cols];
        let mut total = 0.0;
        for (c, &x) in row.iter().enumerate() {
            if mask.get(r, c) {
                let e = (x - max).exp();
                o[c] = e;
                total += e;
            }
        }
        for (c, v) in o.iter_mut().enumerate() {
            if mask.get(r, c) {
                *v /= total;
            }
        }
    }
    Ok(out)
}

/// `out += a[p×q] · b[q×r]`
pub fn matmul_into(a: &[f64], b: &[f64], p: usize, q: usize, r: usize, out: &mut [f64]) {
    for i in 0..p {
        let orow = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * r..(k + 1) * r];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// `out += a[p×q] · b[r×q]ᵀ`
pub fn matmul_nt_into(a: &[f64], b: &[f64], p: usize, q: usize, r: usize, out: &mut [f64]) {
    for i in 0..p {
        let arow = &a[i * q..(i + 1) * q];
        for j in 0..r {
            out[i * r + j] += dot(arow, &b[j * q..(j + 1) * q]);
        }
    }
}

fn matmul_acc(a: &[f64], b: &[f64], p: usize, q: usize, r: usize, out: &mut [f64]) {
    matmul_into(a, b, p, q, r, out)
}

fn matmul_nt_acc(a: &[f64], b: &[f64], p: usize, q: usize, r: usize, out: &mut [f64]) {
    matmul_nt_into(a, b, p, q, r, out)
}

/// `out += a[p×q]ᵀ · b[p×r]`, giving `q×r`.
fn matmul_tn_acc(a: &[f64], b: &[f64], q: usize, p: usize, r: usize, out: &mut [f64]) {
    for i in 0..p {
        let brow = &b[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let orow = &mut out[k * r..(k + 1) * r];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}
