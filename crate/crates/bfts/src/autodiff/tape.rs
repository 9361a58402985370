//! Reverse-mode differentiation on an explicit, eagerly-evaluated tape.
//!
//! A `Tape` owns every tensor of one computation. Operations append a node,
//! compute its values immediately, and record a backward rule. `backward`
//! walks the tape in reverse; `recompute_forward` replays the recorded
//! computation (dropout masks included) against possibly-updated leaf
//! values, which is what the finite-difference oracle and the ascent
//! monitor rely on.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::matrix::{matmul_into, matmul_transpose_a_into, matmul_transpose_b_into, Matrix};
use crate::error::{Error, Result};

/// Inputs to `log` are clamped to this floor so saturated probabilities
/// never produce infinities. Gradients are gated to zero in the clamped
/// region.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a tensor on its owning tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(TensorId, TensorId),
    Add(TensorId, TensorId),
    AddRowBias(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    Scale(TensorId, f64),
    AddScalar(TensorId, f64),
    Relu(TensorId),
    Sigmoid(TensorId),
    Log(TensorId),
    Exp(TensorId),
    RowSoftmax(TensorId),
    Mean(TensorId),
    Sum(TensorId),
    ConcatRows(TensorId, TensorId),
    SelectRows(TensorId, Vec<usize>),
    /// Stored per-element factors: 0.0 for dropped entries, 1/(1-rate) for
    /// kept ones (inverted dropout).
    Dropout(TensorId, Vec<f64>),
}

/// One tape node: shape, forward values, and (for differentiable nodes) an
/// accumulated gradient.
#[derive(Debug)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

impl Tensor {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    fn is_leaf(&self) -> bool {
        matches!(self.op, Op::Leaf)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        self.nodes[id.0].shape()
    }

    /// Value of a 1x1 tensor.
    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].values.len(), 1);
        self.nodes[id.0].values[0]
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    // ---- leaves -----------------------------------------------------

    pub fn leaf(&mut self, m: &Matrix, requires_grad: bool) -> TensorId {
        self.push(m.rows(), m.cols(), m.data().to_vec(), requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, m: &Matrix) -> TensorId {
        self.leaf(m, false)
    }

    pub fn param(&mut self, m: &Matrix) -> TensorId {
        self.leaf(m, true)
    }

    /// Constant n x 1 column.
    pub fn constant_column(&mut self, values: &[f64]) -> TensorId {
        self.push(values.len(), 1, values.to_vec(), false, Op::Leaf)
    }

    /// Overwrite a leaf's values. Downstream nodes are stale until
    /// `recompute_forward` runs.
    pub fn set_leaf(&mut self, id: TensorId, values: &[f64]) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !node.is_leaf() {
            return Err(Error::shape("set_leaf", "not a leaf tensor"));
        }
        if values.len() != node.values.len() {
            return Err(Error::shape(
                "set_leaf",
                format!("expected {} values, got {}", node.values.len(), values.len()),
            ));
        }
        node.values.copy_from_slice(values);
        Ok(())
    }

    // ---- forward ----------------------------------------------------

    fn push(
        &mut self,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        requires_grad: bool,
        op: Op,
    ) -> TensorId {
        debug_assert!(
            values.iter().all(|v| v.is_finite()),
            "non-finite forward value"
        );
        self.nodes.push(Tensor {
            rows,
            cols,
            values,
            grad: None,
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn req(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn record(&mut self, rows: usize, cols: usize, op: Op) -> TensorId {
        let req = self.req(&op_inputs(&op));
        let mut out = vec![0.0; rows * cols];
        eval_op(&op, &self.nodes, &mut out);
        self.push(rows, cols, out, req, op)
    }

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: TensorId,
        b: TensorId,
        op: Op,
    ) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (ar, ac) != (br, bc) {
            return Err(Error::shape(name, format!("{}x{} vs {}x{}", ar, ac, br, bc)));
        }
        Ok(self.record(ar, ac, op))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::shape("matmul", format!("{}x{} * {}x{}", ar, ac, br, bc)));
        }
        Ok(self.record(ar, bc, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("add", a, b, Op::Add(a, b))
    }

    /// `a[m x n] + bias[1 x n]` broadcast over rows.
    pub fn add_row_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(bias);
        if br != 1 || bc != ac {
            return Err(Error::shape(
                "add_row_bias",
                format!("{}x{} + {}x{}", ar, ac, br, bc),
            ));
        }
        Ok(self.record(ar, ac, Op::AddRowBias(a, bias)))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("sub", a, b, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("mul", a, b, Op::Mul(a, b))
    }

    /// Elementwise `a / b`. Division by zero is a caller error; the result
    /// would fail the finiteness check.
    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("div", a, b, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: TensorId, factor: f64) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        Ok(self.record(ar, ac, Op::Scale(a, factor)))
    }

    pub fn add_scalar(&mut self, a: TensorId, value: f64) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        Ok(self.record(ar, ac, Op::AddScalar(a, value)))
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        Ok(self.record(ar, ac, Op::Relu(a)))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        Ok(self.record(ar, ac, Op::Sigmoid(a)))
    }

    /// Natural log of `max(x, LOG_CLAMP)`.
    pub fn log(&mut self, a: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        Ok(self.record(ar, ac, Op::Log(a)))
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        Ok(self.record(ar, ac, Op::Exp(a)))
    }

    pub fn row_softmax(&mut self, a: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        if ac == 0 {
            return Err(Error::shape("row_softmax", "zero columns"));
        }
        Ok(self.record(ar, ac, Op::RowSoftmax(a)))
    }

    pub fn mean(&mut self, a: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        if ar * ac == 0 {
            return Err(Error::Degenerate("mean over an empty tensor".into()));
        }
        Ok(self.record(1, 1, Op::Mean(a)))
    }

    pub fn sum(&mut self, a: TensorId) -> Result<TensorId> {
        Ok(self.record(1, 1, Op::Sum(a)))
    }

    pub fn concat_rows(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != bc {
            return Err(Error::shape(
                "concat_rows",
                format!("{}x{} over {}x{}", ar, ac, br, bc),
            ));
        }
        Ok(self.record(ar + br, ac, Op::ConcatRows(a, b)))
    }

    /// Keep the rows where `mask` is true, preserving order.
    pub fn select_rows(&mut self, a: TensorId, mask: &[bool]) -> Result<TensorId> {
        let (ar, ac) = self.shape(a);
        if mask.len() != ar {
            return Err(Error::shape(
                "select_rows",
                format!("mask length {} for {} rows", mask.len(), ar),
            ));
        }
        let indices: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        let k = indices.len();
        Ok(self.record(k, ac, Op::SelectRows(a, indices)))
    }

    /// Inverted dropout: surviving entries are scaled by 1/(1-rate) at
    /// sampling time so evaluation needs no rescaling. `rate == 0` is the
    /// identity and records nothing.
    pub fn dropout(&mut self, a: TensorId, rate: f64, rng: &mut ChaCha8Rng) -> Result<TensorId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {rate} not in [0,1)")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let (ar, ac) = self.shape(a);
        let keep_scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..ar * ac)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        Ok(self.record(ar, ac, Op::Dropout(a, mask)))
    }

    /// Recompute every non-leaf node in recorded order. Stored dropout
    /// masks and row selections replay unchanged, so two passes over
    /// identical leaves are bitwise identical.
    pub fn recompute_forward(&mut self) {
        for i in 0..self.nodes.len() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if node.is_leaf() {
                continue;
            }
            let mut out = std::mem::take(&mut node.values);
            eval_op_split(&node.op, before, &mut out);
            debug_assert!(out.iter().all(|v| v.is_finite()), "non-finite replay value");
            node.values = out;
        }
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Accumulate dloss/dtensor into every tensor with `requires_grad`
    /// reachable from `loss`. Repeated calls accumulate: each call adds
    /// exactly one copy of the gradient (pass-local adjoints are computed
    /// in scratch buffers and then folded into the persistent grads).
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let node = &self.nodes[loss.0];
        if node.shape() != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {}x{}", node.rows, node.cols),
            ));
        }
        if !node.requires_grad {
            return Ok(());
        }
        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if adjoints[i].is_none() {
                continue;
            }
            for id in op_inputs(&self.nodes[i].op) {
                let input = &self.nodes[id.0];
                if input.requires_grad && adjoints[id.0].is_none() {
                    adjoints[id.0] = Some(vec![0.0; input.values.len()]);
                }
            }
            let (lower, upper) = adjoints.split_at_mut(i);
            let gout = upper[0].as_deref().unwrap();
            let node = &self.nodes[i];
            backprop(&node.op, &node.values, gout, node.rows, node.cols, &self.nodes, lower);
        }

        for (i, adj) in adjoints.into_iter().enumerate() {
            let Some(adj) = adj else { continue };
            let node = &mut self.nodes[i];
            match node.grad.as_mut() {
                Some(g) => accumulate(g, &adj),
                None => node.grad = Some(adj),
            }
        }
        Ok(())
    }
}

fn op_inputs(op: &Op) -> Vec<TensorId> {
    match op {
        Op::Leaf => vec![],
        Op::Matmul(a, b)
        | Op::Add(a, b)
        | Op::AddRowBias(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Div(a, b)
        | Op::ConcatRows(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::AddScalar(a, _)
        | Op::Relu(a)
        | Op::Sigmoid(a)
        | Op::Log(a)
        | Op::Exp(a)
        | Op::RowSoftmax(a)
        | Op::Mean(a)
        | Op::Sum(a)
        | Op::SelectRows(a, _)
        | Op::Dropout(a, _) => vec![*a],
    }
}

fn eval_op(op: &Op, nodes: &[Tensor], out: &mut [f64]) {
    eval_op_split(op, nodes, out);
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Compute `op` into `out`, reading inputs from `before` (all inputs have
/// smaller indices than the output node).
fn eval_op_split(op: &Op, before: &[Tensor], out: &mut [f64]) {
    match op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (na, nb) = (&before[a.0], &before[b.0]);
            out.iter_mut().for_each(|v| *v = 0.0);
            matmul_into(out, &na.values, na.rows, na.cols, &nb.values, nb.cols);
        }
        Op::Add(a, b) => {
            let (na, nb) = (&before[a.0], &before[b.0]);
            for ((o, &x), &y) in out.iter_mut().zip(&na.values).zip(&nb.values) {
                *o = x + y;
            }
        }
        Op::AddRowBias(a, b) => {
            let (na, nb) = (&before[a.0], &before[b.0]);
            let n = na.cols;
            for r in 0..na.rows {
                for c in 0..n {
                    out[r * n + c] = na.values[r * n + c] + nb.values[c];
                }
            }
        }
        Op::Sub(a, b) => {
            let (na, nb) = (&before[a.0], &before[b.0]);
            for ((o, &x), &y) in out.iter_mut().zip(&na.values).zip(&nb.values) {
                *o = x - y;
            }
        }
        Op::Mul(a, b) => {
            let (na, nb) = (&before[a.0], &before[b.0]);
            for ((o, &x), &y) in out.iter_mut().zip(&na.values).zip(&nb.values) {
                *o = x * y;
            }
        }
        Op::Div(a, b) => {
            let (na, nb) = (&before[a.0], &before[b.0]);
            for ((o, &x), &y) in out.iter_mut().zip(&na.values).zip(&nb.values) {
                *o = x / y;
            }
        }
        Op::Scale(a, f) => {
            for (o, &x) in out.iter_mut().zip(&before[a.0].values) {
                *o = x * f;
            }
        }
        Op::AddScalar(a, v) => {
            for (o, &x) in out.iter_mut().zip(&before[a.0].values) {
                *o = x + v;
            }
        }
        Op::Relu(a) => {
            for (o, &x) in out.iter_mut().zip(&before[a.0].values) {
                *o = if x > 0.0 { x } else { 0.0 };
            }
        }
        Op::Sigmoid(a) => {
            for (o, &x) in out.iter_mut().zip(&before[a.0].values) {
                *o = stable_sigmoid(x);
            }
        }
        Op::Log(a) => {
            for (o, &x) in out.iter_mut().zip(&before[a.0].values) {
                *o = x.max(LOG_CLAMP).ln();
            }
        }
        Op::Exp(a) => {
            for (o, &x) in out.iter_mut().zip(&before[a.0].values) {
                *o = x.exp();
            }
        }
        Op::RowSoftmax(a) => {
            let na = &before[a.0];
            let n = na.cols;
            for r in 0..na.rows {
                let row = &na.values[r * n..(r + 1) * n];
                let orow = &mut out[r * n..(r + 1) * n];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for (o, &x) in orow.iter_mut().zip(row) {
                    let e = (x - mx).exp();
                    *o = e;
                    total += e;
                }
                for o in orow.iter_mut() {
                    *o /= total;
                }
            }
        }
        Op::Mean(a) => {
            let na = &before[a.0];
            out[0] = na.values.iter().sum::<f64>() / na.values.len() as f64;
        }
        Op::Sum(a) => {
            out[0] = before[a.0].values.iter().sum();
        }
        Op::ConcatRows(a, b) => {
            let na_len = before[a.0].values.len();
            out[..na_len].copy_from_slice(&before[a.0].values);
            out[na_len..].copy_from_slice(&before[b.0].values);
        }
        Op::SelectRows(a, indices) => {
            let na = &before[a.0];
            let n = na.cols;
            for (k, &i) in indices.iter().enumerate() {
                out[k * n..(k + 1) * n].copy_from_slice(&na.values[i * n..(i + 1) * n]);
            }
        }
        Op::Dropout(a, mask) => {
            for ((o, &x), &m) in out.iter_mut().zip(&before[a.0].values).zip(mask) {
                *o = x * m;
            }
        }
    }
}

/// Accumulate pass-local input adjoints for one node. `adj` covers tape
/// indices below the node, `nodes` the whole tape (read-only); an adjoint
/// slot is `Some` exactly when that input participates in the gradient.
fn backprop(
    op: &Op,
    values: &[f64],
    gout: &[f64],
    rows: usize,
    cols: usize,
    nodes: &[Tensor],
    adj: &mut [Option<Vec<f64>>],
) {
    match op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (m, n) = (rows, cols);
            let k = nodes[a.0].cols;
            if let Some(ga) = adj[a.0].as_deref_mut() {
                matmul_transpose_b_into(ga, gout, m, n, &nodes[b.0].values, k);
            }
            if let Some(gb) = adj[b.0].as_deref_mut() {
                matmul_transpose_a_into(gb, &nodes[a.0].values, m, k, gout, n);
            }
        }
        Op::Add(a, b) => {
            if let Some(ga) = adj[a.0].as_deref_mut() {
                accumulate(ga, gout);
            }
            if let Some(gb) = adj[b.0].as_deref_mut() {
                accumulate(gb, gout);
            }
        }
        Op::AddRowBias(a, b) => {
            if let Some(ga) = adj[a.0].as_deref_mut() {
                accumulate(ga, gout);
            }
            if let Some(gb) = adj[b.0].as_deref_mut() {
                for r in 0..rows {
                    for c in 0..cols {
                        gb[c] += gout[r * cols + c];
                    }
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = adj[a.0].as_deref_mut() {
                accumulate(ga, gout);
            }
            if let Some(gb) = adj[b.0].as_deref_mut() {
                for (g, &go) in gb.iter_mut().zip(gout) {
                    *g -= go;
                }
            }
        }
        Op::Mul(a, b) => {
            if let Some(ga) = adj[a.0].as_deref_mut() {
                for ((g, &go), &bv) in ga.iter_mut().zip(gout).zip(&nodes[b.0].values) {
                    *g += go * bv;
                }
            }
            if let Some(gb) = adj[b.0].as_deref_mut() {
                for ((g, &go), &av) in gb.iter_mut().zip(gout).zip(&nodes[a.0].values) {
                    *g += go * av;
                }
            }
        }
        Op::Div(a, b) => {
            if let Some(ga) = adj[a.0].as_deref_mut() {
                for ((g, &go), &bv) in ga.iter_mut().zip(gout).zip(&nodes[b.0].values) {
                    *g += go / bv;
                }
            }
            if let Some(gb) = adj[b.0].as_deref_mut() {
                for (((g, &go), &bv), &ov) in gb
                    .iter_mut()
                    .zip(gout)
                    .zip(&nodes[b.0].values)
                    .zip(values)
                {
                    *g -= go * ov / bv;
                }
            }
        }
        Op::Scale(a, f) => {
            if let Some(ga) = adj[a.0].as_deref_mut() {
                for (g, &go) in ga.iter_mut().zip(gout) {
                    *g += go * f;
                }
            }
        }
        Op::AddScalar(a, _) => {
            if let Some(ga) = adj[a.0].as_deref_mut() {
                accumulate(ga, gout);
            }
        }
        Op::Relu(a) => {
            if let Some(ga) = adj[a.0].as_deref_mut() {
                for ((g, &go), &x) in ga.iter_mut().zip(gout).zip(&nodes[a.0].values) {
                    if x > 0.0 {
                        *g += go;
                    }
                }
            }
        }
        Op::Sigmoid(a) => {
            if let Some(ga) = adj[a.0].as_deref_mut() {
                for ((g, &go), &y) in ga.iter_mut().zip(gout).zip(values) {
                    *g += go * y * (1.0 - y);
                }
            }
        }
        Op::Log(a) => {
            if let Some(ga) = adj[a.0].as_deref_mut() {
                for ((g, &go), &x) in ga.iter_mut().zip(gout).zip(&nodes[a.0].values) {
                    if x > LOG_CLAMP {
                        *g += go / x;
                    }
                }
            }
        }
        Op::Exp(a) => {
            if let Some(ga) = adj[a.0].as_deref_mut() {
                for ((g, &go), &y) in ga.iter_mut().zip(gout).zip(values) {
                    *g += go * y;
                }
            }
        }
        Op::RowSoftmax(a) => {
            if let Some(ga) = adj[a.0].as_deref_mut() {
                for r in 0..rows {
                    let y = &values[r * cols..(r + 1) * cols];
                    let go = &gout[r * cols..(r + 1) * cols];
                    let dot: f64 = y.iter().zip(go).map(|(&yv, &gv)| yv * gv).sum();
                    let grow = &mut ga[r * cols..(r + 1) * cols];
                    for ((g, &yv), &gv) in grow.iter_mut().zip(y).zip(go) {
                        *g += yv * (gv - dot);
                    }
                }
            }
        }
        Op::Mean(a) => {
            if let Some(ga) = adj[a.0].as_deref_mut() {
                let scale = gout[0] / ga.len() as f64;
                for g in ga.iter_mut() {
                    *g += scale;
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = adj[a.0].as_deref_mut() {
                for g in ga.iter_mut() {
                    *g += gout[0];
                }
            }
        }
        Op::ConcatRows(a, b) => {
            let asize = nodes[a.0].values.len();
            if let Some(ga) = adj[a.0].as_deref_mut() {
                accumulate(ga, &gout[..asize]);
            }
            if let Some(gb) = adj[b.0].as_deref_mut() {
                accumulate(gb, &gout[asize..]);
            }
        }
        Op::SelectRows(a, indices) => {
            if let Some(ga) = adj[a.0].as_deref_mut() {
                for (k, &i) in indices.iter().enumerate() {
                    let src = &gout[k * cols..(k + 1) * cols];
                    let dst = &mut ga[i * cols..(i + 1) * cols];
                    accumulate(dst, src);
                }
            }
        }
        Op::Dropout(a, mask) => {
            if let Some(ga) = adj[a.0].as_deref_mut() {
                for ((g, &go), &m) in ga.iter_mut().zip(gout).zip(mask) {
                    *g += go * m;
                }
            }
        }
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
