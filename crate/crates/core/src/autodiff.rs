//! Reverse-mode automatic differentiation on an index-based expression graph.
//!
//! Nodes live in an append-only arena and reference parents by index, so
//! insertion order is already a topological order and adjoint accumulation is
//! deterministic. Values are computed eagerly at construction. The backward
//! pass emits adjoints *as graph nodes* built from the same primitives, which
//! makes higher-order differentiation work by construction: differentiating
//! the nodes produced by one backward pass yields gradients of gradients
//! (Hessian-vector products, meta-gradients through unrolled updates).
//!
//! [`Graph::grad`] evaluates adjoints and then truncates them from the arena
//! (a cheap "no retain graph" mode); [`Graph::grad_nodes`] leaves them in
//! place as differentiable nodes.
//!
//! Graphs are single-threaded; concurrent optimization runs each own a graph.

use crate::error::{CoreError, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    Detach,
    Add,
    Sub,
    Mul,
    Div,
    AddScalar,
    MulScalar(f64),
    PowScalar(f64),
    Tanh,
    Relu,
    Sigmoid,
    Exp,
    Ln,
    Abs,
    Sign,
    Sum,
    RowSum,
    ColSum,
    BroadcastCol,
    BroadcastRow,
    ScalarBroadcast,
    RowBroadcastAdd,
    MatMul,
    Transpose,
    SliceCols(usize),
    PadCols(usize),
    Slice1(usize),
    Pad1(usize),
    ConcatCols,
    Reshape,
    LogSoftmaxRows,
    LstmCell,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Detach => "detach",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::AddScalar => "add_scalar",
            Op::MulScalar(_) => "mul_scalar",
            Op::PowScalar(_) => "pow_scalar",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Abs => "abs",
            Op::Sign => "sign",
            Op::Sum => "sum",
            Op::RowSum => "row_sum",
            Op::ColSum => "col_sum",
            Op::BroadcastCol => "broadcast_col",
            Op::BroadcastRow => "broadcast_row",
            Op::ScalarBroadcast => "scalar_broadcast",
            Op::RowBroadcastAdd => "row_broadcast_add",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::SliceCols(_) => "slice_cols",
            Op::PadCols(_) => "pad_cols",
            Op::Slice1(_) => "slice1",
            Op::Pad1(_) => "pad1",
            Op::ConcatCols => "concat_cols",
            Op::Reshape => "reshape",
            Op::LogSoftmaxRows => "log_softmax_rows",
            Op::LstmCell => "lstm_cell",
        }
    }

    /// Ops through which no gradient flows to parents.
    fn blocks_grad(&self) -> bool {
        matches!(self, Op::Leaf | Op::Const | Op::Detach | Op::Sign)
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    parents: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only expression graph (the tape).
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Current arena watermark; pass to [`Graph::truncate`] to drop every
    /// node created after it.
    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    /// Drops all nodes with index >= `mark`. Callers must not retain ids of
    /// dropped nodes.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
    }

    /// A differentiable input node.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], value, true)
    }

    /// A constant node; gradients never flow into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const, vec![], value, false)
    }

    /// Copies the value of `x` into a node that blocks gradient flow.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.clone();
        self.push(Op::Detach, vec![x], v, false)
    }

    /// Marks a node as a differentiation root even if it was built from
    /// constants (used when an interior node is itself the `wrt` target).
    pub fn require_grad(&mut self, x: NodeId) {
        self.nodes[x.0].requires_grad = true;
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].parents
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: Op, parents: Vec<NodeId>, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op, parents, value, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, op: Op, parents: Vec<NodeId>, value: Tensor) -> NodeId {
        let rg = !op.blocks_grad() && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(op, parents, value, rg)
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn mismatch(&self, op: &'static str, a: NodeId, b: NodeId) -> CoreError {
        CoreError::ShapeMismatch {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    // ── elementwise binary ──────────────────────────────────────────────

    fn zip_op(
        &mut self,
        op: Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(op.name(), a, b));
        }
        let v = self.nodes[a.0].value.zip(&self.nodes[b.0].value, f);
        Ok(self.push_op(op, vec![a, b], v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(Op::Mul, a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op(Op::Div, a, b, |x, y| x / y)
    }

    // ── elementwise unary ───────────────────────────────────────────────

    fn map_op(&mut self, op: Op, a: NodeId, f: impl Fn(f64) -> f64) -> NodeId {
        let v = self.nodes[a.0].value.map(f);
        self.push_op(op, vec![a], v)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        self.map_op(Op::AddScalar, a, |x| x + s)
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        self.map_op(Op::MulScalar(s), a, |x| x * s)
    }

    pub fn pow_scalar(&mut self, a: NodeId, p: f64) -> NodeId {
        self.map_op(Op::PowScalar(p), a, |x| x.powf(p))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map_op(Op::Tanh, a, f64::tanh)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map_op(Op::Relu, a, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map_op(Op::Sigmoid, a, tensor::sigmoid)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map_op(Op::Exp, a, f64::exp)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.map_op(Op::Ln, a, f64::ln)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.map_op(Op::Abs, a, f64::abs)
    }

    /// Elementwise sign with sign(0) = 0. Treated as locally constant: no
    /// gradient flows through it.
    pub fn sign(&mut self, a: NodeId) -> NodeId {
        self.map_op(Op::Sign, a, sgn)
    }

    // ── reductions and broadcasts ───────────────────────────────────────

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.nodes[a.0].value.sum());
        self.push_op(Op::Sum, vec![a], v)
    }

    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.expect_matrix("row_sum", a)?;
        let v = tensor::row_sum(&self.nodes[a.0].value);
        Ok(self.push_op(Op::RowSum, vec![a], v))
    }

    pub fn col_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.expect_matrix("col_sum", a)?;
        let v = tensor::col_sum(&self.nodes[a.0].value);
        Ok(self.push_op(Op::ColSum, vec![a], v))
    }

    pub fn broadcast_col(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        self.expect_vector("broadcast_col", a)?;
        let v = tensor::broadcast_col(&self.nodes[a.0].value, n);
        Ok(self.push_op(Op::BroadcastCol, vec![a], v))
    }

    pub fn broadcast_row(&mut self, a: NodeId, m: usize) -> Result<NodeId> {
        self.expect_vector("broadcast_row", a)?;
        let v = tensor::broadcast_row(&self.nodes[a.0].value, m);
        Ok(self.push_op(Op::BroadcastRow, vec![a], v))
    }

    pub fn scalar_broadcast(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        if !self.nodes[a.0].value.is_scalar() {
            return Err(CoreError::NonScalar {
                op: "scalar_broadcast",
                shape: self.shape(a).to_vec(),
            });
        }
        let v = Tensor::full(shape, self.nodes[a.0].value.scalar_value());
        Ok(self.push_op(Op::ScalarBroadcast, vec![a], v))
    }

    /// Adds a length-n row vector to every row of an `(m,n)` matrix.
    pub fn row_broadcast_add(&mut self, a: NodeId, r: NodeId) -> Result<NodeId> {
        self.expect_matrix("row_broadcast_add", a)?;
        if self.shape(r) != [self.shape(a)[1]] {
            return Err(self.mismatch("row_broadcast_add", a, r));
        }
        let v = tensor::row_broadcast_add(&self.nodes[a.0].value, &self.nodes[r.0].value);
        Ok(self.push_op(Op::RowBroadcastAdd, vec![a, r], v))
    }

    // ── linear algebra ──────────────────────────────────────────────────

    /// Matrix product with 1-D promotion: `(m,k)·(k,n)`, `(m,k)·(k)`, or
    /// `(k)·(k,n)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let v = match (sa.len(), sb.len()) {
            (2, 2) if sa[1] == sb[0] => {
                tensor::matmul(&self.nodes[a.0].value, &self.nodes[b.0].value)
            }
            (2, 1) if sa[1] == sb[0] => {
                let bcol = self.nodes[b.0].value.reshaped(vec![sb[0], 1]);
                tensor::matmul(&self.nodes[a.0].value, &bcol).reshaped(vec![sa[0]])
            }
            (1, 2) if sa[0] == sb[0] => {
                let arow = self.nodes[a.0].value.reshaped(vec![1, sa[0]]);
                tensor::matmul(&arow, &self.nodes[b.0].value).reshaped(vec![sb[1]])
            }
            _ => return Err(self.mismatch("matmul", a, b)),
        };
        Ok(self.push_op(Op::MatMul, vec![a, b], v))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.expect_matrix("transpose", a)?;
        let v = tensor::transpose(&self.nodes[a.0].value);
        Ok(self.push_op(Op::Transpose, vec![a], v))
    }

    // ── structural ──────────────────────────────────────────────────────

    pub fn slice_cols(&mut self, a: NodeId, lo: usize, hi: usize) -> Result<NodeId> {
        self.expect_matrix("slice_cols", a)?;
        let n = self.shape(a)[1];
        if lo > hi || hi > n {
            return Err(CoreError::Domain(format!(
                "slice_cols: range {lo}..{hi} out of bounds for {n} columns"
            )));
        }
        let v = tensor::slice_cols(&self.nodes[a.0].value, lo, hi);
        Ok(self.push_op(Op::SliceCols(lo), vec![a], v))
    }

    pub fn pad_cols(&mut self, a: NodeId, lo: usize, n: usize) -> Result<NodeId> {
        self.expect_matrix("pad_cols", a)?;
        if lo + self.shape(a)[1] > n {
            return Err(CoreError::Domain(format!(
                "pad_cols: slice at {lo} does not fit in {n} columns"
            )));
        }
        let v = tensor::pad_cols(&self.nodes[a.0].value, lo, n);
        Ok(self.push_op(Op::PadCols(lo), vec![a], v))
    }

    pub fn slice1(&mut self, a: NodeId, lo: usize, hi: usize) -> Result<NodeId> {
        self.expect_vector("slice1", a)?;
        let n = self.shape(a)[0];
        if lo > hi || hi > n {
            return Err(CoreError::Domain(format!(
                "slice1: range {lo}..{hi} out of bounds for length {n}"
            )));
        }
        let v = tensor::slice1(&self.nodes[a.0].value, lo, hi);
        Ok(self.push_op(Op::Slice1(lo), vec![a], v))
    }

    pub fn pad1(&mut self, a: NodeId, lo: usize, n: usize) -> Result<NodeId> {
        self.expect_vector("pad1", a)?;
        if lo + self.shape(a)[0] > n {
            return Err(CoreError::Domain(format!(
                "pad1: slice at {lo} does not fit in length {n}"
            )));
        }
        let v = tensor::pad1(&self.nodes[a.0].value, lo, n);
        Ok(self.push_op(Op::Pad1(lo), vec![a], v))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.expect_matrix("concat_cols", a)?;
        self.expect_matrix("concat_cols", b)?;
        if self.shape(a)[0] != self.shape(b)[0] {
            return Err(self.mismatch("concat_cols", a, b));
        }
        let v = tensor::concat_cols(&self.nodes[a.0].value, &self.nodes[b.0].value);
        Ok(self.push_op(Op::ConcatCols, vec![a, b], v))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        if shape.iter().product::<usize>() != self.nodes[a.0].value.numel() {
            return Err(CoreError::Domain(format!(
                "reshape: cannot view {:?} as {shape:?}",
                self.shape(a)
            )));
        }
        let v = self.nodes[a.0].value.reshaped(shape.to_vec());
        Ok(self.push_op(Op::Reshape, vec![a], v))
    }

    // ── composites and fused ops ────────────────────────────────────────

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.expect_matrix("log_softmax_rows", a)?;
        let v = tensor::log_softmax_rows(&self.nodes[a.0].value);
        Ok(self.push_op(Op::LogSoftmaxRows, vec![a], v))
    }

    /// Mean cross-entropy of row-wise softmax(logits) against constant
    /// one-hot targets.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, onehot: NodeId) -> Result<NodeId> {
        if self.shape(logits) != self.shape(onehot) {
            return Err(self.mismatch("softmax_cross_entropy", logits, onehot));
        }
        let rows = self.shape(logits)[0] as f64;
        let lsm = self.log_softmax_rows(logits)?;
        let picked = self.mul(onehot, lsm)?;
        let total = self.sum(picked);
        Ok(self.mul_scalar(total, -1.0 / rows))
    }

    /// Fused LSTM cell step over `d` independent rows (see
    /// [`tensor::lstm_cell_forward`] for the layout). The backward pass is
    /// hand-derived and emits constant-valued gradients, so this op is
    /// differentiable to first order only.
    pub fn lstm_cell(
        &mut self,
        feat: NodeId,
        state: NodeId,
        w: NodeId,
        b: NodeId,
    ) -> Result<NodeId> {
        self.expect_matrix("lstm_cell", feat)?;
        self.expect_matrix("lstm_cell", state)?;
        self.expect_matrix("lstm_cell", w)?;
        let (d, f) = (self.shape(feat)[0], self.shape(feat)[1]);
        let two_h = self.shape(state)[1];
        let h = two_h / 2;
        if two_h % 2 != 0 || self.shape(state)[0] != d {
            return Err(self.mismatch("lstm_cell", feat, state));
        }
        if self.shape(w) != [f + h, 4 * h] || self.shape(b) != [4 * h] {
            return Err(self.mismatch("lstm_cell", w, b));
        }
        let v = tensor::lstm_cell_forward(
            &self.nodes[feat.0].value,
            &self.nodes[state.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
        );
        Ok(self.push_op(Op::LstmCell, vec![feat, state, w, b], v))
    }

    fn expect_matrix(&self, op: &'static str, a: NodeId) -> Result<()> {
        if !self.nodes[a.0].value.is_matrix() {
            return Err(CoreError::ShapeMismatch { op, lhs: self.shape(a).to_vec(), rhs: vec![] });
        }
        Ok(())
    }

    fn expect_vector(&self, op: &'static str, a: NodeId) -> Result<()> {
        if !self.nodes[a.0].value.is_vector() {
            return Err(CoreError::ShapeMismatch { op, lhs: self.shape(a).to_vec(), rhs: vec![] });
        }
        Ok(())
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Gradient values of a scalar `loss` with respect to `wrt`. The nodes
    /// created by the backward pass are dropped before returning; use
    /// [`Graph::grad_nodes`] to keep them differentiable. A `wrt` node that
    /// cannot reach the loss yields a zero tensor of its shape.
    pub fn grad(&mut self, loss: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        let mark = self.mark();
        let adj = self.build_adjoints(loss, wrt)?;
        let out = wrt
            .iter()
            .map(|w| match adj[w.0] {
                Some(id) => self.nodes[id.0].value.clone(),
                None => Tensor::zeros(self.shape(*w)),
            })
            .collect();
        self.truncate(mark);
        Ok(out)
    }

    /// Like [`Graph::grad`], but returns adjoints as graph nodes that remain
    /// valid differentiation targets (retains the backward graph).
    pub fn grad_nodes(&mut self, loss: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        let adj = self.build_adjoints(loss, wrt)?;
        Ok(wrt
            .iter()
            .map(|w| {
                adj[w.0].unwrap_or_else(|| {
                    let z = Tensor::zeros(self.shape(*w));
                    self.constant(z)
                })
            })
            .collect())
    }

    /// Hessian-vector product of a scalar loss at `x`: the gradient of
    /// `⟨∇loss, z⟩` with `z` held constant. Built as a double backward, so it
    /// is exact for any graph composed of first-class primitives.
    pub fn hvp(&mut self, loss: NodeId, x: NodeId, z: &Tensor) -> Result<Tensor> {
        let mark = self.mark();
        let g = self.grad_nodes(loss, &[x])?[0];
        let zc = self.constant(z.clone());
        let d = self.dot(g, zc)?;
        let out = self.grad(d, &[x])?;
        self.truncate(mark);
        Ok(out.into_iter().next().unwrap())
    }

    fn build_adjoints(&mut self, loss: NodeId, wrt: &[NodeId]) -> Result<Vec<Option<NodeId>>> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(CoreError::NonScalar {
                op: "grad",
                shape: self.shape(loss).to_vec(),
            });
        }
        let n = loss.0 + 1;

        // A node carries gradient iff some wrt node is among its ancestors
        // and no grad-blocking op sits in between.
        let mut carrier = vec![false; self.nodes.len()];
        for w in wrt {
            carrier[w.0] = true;
        }
        for i in 0..n {
            if carrier[i] || self.nodes[i].op.blocks_grad() {
                continue;
            }
            carrier[i] = self.nodes[i].parents.iter().any(|p| carrier[p.0]);
        }

        let mut adj: Vec<Option<NodeId>> = vec![None; n];
        if carrier[loss.0] {
            adj[loss.0] = Some(self.constant(Tensor::scalar(1.0)));
        }
        for i in (0..n).rev() {
            let Some(a) = adj[i] else { continue };
            if self.nodes[i].op.blocks_grad() {
                continue;
            }
            for (p, contrib) in self.vjp(NodeId(i), a) {
                if p.0 >= carrier.len() || !carrier[p.0] {
                    continue;
                }
                adj[p.0] = Some(match adj[p.0] {
                    Some(prev) => self.add(prev, contrib).expect("adjoint accumulation"),
                    None => contrib,
                });
            }
        }
        Ok(adj)
    }

    /// Per-parent adjoint contributions of node `id` given its adjoint.
    /// Formulas are expressed with graph primitives so that the backward
    /// pass itself is differentiable (except where noted).
    fn vjp(&mut self, id: NodeId, adj: NodeId) -> Vec<(NodeId, NodeId)> {
        let parents = self.nodes[id.0].parents.clone();
        let op = self.nodes[id.0].op.clone();
        match op {
            Op::Leaf | Op::Const | Op::Detach | Op::Sign => vec![],
            Op::Add => vec![(parents[0], adj), (parents[1], adj)],
            Op::Sub => {
                let neg = self.mul_scalar(adj, -1.0);
                vec![(parents[0], adj), (parents[1], neg)]
            }
            Op::Mul => {
                let da = self.mul(adj, parents[1]).expect("vjp mul");
                let db = self.mul(adj, parents[0]).expect("vjp mul");
                vec![(parents[0], da), (parents[1], db)]
            }
            Op::Div => {
                let da = self.div(adj, parents[1]).expect("vjp div");
                let t = self.mul(adj, id).expect("vjp div");
                let t = self.div(t, parents[1]).expect("vjp div");
                let db = self.mul_scalar(t, -1.0);
                vec![(parents[0], da), (parents[1], db)]
            }
            Op::AddScalar => vec![(parents[0], adj)],
            Op::MulScalar(s) => vec![(parents[0], self.mul_scalar(adj, s))],
            Op::PowScalar(p) => {
                let xp = self.pow_scalar(parents[0], p - 1.0);
                let xp = self.mul_scalar(xp, p);
                let d = self.mul(adj, xp).expect("vjp pow");
                vec![(parents[0], d)]
            }
            Op::Tanh => {
                // 1 - tanh², reusing the node's own value
                let t2 = self.mul(id, id).expect("vjp tanh");
                let neg = self.mul_scalar(t2, -1.0);
                let one_m = self.add_scalar(neg, 1.0);
                let d = self.mul(adj, one_m).expect("vjp tanh");
                vec![(parents[0], d)]
            }
            Op::Relu => {
                // subgradient 0 at the kink; second derivative 0 everywhere
                let mask = self.nodes[parents[0].0].value.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                let mask = self.constant(mask);
                let d = self.mul(adj, mask).expect("vjp relu");
                vec![(parents[0], d)]
            }
            Op::Sigmoid => {
                let neg = self.mul_scalar(id, -1.0);
                let one_m = self.add_scalar(neg, 1.0);
                let s1 = self.mul(id, one_m).expect("vjp sigmoid");
                let d = self.mul(adj, s1).expect("vjp sigmoid");
                vec![(parents[0], d)]
            }
            Op::Exp => {
                let d = self.mul(adj, id).expect("vjp exp");
                vec![(parents[0], d)]
            }
            Op::Ln => {
                let d = self.div(adj, parents[0]).expect("vjp ln");
                vec![(parents[0], d)]
            }
            Op::Abs => {
                // locally constant sign; kink has measure zero
                let s = self.nodes[parents[0].0].value.map(sgn);
                let s = self.constant(s);
                let d = self.mul(adj, s).expect("vjp abs");
                vec![(parents[0], d)]
            }
            Op::Sum => {
                let shape = self.shape(parents[0]).to_vec();
                let d = self.scalar_broadcast(adj, &shape).expect("vjp sum");
                vec![(parents[0], d)]
            }
            Op::RowSum => {
                let n = self.shape(parents[0])[1];
                let d = self.broadcast_col(adj, n).expect("vjp row_sum");
                vec![(parents[0], d)]
            }
            Op::ColSum => {
                let m = self.shape(parents[0])[0];
                let d = self.broadcast_row(adj, m).expect("vjp col_sum");
                vec![(parents[0], d)]
            }
            Op::BroadcastCol => {
                let d = self.row_sum(adj).expect("vjp broadcast_col");
                vec![(parents[0], d)]
            }
            Op::BroadcastRow => {
                let d = self.col_sum(adj).expect("vjp broadcast_row");
                vec![(parents[0], d)]
            }
            Op::ScalarBroadcast => {
                let d = self.sum(adj);
                vec![(parents[0], d)]
            }
            Op::RowBroadcastAdd => {
                let dr = self.col_sum(adj).expect("vjp row_broadcast_add");
                vec![(parents[0], adj), (parents[1], dr)]
            }
            Op::MatMul => self.vjp_matmul(parents[0], parents[1], adj),
            Op::Transpose => {
                let d = self.transpose(adj).expect("vjp transpose");
                vec![(parents[0], d)]
            }
            Op::SliceCols(lo) => {
                let n = self.shape(parents[0])[1];
                let d = self.pad_cols(adj, lo, n).expect("vjp slice_cols");
                vec![(parents[0], d)]
            }
            Op::PadCols(lo) => {
                let w = self.shape(parents[0])[1];
                let d = self.slice_cols(adj, lo, lo + w).expect("vjp pad_cols");
                vec![(parents[0], d)]
            }
            Op::Slice1(lo) => {
                let n = self.shape(parents[0])[0];
                let d = self.pad1(adj, lo, n).expect("vjp slice1");
                vec![(parents[0], d)]
            }
            Op::Pad1(lo) => {
                let w = self.shape(parents[0])[0];
                let d = self.slice1(adj, lo, lo + w).expect("vjp pad1");
                vec![(parents[0], d)]
            }
            Op::ConcatCols => {
                let p = self.shape(parents[0])[1];
                let q = self.shape(parents[1])[1];
                let da = self.slice_cols(adj, 0, p).expect("vjp concat");
                let db = self.slice_cols(adj, p, p + q).expect("vjp concat");
                vec![(parents[0], da), (parents[1], db)]
            }
            Op::Reshape => {
                let shape = self.shape(parents[0]).to_vec();
                let d = self.reshape(adj, &shape).expect("vjp reshape");
                vec![(parents[0], d)]
            }
            Op::LogSoftmaxRows => {
                // dx = adj - softmax ⊙ colbc(rowsum(adj))
                let s = self.exp(id);
                let rs = self.row_sum(adj).expect("vjp log_softmax");
                let n = self.shape(id)[1];
                let bc = self.broadcast_col(rs, n).expect("vjp log_softmax");
                let prod = self.mul(s, bc).expect("vjp log_softmax");
                let d = self.sub(adj, prod).expect("vjp log_softmax");
                vec![(parents[0], d)]
            }
            Op::LstmCell => {
                let (dfeat, dstate, dw, db) = tensor::lstm_cell_backward(
                    &self.nodes[parents[0].0].value,
                    &self.nodes[parents[1].0].value,
                    &self.nodes[parents[2].0].value,
                    &self.nodes[parents[3].0].value,
                    &self.nodes[id.0].value,
                    &self.nodes[adj.0].value,
                );
                let dfeat = self.constant(dfeat);
                let dstate = self.constant(dstate);
                let dw = self.constant(dw);
                let db = self.constant(db);
                vec![
                    (parents[0], dfeat),
                    (parents[1], dstate),
                    (parents[2], dw),
                    (parents[3], db),
                ]
            }
        }
    }

    fn vjp_matmul(&mut self, a: NodeId, b: NodeId, adj: NodeId) -> Vec<(NodeId, NodeId)> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        match (sa.len(), sb.len()) {
            (2, 2) => {
                let bt = self.transpose(b).expect("vjp matmul");
                let da = self.matmul(adj, bt).expect("vjp matmul");
                let at = self.transpose(a).expect("vjp matmul");
                let db = self.matmul(at, adj).expect("vjp matmul");
                vec![(a, da), (b, db)]
            }
            (2, 1) => {
                // (m,k)·(k) -> (m): dA = adj ⊗ b, db = Aᵀ·adj
                let adj_col = self.reshape(adj, &[sa[0], 1]).expect("vjp matmul");
                let b_row = self.reshape(b, &[1, sb[0]]).expect("vjp matmul");
                let da = self.matmul(adj_col, b_row).expect("vjp matmul");
                let at = self.transpose(a).expect("vjp matmul");
                let db = self.matmul(at, adj).expect("vjp matmul");
                vec![(a, da), (b, db)]
            }
            (1, 2) => {
                // (k)·(k,n) -> (n): da = B·adj, dB = a ⊗ adj
                let da = self.matmul(b, adj).expect("vjp matmul");
                let a_col = self.reshape(a, &[sa[0], 1]).expect("vjp matmul");
                let adj_row = self.reshape(adj, &[1, sb[1]]).expect("vjp matmul");
                let db = self.matmul(a_col, adj_row).expect("vjp matmul");
                vec![(a, da), (b, db)]
            }
            _ => unreachable!("matmul shapes validated at construction"),
        }
    }
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
