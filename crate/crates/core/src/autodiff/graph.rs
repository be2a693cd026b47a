//! Reverse-mode differentiation over an append-only op record.
//!
//! A [`Graph`] is an arena of nodes: named parameter leaves, constants, and
//! primitive-op applications. Values are computed eagerly as nodes are
//! pushed, and the record can be replayed on fresh leaf values with
//! [`Graph::forward_eval`].
//!
//! [`Graph::backward`] does not accumulate numeric gradients. It emits the
//! gradient computation as new nodes in the same arena, so a returned
//! gradient is itself differentiable — which is exactly what updating the
//! ratio network through a pseudo parameter step requires. Every op's
//! vector-Jacobian product is expressed in terms of the same primitive set,
//! keeping the record closed under differentiation.

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive ops. The public surface of the engine is this closed set; the
/// entries below the elementwise/matrix core (transpose, step, reciprocal,
/// slicing, reshape, pair-diff) exist so that every op's derivative is again
/// expressible in the set.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Add,
    Sub,
    /// Elementwise product of same-shape tensors.
    Mul,
    /// Multiply by a compile-time constant factor.
    ScalarMul(f64),
    /// Multiply a tensor by a scalar node (inputs: tensor, scalar).
    ScaleByScalar,
    MatMul,
    Transpose,
    Relu,
    /// 0/1 indicator of positivity; derivative defined as zero everywhere.
    Step,
    Sigmoid,
    Log,
    Reciprocal,
    /// Row-wise softmax of a rank-2 tensor.
    Softmax,
    /// Divide each row by its sum.
    RowNormalize,
    Mean,
    Sum,
    /// Sum along columns: (m, n) -> (m, 1).
    RowSum,
    ConcatRows,
    ConcatCols,
    SliceRows { start: usize, end: usize },
    SliceCols { start: usize, end: usize },
    Reshape(Vec<usize>),
    /// All pairwise row differences: (m, w) -> (m*m, w) with row i*m+j
    /// holding x_i - x_j.
    PairDiff,
    /// Adjoint of [`Op::PairDiff`]: (m*m, w) -> (m, w).
    PairDiffAdjoint,
    /// Mean softmax cross-entropy over rows (inputs: logits, targets).
    CrossEntropyLogits,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::ScalarMul(_) => "scalar_mul",
            Op::ScaleByScalar => "scale_by_scalar",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Relu => "relu",
            Op::Step => "step",
            Op::Sigmoid => "sigmoid",
            Op::Log => "log",
            Op::Reciprocal => "reciprocal",
            Op::Softmax => "softmax",
            Op::RowNormalize => "row_normalize",
            Op::Mean => "mean",
            Op::Sum => "sum",
            Op::RowSum => "row_sum",
            Op::ConcatRows => "concat_rows",
            Op::ConcatCols => "concat_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Reshape(_) => "reshape",
            Op::PairDiff => "pair_diff",
            Op::PairDiffAdjoint => "pair_diff_adjoint",
            Op::CrossEntropyLogits => "cross_entropy_logits",
        }
    }
}

#[derive(Clone, Debug)]
enum NodeKind {
    Param(String),
    Const,
    Apply { op: Op, inputs: Vec<NodeId> },
}

#[derive(Clone, Debug)]
struct Node {
    kind: NodeKind,
    value: Tensor,
    requires_grad: bool,
}

/// Named parameter leaves bound into a graph, in insertion order.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    entries: Vec<(String, NodeId)>,
}

impl BoundParams {
    pub fn from_pairs(entries: Vec<(String, NodeId)>) -> Self {
        BoundParams { entries }
    }

    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.entries.iter().map(|(_, id)| *id).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.entries.iter().map(|(n, id)| (n.as_str(), *id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Append-only computation record with eager values.
#[derive(Clone, Debug, Default)]
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, kind: NodeKind, value: Tensor, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { kind, value, requires_grad });
        id
    }

    /// Tracked leaf; gradients can be requested with respect to it.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> NodeId {
        self.push(NodeKind::Param(name.into()), value, true)
    }

    /// Untracked literal. Kept verbatim on replay.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(NodeKind::Const, value, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    /// Bind every entry of a [`ParamSet`] as a tracked leaf.
    pub fn bind(&mut self, params: &ParamSet) -> BoundParams {
        let entries = params
            .iter()
            .map(|(name, tensor)| (name.to_string(), self.param(name, tensor.clone())))
            .collect();
        BoundParams { entries }
    }

    fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
        let value = eval_op(&op, &tensors)?;
        let requires_grad = !matches!(op, Op::Step)
            && inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        Ok(self.push(NodeKind::Apply { op, inputs: inputs.to_vec() }, value, requires_grad))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scalar_mul(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.apply(Op::ScalarMul(factor), &[a])
    }

    pub fn scale_by_scalar(&mut self, tensor: NodeId, scalar: NodeId) -> Result<NodeId> {
        self.apply(Op::ScaleByScalar, &[tensor, scalar])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Transpose, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu, &[a])
    }

    pub fn step(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Step, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sigmoid, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Log, &[a])
    }

    pub fn reciprocal(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Reciprocal, &[a])
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Softmax, &[a])
    }

    pub fn row_normalize(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::RowNormalize, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Mean, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sum, &[a])
    }

    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::RowSum, &[a])
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::ConcatRows, &[a, b])
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::ConcatCols, &[a, b])
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.apply(Op::SliceRows { start, end }, &[a])
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.apply(Op::SliceCols { start, end }, &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.apply(Op::Reshape(shape.to_vec()), &[a])
    }

    pub fn pair_diff(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::PairDiff, &[a])
    }

    pub fn pair_diff_adjoint(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::PairDiffAdjoint, &[a])
    }

    pub fn cross_entropy_logits(&mut self, logits: NodeId, targets: NodeId) -> Result<NodeId> {
        self.apply(Op::CrossEntropyLogits, &[logits, targets])
    }

    /// Reverse sweep from a scalar output. Returns one gradient node per
    /// `wrt` leaf, in order; leaves the output does not depend on get a
    /// zeros node rather than an error. Input values are never mutated, and
    /// the returned nodes may themselves be differentiated again.
    pub fn backward(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        let out_value = &self.nodes[output.0].value;
        if !out_value.is_scalar() {
            return Err(Error::NonScalar { op: "backward", shape: out_value.shape().to_vec() });
        }
        for id in wrt {
            if !matches!(self.nodes[id.0].kind, NodeKind::Param(_)) {
                return Err(Error::InvalidArgument(format!(
                    "backward: wrt node {} is not a parameter leaf",
                    id.0
                )));
            }
        }

        let mut grads: Vec<Option<NodeId>> = vec![None; output.0 + 1];
        let seed_shape = self.nodes[output.0].value.shape().to_vec();
        grads[output.0] = Some(self.constant(Tensor::ones(&seed_shape)));

        for id in (0..=output.0).rev() {
            let Some(grad) = grads[id] else { continue };
            let NodeKind::Apply { op, inputs } = self.nodes[id].kind.clone() else {
                continue;
            };
            for (input, contribution) in self.input_grads(&op, &inputs, NodeId(id), grad)? {
                debug_assert!(input.0 < id, "record must be topologically ordered");
                let slot = &mut grads[input.0];
                match *slot {
                    None => *slot = Some(contribution),
                    Some(prev) => {
                        let summed = self.add(prev, contribution)?;
                        grads[input.0] = Some(summed);
                    }
                }
            }
        }

        wrt.iter()
            .map(|id| match grads.get(id.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.nodes[id.0].value.shape().to_vec();
                    Ok(self.constant(Tensor::zeros(&shape)))
                }
            })
            .collect()
    }

    /// [`Graph::backward`] followed by reading gradient values out into a
    /// [`ParamSet`] keyed like `bound`.
    pub fn backward_params(&mut self, output: NodeId, bound: &BoundParams) -> Result<ParamSet> {
        let ids = bound.ids();
        let grad_ids = self.backward(output, &ids)?;
        Ok(bound
            .iter()
            .zip(grad_ids)
            .map(|((name, _), gid)| (name.to_string(), self.nodes[gid.0].value.clone()))
            .collect())
    }

    /// Replay the whole record on fresh leaf values and return the final
    /// node's value. Constants are kept verbatim; identical leaves reproduce
    /// the original values bit for bit.
    pub fn forward_eval(&self, leaves: &ParamSet) -> Result<Tensor> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidArgument("forward_eval: empty record".into()));
        }
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match &node.kind {
                NodeKind::Param(name) => leaves.require(name)?.clone(),
                NodeKind::Const => node.value.clone(),
                NodeKind::Apply { op, inputs } => {
                    let tensors: Vec<&Tensor> = inputs.iter().map(|id| &values[id.0]).collect();
                    eval_op(op, &tensors)?
                }
            };
            values.push(value);
        }
        Ok(values.pop().expect("non-empty record"))
    }

    /// Gradient contributions of `grad` (dL/d node) to each tracked input.
    fn input_grads(
        &mut self,
        op: &Op,
        inputs: &[NodeId],
        node: NodeId,
        grad: NodeId,
    ) -> Result<Vec<(NodeId, NodeId)>> {
        let mut out = Vec::with_capacity(2);
        let need = |g: &Graph, i: usize| g.nodes[inputs[i].0].requires_grad;
        match op {
            Op::Add => {
                if need(self, 0) {
                    out.push((inputs[0], grad));
                }
                if need(self, 1) {
                    out.push((inputs[1], grad));
                }
            }
            Op::Sub => {
                if need(self, 0) {
                    out.push((inputs[0], grad));
                }
                if need(self, 1) {
                    let neg = self.scalar_mul(grad, -1.0)?;
                    out.push((inputs[1], neg));
                }
            }
            Op::Mul => {
                if need(self, 0) {
                    let g = self.mul(grad, inputs[1])?;
                    out.push((inputs[0], g));
                }
                if need(self, 1) {
                    let g = self.mul(grad, inputs[0])?;
                    out.push((inputs[1], g));
                }
            }
            Op::ScalarMul(c) => {
                if need(self, 0) {
                    let g = self.scalar_mul(grad, *c)?;
                    out.push((inputs[0], g));
                }
            }
            Op::ScaleByScalar => {
                if need(self, 0) {
                    let g = self.scale_by_scalar(grad, inputs[1])?;
                    out.push((inputs[0], g));
                }
                if need(self, 1) {
                    let prod = self.mul(grad, inputs[0])?;
                    let mut g = self.sum(prod)?;
                    let s_shape = self.nodes[inputs[1].0].value.shape().to_vec();
                    if s_shape != self.nodes[g.0].value.shape() {
                        g = self.reshape(g, &s_shape)?;
                    }
                    out.push((inputs[1], g));
                }
            }
            Op::MatMul => {
                if need(self, 0) {
                    let bt = self.transpose(inputs[1])?;
                    let g = self.matmul(grad, bt)?;
                    out.push((inputs[0], g));
                }
                if need(self, 1) {
                    let at = self.transpose(inputs[0])?;
                    let g = self.matmul(at, grad)?;
                    out.push((inputs[1], g));
                }
            }
            Op::Transpose => {
                if need(self, 0) {
                    let g = self.transpose(grad)?;
                    out.push((inputs[0], g));
                }
            }
            Op::Relu => {
                if need(self, 0) {
                    let mask = self.step(inputs[0])?;
                    let g = self.mul(grad, mask)?;
                    out.push((inputs[0], g));
                }
            }
            Op::Step => {}
            Op::Sigmoid => {
                if need(self, 0) {
                    let shape = self.nodes[node.0].value.shape().to_vec();
                    let one = self.constant(Tensor::ones(&shape));
                    let omy = self.sub(one, node)?;
                    let dydx = self.mul(node, omy)?;
                    let g = self.mul(grad, dydx)?;
                    out.push((inputs[0], g));
                }
            }
            Op::Log => {
                if need(self, 0) {
                    let inv = self.reciprocal(inputs[0])?;
                    let g = self.mul(grad, inv)?;
                    out.push((inputs[0], g));
                }
            }
            Op::Reciprocal => {
                if need(self, 0) {
                    let ysq = self.mul(node, node)?;
                    let neg = self.scalar_mul(ysq, -1.0)?;
                    let g = self.mul(grad, neg)?;
                    out.push((inputs[0], g));
                }
            }
            Op::Softmax => {
                if need(self, 0) {
                    let cols = self.nodes[node.0].value.cols();
                    let gy = self.mul(grad, node)?;
                    let rs = self.row_sum(gy)?;
                    let ones_row = self.constant(Tensor::ones(&[1, cols]));
                    let bc = self.matmul(rs, ones_row)?;
                    let centered = self.sub(grad, bc)?;
                    let g = self.mul(node, centered)?;
                    out.push((inputs[0], g));
                }
            }
            Op::RowNormalize => {
                if need(self, 0) {
                    let cols = self.nodes[inputs[0].0].value.cols();
                    let ones_row = self.constant(Tensor::ones(&[1, cols]));
                    let rs = self.row_sum(inputs[0])?;
                    let inv = self.reciprocal(rs)?;
                    let inv_bc = self.matmul(inv, ones_row)?;
                    let term1 = self.mul(grad, inv_bc)?;
                    let gx = self.mul(grad, inputs[0])?;
                    let s = self.row_sum(gx)?;
                    let inv_sq = self.mul(inv, inv)?;
                    let s_scaled = self.mul(s, inv_sq)?;
                    let term2 = self.matmul(s_scaled, ones_row)?;
                    let g = self.sub(term1, term2)?;
                    out.push((inputs[0], g));
                }
            }
            Op::Mean => {
                if need(self, 0) {
                    let shape = self.nodes[inputs[0].0].value.shape().to_vec();
                    let n = self.nodes[inputs[0].0].value.len() as f64;
                    let basis = self.constant(Tensor::filled(&shape, 1.0 / n));
                    let g = self.scale_by_scalar(basis, grad)?;
                    out.push((inputs[0], g));
                }
            }
            Op::Sum => {
                if need(self, 0) {
                    let shape = self.nodes[inputs[0].0].value.shape().to_vec();
                    let basis = self.constant(Tensor::ones(&shape));
                    let g = self.scale_by_scalar(basis, grad)?;
                    out.push((inputs[0], g));
                }
            }
            Op::RowSum => {
                if need(self, 0) {
                    let cols = self.nodes[inputs[0].0].value.cols();
                    let ones_row = self.constant(Tensor::ones(&[1, cols]));
                    let g = self.matmul(grad, ones_row)?;
                    out.push((inputs[0], g));
                }
            }
            Op::ConcatRows => {
                let ra = self.nodes[inputs[0].0].value.rows();
                let rb = self.nodes[inputs[1].0].value.rows();
                if need(self, 0) {
                    let g = self.slice_rows(grad, 0, ra)?;
                    out.push((inputs[0], g));
                }
                if need(self, 1) {
                    let g = self.slice_rows(grad, ra, ra + rb)?;
                    out.push((inputs[1], g));
                }
            }
            Op::ConcatCols => {
                let ca = self.nodes[inputs[0].0].value.cols();
                let cb = self.nodes[inputs[1].0].value.cols();
                if need(self, 0) {
                    let g = self.slice_cols(grad, 0, ca)?;
                    out.push((inputs[0], g));
                }
                if need(self, 1) {
                    let g = self.slice_cols(grad, ca, ca + cb)?;
                    out.push((inputs[1], g));
                }
            }
            Op::SliceRows { start, end } => {
                if need(self, 0) {
                    let (rows, cols) = {
                        let v = &self.nodes[inputs[0].0].value;
                        (v.rows(), v.cols())
                    };
                    let mut g = grad;
                    if *start > 0 {
                        let head = self.constant(Tensor::zeros(&[*start, cols]));
                        g = self.concat_rows(head, g)?;
                    }
                    if *end < rows {
                        let tail = self.constant(Tensor::zeros(&[rows - end, cols]));
                        g = self.concat_rows(g, tail)?;
                    }
                    out.push((inputs[0], g));
                }
            }
            Op::SliceCols { start, end } => {
                if need(self, 0) {
                    let (rows, cols) = {
                        let v = &self.nodes[inputs[0].0].value;
                        (v.rows(), v.cols())
                    };
                    let mut g = grad;
                    if *start > 0 {
                        let head = self.constant(Tensor::zeros(&[rows, *start]));
                        g = self.concat_cols(head, g)?;
                    }
                    if *end < cols {
                        let tail = self.constant(Tensor::zeros(&[rows, cols - end]));
                        g = self.concat_cols(g, tail)?;
                    }
                    out.push((inputs[0], g));
                }
            }
            Op::Reshape(_) => {
                if need(self, 0) {
                    let orig = self.nodes[inputs[0].0].value.shape().to_vec();
                    let g = self.reshape(grad, &orig)?;
                    out.push((inputs[0], g));
                }
            }
            Op::PairDiff => {
                if need(self, 0) {
                    let g = self.pair_diff_adjoint(grad)?;
                    out.push((inputs[0], g));
                }
            }
            Op::PairDiffAdjoint => {
                if need(self, 0) {
                    let g = self.pair_diff(grad)?;
                    out.push((inputs[0], g));
                }
            }
            Op::CrossEntropyLogits => {
                let rows = self.nodes[inputs[0].0].value.rows() as f64;
                let cols = self.nodes[inputs[0].0].value.cols();
                if need(self, 0) {
                    let p = self.softmax(inputs[0])?;
                    let tsum = self.row_sum(inputs[1])?;
                    let ones_row = self.constant(Tensor::ones(&[1, cols]));
                    let tsum_bc = self.matmul(tsum, ones_row)?;
                    let scaled_p = self.mul(tsum_bc, p)?;
                    let diff = self.sub(scaled_p, inputs[1])?;
                    let per_row = self.scalar_mul(diff, 1.0 / rows)?;
                    let g = self.scale_by_scalar(per_row, grad)?;
                    out.push((inputs[0], g));
                }
                if need(self, 1) {
                    let p = self.softmax(inputs[0])?;
                    let logp = self.log(p)?;
                    let scaled = self.scalar_mul(logp, -1.0 / rows)?;
                    let g = self.scale_by_scalar(scaled, grad)?;
                    out.push((inputs[1], g));
                }
            }
        }
        Ok(out)
    }
}

fn shape_err(op: &Op, detail: String) -> Error {
    Error::Shape { op: op.name(), detail }
}

fn require_rank2<'t>(op: &Op, t: &'t Tensor, role: &str) -> Result<&'t Tensor> {
    if t.rank() == 2 {
        Ok(t)
    } else {
        Err(shape_err(op, format!("{role} must be rank 2, got {:?}", t.shape())))
    }
}

fn require_same_shape(op: &Op, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(shape_err(op, format!("operands differ: {:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Evaluate one primitive. This is the single evaluation path: both initial
/// graph construction and record replay go through it, so identical inputs
/// give bit-identical outputs.
pub(crate) fn eval_op(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    match op {
        Op::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            require_same_shape(op, a, b)?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
            Tensor::from_vec(a.shape(), data)
        }
        Op::Sub => {
            let (a, b) = (inputs[0], inputs[1]);
            require_same_shape(op, a, b)?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
            Tensor::from_vec(a.shape(), data)
        }
        Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            require_same_shape(op, a, b)?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            Tensor::from_vec(a.shape(), data)
        }
        Op::ScalarMul(c) => Ok(inputs[0].map(|v| v * c)),
        Op::ScaleByScalar => {
            let (t, s) = (inputs[0], inputs[1]);
            if !s.is_scalar() {
                return Err(shape_err(op, format!("scale must be scalar, got {:?}", s.shape())));
            }
            let c = s.data()[0];
            Ok(t.map(|v| v * c))
        }
        Op::MatMul => {
            let a = require_rank2(op, inputs[0], "lhs")?;
            let b = require_rank2(op, inputs[1], "rhs")?;
            let (m, k) = (a.rows(), a.cols());
            let (k2, n) = (b.rows(), b.cols());
            if k != k2 {
                return Err(shape_err(
                    op,
                    format!("inner extents differ: [{m}, {k}] x [{k2}, {n}]"),
                ));
            }
            let mut out = vec![0.0; m * n];
            let ad = a.data();
            let bd = b.data();
            for i in 0..m {
                let arow = &ad[i * k..(i + 1) * k];
                let orow = &mut out[i * n..(i + 1) * n];
                for (kk, &aik) in arow.iter().enumerate() {
                    let brow = &bd[kk * n..(kk + 1) * n];
                    for j in 0..n {
                        orow[j] += aik * brow[j];
                    }
                }
            }
            Tensor::from_vec(&[m, n], out)
        }
        Op::Transpose => {
            let a = require_rank2(op, inputs[0], "input")?;
            let (m, n) = (a.rows(), a.cols());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = a.data()[i * n + j];
                }
            }
            Tensor::from_vec(&[n, m], out)
        }
        Op::Relu => Ok(inputs[0].map(|v| if v > 0.0 { v } else { 0.0 })),
        Op::Step => Ok(inputs[0].map(|v| if v > 0.0 { 1.0 } else { 0.0 })),
        Op::Sigmoid => Ok(inputs[0].map(stable_sigmoid)),
        Op::Log => Ok(inputs[0].map(f64::ln)),
        Op::Reciprocal => Ok(inputs[0].map(f64::recip)),
        Op::Softmax => {
            let a = require_rank2(op, inputs[0], "input")?;
            let (m, n) = (a.rows(), a.cols());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let row = a.row(i);
                let max = row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
                let orow = &mut out[i * n..(i + 1) * n];
                let mut denom = 0.0;
                for (o, &v) in orow.iter_mut().zip(row) {
                    *o = (v - max).exp();
                    denom += *o;
                }
                for o in orow.iter_mut() {
                    *o /= denom;
                }
            }
            Tensor::from_vec(&[m, n], out)
        }
        Op::RowNormalize => {
            let a = require_rank2(op, inputs[0], "input")?;
            let (m, n) = (a.rows(), a.cols());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let row = a.row(i);
                let total: f64 = row.iter().sum();
                if total == 0.0 {
                    return Err(shape_err(op, format!("row {i} sums to zero")));
                }
                for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *o = v / total;
                }
            }
            Tensor::from_vec(&[m, n], out)
        }
        Op::Mean => {
            let a = inputs[0];
            let total: f64 = a.data().iter().sum();
            Ok(Tensor::scalar(total / a.len() as f64))
        }
        Op::Sum => Ok(Tensor::scalar(inputs[0].data().iter().sum())),
        Op::RowSum => {
            let a = require_rank2(op, inputs[0], "input")?;
            let data = (0..a.rows()).map(|i| a.row(i).iter().sum()).collect();
            Tensor::from_vec(&[a.rows(), 1], data)
        }
        Op::ConcatRows => {
            let a = require_rank2(op, inputs[0], "lhs")?;
            let b = require_rank2(op, inputs[1], "rhs")?;
            if a.cols() != b.cols() {
                return Err(shape_err(
                    op,
                    format!("column counts differ: {:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
            let mut data = Vec::with_capacity(a.len() + b.len());
            data.extend_from_slice(a.data());
            data.extend_from_slice(b.data());
            Tensor::from_vec(&[a.rows() + b.rows(), a.cols()], data)
        }
        Op::ConcatCols => {
            let a = require_rank2(op, inputs[0], "lhs")?;
            let b = require_rank2(op, inputs[1], "rhs")?;
            if a.rows() != b.rows() {
                return Err(shape_err(
                    op,
                    format!("row counts differ: {:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
            let mut data = Vec::with_capacity(a.len() + b.len());
            for i in 0..a.rows() {
                data.extend_from_slice(a.row(i));
                data.extend_from_slice(b.row(i));
            }
            Tensor::from_vec(&[a.rows(), a.cols() + b.cols()], data)
        }
        Op::SliceRows { start, end } => {
            let a = require_rank2(op, inputs[0], "input")?;
            if !(start < end && *end <= a.rows()) {
                return Err(shape_err(
                    op,
                    format!("rows {start}..{end} out of bounds for {:?}", a.shape()),
                ));
            }
            let n = a.cols();
            let data = a.data()[start * n..end * n].to_vec();
            Tensor::from_vec(&[end - start, n], data)
        }
        Op::SliceCols { start, end } => {
            let a = require_rank2(op, inputs[0], "input")?;
            if !(start < end && *end <= a.cols()) {
                return Err(shape_err(
                    op,
                    format!("cols {start}..{end} out of bounds for {:?}", a.shape()),
                ));
            }
            let mut data = Vec::with_capacity(a.rows() * (end - start));
            for i in 0..a.rows() {
                data.extend_from_slice(&a.row(i)[*start..*end]);
            }
            Tensor::from_vec(&[a.rows(), end - start], data)
        }
        Op::Reshape(shape) => inputs[0]
            .reshaped(shape)
            .map_err(|_| {
                shape_err(op, format!("cannot reshape {:?} to {shape:?}", inputs[0].shape()))
            }),
        Op::PairDiff => {
            let a = require_rank2(op, inputs[0], "input")?;
            let (m, w) = (a.rows(), a.cols());
            let mut out = vec![0.0; m * m * w];
            for i in 0..m {
                let xi = a.row(i);
                for j in 0..m {
                    let xj = a.row(j);
                    let orow = &mut out[(i * m + j) * w..(i * m + j + 1) * w];
                    for c in 0..w {
                        orow[c] = xi[c] - xj[c];
                    }
                }
            }
            Tensor::from_vec(&[m * m, w], out)
        }
        Op::PairDiffAdjoint => {
            let a = require_rank2(op, inputs[0], "input")?;
            let rows = a.rows();
            let w = a.cols();
            let m = (rows as f64).sqrt().round() as usize;
            if m * m != rows {
                return Err(shape_err(op, format!("row count {rows} is not a perfect square")));
            }
            let mut out = vec![0.0; m * w];
            for i in 0..m {
                for j in 0..m {
                    let fwd = a.row(i * m + j);
                    let bwd = a.row(j * m + i);
                    let orow = &mut out[i * w..(i + 1) * w];
                    for c in 0..w {
                        orow[c] += fwd[c] - bwd[c];
                    }
                }
            }
            Tensor::from_vec(&[m, w], out)
        }
        Op::CrossEntropyLogits => {
            let logits = require_rank2(op, inputs[0], "logits")?;
            let targets = require_rank2(op, inputs[1], "targets")?;
            require_same_shape(op, logits, targets)?;
            let m = logits.rows();
            let mut total = 0.0;
            for i in 0..m {
                let row = logits.row(i);
                let max = row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
                let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
                for (c, &t) in targets.row(i).iter().enumerate() {
                    if t != 0.0 {
                        total += t * (lse - row[c]);
                    }
                }
            }
            Ok(Tensor::scalar(total / m as f64))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_by_hand() {
        let mut g = Graph::new();
        let a = g.constant(matrix(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = g.constant(matrix(&[&[1.0], &[1.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 7.0]);
        assert_eq!(g.shape(c), &[2, 1]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.scalar_const(0.0);
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5]);
    }

    #[test]
    fn softmax_of_uniform_row() {
        let mut g = Graph::new();
        let x = g.constant(matrix(&[&[0.0, 0.0, 0.0]]));
        let y = g.softmax(x).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn product_rule() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(3.0));
        let y = g.param("y", Tensor::scalar(5.0));
        let xy = g.mul(x, y).unwrap();
        let grads = g.backward(xy, &[x, y]).unwrap();
        assert_eq!(g.value(grads[0]).data(), &[5.0]);
        assert_eq!(g.value(grads[1]).data(), &[3.0]);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(0.0));
        let y = g.sigmoid(x).unwrap();
        let grads = g.backward(y, &[x]).unwrap();
        assert_eq!(g.value(grads[0]).data(), &[0.25]);
    }

    #[test]
    fn unreachable_param_gets_zeros() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(2.0));
        let z = g.param("unused", Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y, &[x, z]).unwrap();
        assert_eq!(g.value(grads[0]).data(), &[4.0]);
        assert_eq!(g.value(grads[1]).data(), &[0.0, 0.0]);
        assert_eq!(g.shape(grads[1]), &[2]);
    }

    #[test]
    fn backward_rejects_non_scalar_output() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let y = g.relu(x).unwrap();
        let err = g.backward(y, &[x]).unwrap_err();
        assert!(matches!(err, Error::NonScalar { .. }));
    }

    #[test]
    fn backward_does_not_mutate_params() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let _ = g.backward(y, &[x]).unwrap();
        assert_eq!(g.value(x).data(), &[3.0]);
    }

    #[test]
    fn second_derivative_of_cube() {
        // y = x^3 at x = 2: dy/dx = 12, d2y/dx2 = 12.
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(2.0));
        let sq = g.mul(x, x).unwrap();
        let y = g.mul(sq, x).unwrap();
        let first = g.backward(y, &[x]).unwrap()[0];
        assert!((g.value(first).data()[0] - 12.0).abs() < 1e-12);
        let second = g.backward(first, &[x]).unwrap()[0];
        assert!((g.value(second).data()[0] - 12.0).abs() < 1e-12);
    }

    #[test]
    fn replay_is_bit_identical_and_respects_new_leaves() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(1.5));
        let c = g.scalar_const(2.0);
        let prod = g.mul(x, c).unwrap();
        let y = g.sigmoid(prod).unwrap();
        let original = g.value(y).clone();

        let mut leaves = ParamSet::new();
        leaves.insert("x", Tensor::scalar(1.5));
        let replayed = g.forward_eval(&leaves).unwrap();
        assert_eq!(replayed.data()[0].to_bits(), original.data()[0].to_bits());

        let mut other = ParamSet::new();
        other.insert("x", Tensor::scalar(-1.0));
        let moved = g.forward_eval(&other).unwrap();
        assert!((moved.data()[0] - stable_sigmoid(-2.0)).abs() < 1e-15);
    }

    #[test]
    fn forward_eval_names_missing_leaf() {
        let mut g = Graph::new();
        let x = g.param("weights", Tensor::scalar(1.0));
        let _ = g.relu(x).unwrap();
        let err = g.forward_eval(&ParamSet::new()).unwrap_err();
        match err {
            Error::MissingParam(name) => assert_eq!(name, "weights"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(matrix(&[&[1.0, 2.0]]));
        let b = g.constant(matrix(&[&[1.0, 2.0]]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "{msg}");
        assert!(msg.contains('2'), "{msg}");
    }

    #[test]
    fn pair_diff_and_adjoint_are_adjoint_maps() {
        // <PairDiff(x), h> == <x, PairDiffAdjoint(h)> for a linear map.
        let x = matrix(&[&[1.0, -2.0], &[0.5, 3.0], &[2.0, 1.0]]);
        let fwd = eval_op(&Op::PairDiff, &[&x]).unwrap();
        let h_data: Vec<f64> = (0..fwd.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let h = Tensor::from_vec(fwd.shape(), h_data).unwrap();
        let adj = eval_op(&Op::PairDiffAdjoint, &[&h]).unwrap();
        let lhs: f64 = fwd.data().iter().zip(h.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(adj.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_n() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[4, 5]));
        let mut onehot = Tensor::zeros(&[4, 5]);
        for i in 0..4 {
            onehot.data_mut()[i * 5 + i % 5] = 1.0;
        }
        let t = g.constant(onehot);
        let ce = g.cross_entropy_logits(logits, t).unwrap();
        assert!((g.value(ce).data()[0] - 5.0_f64.ln()).abs() < 1e-12);
    }
}
