use std::collections::BTreeMap;

use ndarray::linalg::general_mat_mul;

use super::{GraphError, Tensor};
use crate::scalar::Real;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Unary<T> {
    Neg,
    Scale(T),
    Offset(T),
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Ln,
    Square,
    /// Piecewise `−low·tanh(t/−low)` for `t < 0`, `high·tanh(t/high)` otherwise.
    SquashRange(T, T),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Min,
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Input,
    Param,
    Const,
    MatMul(NodeId, NodeId),
    Binary(Binary, NodeId, NodeId),
    Unary(Unary<T>, NodeId),
    SumCols(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize, usize),
    StopGradient(NodeId),
}

impl<T> Op<T> {
    fn deps(&self) -> Vec<NodeId> {
        match self {
            Op::Input | Op::Param | Op::Const => vec![],
            Op::MatMul(a, b) | Op::Binary(_, a, b) => vec![*a, *b],
            Op::Unary(_, a)
            | Op::SumCols(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::Slice(a, ..)
            | Op::StopGradient(a) => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::Const => "const",
            Op::MatMul(..) => "matmul",
            Op::Binary(b, ..) => match b {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Mul => "mul",
                Binary::Div => "div",
                Binary::Min => "min",
            },
            Op::Unary(u, _) => match u {
                Unary::Neg => "neg",
                Unary::Scale(_) => "scale",
                Unary::Offset(_) => "offset",
                Unary::Relu => "relu",
                Unary::Tanh => "tanh",
                Unary::Sigmoid => "sigmoid",
                Unary::Exp => "exp",
                Unary::Ln => "ln",
                Unary::Square => "square",
                Unary::SquashRange(..) => "squash_range",
            },
            Op::SumCols(_) => "sum_cols",
            Op::SumAll(_) => "sum_all",
            Op::MeanAll(_) => "mean_all",
            Op::Concat(_) => "concat",
            Op::Slice(..) => "slice",
            Op::StopGradient(_) => "stop_gradient",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    needs_grad: bool,
    /// Some parameter lies upstream.
    param_dep: bool,
}

/// Reverse-mode differentiable computation graph.
///
/// Building is symbolic: every builder method appends a node in topological
/// order and returns its id. [`Graph::forward`] evaluates all nodes with the
/// supplied inputs (falling back to values bound at declaration) and keeps
/// the intermediates for [`Graph::backward`].
///
/// Leaves come in three kinds. Inputs are named placeholders that can be
/// rebound on every forward call and receive gradients. Parameters are named
/// trainable tensors, deduplicated by name so a network applied twice shares
/// (and accumulates gradient into) one node. Constants carry no gradient.
#[derive(Clone, Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    leaf_values: Vec<Option<Tensor<T>>>,
    values: Vec<Option<Tensor<T>>>,
    inputs: BTreeMap<String, NodeId>,
    params: BTreeMap<String, NodeId>,
    frozen: BTreeMap<String, NodeId>,
    outputs: Vec<(String, NodeId)>,
    forwarded: bool,
    /// Values that stop-gradient nodes return instead of recomputing.
    pinned: Option<Vec<Option<Tensor<T>>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn of(&self, node: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(node.0).and_then(Option::as_ref)
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

/// Elementwise binary op with row/column broadcasting.
fn broadcast_zip<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Option<Tensor<T>> {
    let (ar, ac) = a.dims2()?;
    let (br, bc) = b.dims2()?;
    let r = broadcast_dim(ar, br)?;
    let c = broadcast_dim(ac, bc)?;
    if ar == br && ac == bc {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Some(Tensor::matrix(r, c, data));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        let ai = if ar == 1 { 0 } else { i * ac };
        let bi = if br == 1 { 0 } else { i * bc };
        for j in 0..c {
            let x = ad[ai + if ac == 1 { 0 } else { j }];
            let y = bd[bi + if bc == 1 { 0 } else { j }];
            data.push(f(x, y));
        }
    }
    Some(Tensor::matrix(r, c, data))
}

/// Sum a broadcast gradient back down to `rows × cols`.
fn reduce_to<T: Real>(g: Tensor<T>, rows: usize, cols: usize) -> Tensor<T> {
    let (gr, gc) = g.dims2().expect("matrix gradient");
    if gr == rows && gc == cols {
        return g;
    }
    let mut out = vec![T::zero(); rows * cols];
    let d = g.data();
    for i in 0..gr {
        let oi = if rows == 1 { 0 } else { i };
        for j in 0..gc {
            let oj = if cols == 1 { 0 } else { j };
            out[oi * cols + oj] = out[oi * cols + oj] + d[i * gc + j];
        }
    }
    Tensor::matrix(rows, cols, out)
}

fn squash<T: Real>(t: T, low: T, high: T) -> T {
    if t < T::zero() {
        let s = -low;
        s * (t / s).tanh()
    } else {
        high * (t / high).tanh()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_values: Vec::new(),
            values: Vec::new(),
            inputs: BTreeMap::new(),
            params: BTreeMap::new(),
            frozen: BTreeMap::new(),
            outputs: Vec::new(),
            forwarded: false,
            pinned: None,
        }
    }

    fn push(&mut self, op: Op<T>, needs_grad: bool, leaf: Option<Tensor<T>>) -> NodeId {
        let id = NodeId(self.nodes.len());
        let param_dep = match &op {
            Op::Param => true,
            Op::StopGradient(_) => false,
            other => other.deps().iter().any(|d| self.nodes[d.0].param_dep),
        };
        self.nodes.push(Node {
            op,
            needs_grad,
            param_dep,
        });
        self.leaf_values.push(leaf);
        self.values.push(None);
        self.forwarded = false;
        id
    }

    fn derived(&mut self, op: Op<T>, deps: &[NodeId]) -> NodeId {
        let needs = deps.iter().any(|d| self.nodes[d.0].needs_grad);
        self.push(op, needs, None)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ---- leaves -------------------------------------------------------------

    /// Named input without a default value; must be fed on every forward.
    pub fn input(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.inputs.get(name) {
            return id;
        }
        let id = self.push(Op::Input, true, None);
        self.inputs.insert(name.to_string(), id);
        id
    }

    /// Named input with a default binding.
    pub fn input_with(&mut self, name: &str, value: Tensor<T>) -> NodeId {
        let id = self.input(name);
        self.leaf_values[id.0] = Some(value);
        id
    }

    /// Trainable parameter, deduplicated by name.
    pub fn param(&mut self, name: &str, value: &Tensor<T>) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            return id;
        }
        let id = self.push(Op::Param, true, Some(value.clone()));
        self.params.insert(name.to_string(), id);
        id
    }

    /// Named tensor that never receives gradient, deduplicated by name.
    pub fn frozen(&mut self, name: &str, value: &Tensor<T>) -> NodeId {
        if let Some(&id) = self.frozen.get(name) {
            return id;
        }
        let id = self.push(Op::Const, false, Some(value.clone()));
        self.frozen.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Const, false, Some(value))
    }

    pub fn scalar(&mut self, value: T) -> NodeId {
        self.constant(Tensor::matrix(1, 1, vec![value]))
    }

    pub fn set_output(&mut self, name: &str, node: NodeId) {
        self.outputs.retain(|(n, _)| n != name);
        self.outputs.push((name.to_string(), node));
    }

    pub fn output(&self, name: &str) -> Option<NodeId> {
        self.outputs.iter().find(|(n, _)| n == name).map(|&(_, id)| id)
    }

    pub fn input_names(&self) -> impl Iterator<Item = &str> {
        self.inputs.keys().map(String::as_str)
    }

    pub fn input_node(&self, name: &str) -> Option<NodeId> {
        self.inputs.get(name).copied()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn param_node(&self, name: &str) -> Option<NodeId> {
        self.params.get(name).copied()
    }

    pub fn param_value(&self, name: &str) -> Option<&Tensor<T>> {
        self.params
            .get(name)
            .and_then(|id| self.leaf_values[id.0].as_ref())
    }

    /// Replace a parameter's value; invalidates previous forward results.
    pub fn set_param_value(&mut self, name: &str, value: Tensor<T>) -> Result<(), GraphError> {
        let id = *self
            .params
            .get(name)
            .ok_or_else(|| GraphError::UnknownName(name.to_string()))?;
        let old = self.leaf_values[id.0].as_ref().map(|t| t.shape().to_vec());
        if old.as_deref() != Some(value.shape()) {
            return Err(GraphError::ShapeMismatch {
                node: id.0,
                op: "param",
                detail: format!("expected {:?}, got {:?}", old, value.shape()),
            });
        }
        self.leaf_values[id.0] = Some(value);
        self.forwarded = false;
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params
            .values()
            .filter_map(|id| self.leaf_values[id.0].as_ref())
            .map(Tensor::len)
            .sum()
    }

    // ---- operations ---------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.derived(Op::MatMul(a, b), &[a, b])
    }

    fn binary(&mut self, kind: Binary, a: NodeId, b: NodeId) -> NodeId {
        self.derived(Op::Binary(kind, a, b), &[a, b])
    }

    /// Broadcasting add: shapes equal, or either operand is a row, column, or `1×1`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Binary::Div, a, b)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Binary::Min, a, b)
    }

    fn unary(&mut self, kind: Unary<T>, a: NodeId) -> NodeId {
        self.derived(Op::Unary(kind, a), &[a])
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(Unary::Neg, a)
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        self.unary(Unary::Scale(c), a)
    }

    pub fn offset(&mut self, a: NodeId, c: T) -> NodeId {
        self.unary(Unary::Offset(c), a)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(Unary::Relu, a)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(Unary::Exp, a)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.unary(Unary::Ln, a)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(Unary::Square, a)
    }

    pub fn squash_range(&mut self, a: NodeId, low: T, high: T) -> NodeId {
        self.unary(Unary::SquashRange(low, high), a)
    }

    /// Row sums: `B×n → B×1`.
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        self.derived(Op::SumCols(a), &[a])
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        self.derived(Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        self.derived(Op::MeanAll(a), &[a])
    }

    /// Column-wise concatenation of equal-height operands.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        self.derived(Op::Concat(parts.to_vec()), parts)
    }

    /// Columns `start..end`.
    pub fn slice(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        self.derived(Op::Slice(a, start, end), &[a])
    }

    pub fn stop_gradient(&mut self, a: NodeId) -> NodeId {
        self.push(Op::StopGradient(a), false, None)
    }

    // ---- evaluation ---------------------------------------------------------

    /// Evaluate every node. `feeds` override default input bindings.
    pub fn forward(&mut self, feeds: &BTreeMap<String, Tensor<T>>) -> Result<(), GraphError> {
        for name in feeds.keys() {
            if !self.inputs.contains_key(name) {
                return Err(GraphError::UnknownName(name.clone()));
            }
        }
        let input_names: BTreeMap<usize, &String> =
            self.inputs.iter().map(|(n, id)| (id.0, n)).collect();
        for i in 0..self.nodes.len() {
            let value = match &self.nodes[i].op {
                Op::Input => {
                    let name = input_names[&i];
                    let v = feeds
                        .get(name)
                        .or(self.leaf_values[i].as_ref())
                        .ok_or_else(|| GraphError::MissingInput(name.clone()))?;
                    if v.dims2().is_none() {
                        return Err(GraphError::ShapeMismatch {
                            node: i,
                            op: "input",
                            detail: format!("rank {} unsupported", v.rank()),
                        });
                    }
                    v.clone()
                }
                Op::Param | Op::Const => self.leaf_values[i].clone().expect("leaf value"),
                Op::StopGradient(_) if self.pinned.is_some() => self.pinned.as_ref().unwrap()[i]
                    .clone()
                    .expect("pinned value"),
                op => self.eval_node(i, op)?,
            };
            if !value.is_finite() {
                return Err(GraphError::NonFinite {
                    node: i,
                    op: self.nodes[i].op.name(),
                });
            }
            self.values[i] = Some(value);
        }
        self.forwarded = true;
        Ok(())
    }

    /// Forward pass using only declaration-time input bindings.
    pub fn eval(&mut self) -> Result<(), GraphError> {
        self.forward(&BTreeMap::new())
    }

    /// Forward pass returning every named output.
    pub fn run(
        &mut self,
        feeds: &BTreeMap<String, Tensor<T>>,
    ) -> Result<BTreeMap<String, Tensor<T>>, GraphError> {
        self.forward(feeds)?;
        Ok(self
            .outputs
            .iter()
            .map(|(n, id)| (n.clone(), self.values[id.0].clone().expect("evaluated")))
            .collect())
    }

    pub fn value(&self, node: NodeId) -> Result<&Tensor<T>, GraphError> {
        if !self.forwarded {
            return Err(GraphError::NotEvaluated);
        }
        self.values
            .get(node.0)
            .and_then(Option::as_ref)
            .ok_or(GraphError::NotEvaluated)
    }

    /// Freeze every stop-gradient node at its current value, so later
    /// forward passes evaluate the function whose derivative `backward`
    /// computes.
    pub fn pin_stop_gradients(&mut self) -> Result<(), GraphError> {
        if !self.forwarded {
            return Err(GraphError::NotEvaluated);
        }
        let pinned = self
            .nodes
            .iter()
            .zip(&self.values)
            .map(|(n, v)| matches!(n.op, Op::StopGradient(_)).then(|| v.clone()).flatten())
            .collect();
        self.pinned = Some(pinned);
        Ok(())
    }

    pub fn unpin_stop_gradients(&mut self) {
        self.pinned = None;
    }

    /// Which side of its kink every ReLU input and every `minimum`
    /// comparison currently sits on. Two evaluations with different patterns
    /// straddle a point where the graph is not differentiable.
    pub fn kink_pattern(&self) -> Result<Vec<bool>, GraphError> {
        if !self.forwarded {
            return Err(GraphError::NotEvaluated);
        }
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Unary(Unary::Relu, a) => {
                    out.extend(self.val(*a).data().iter().map(|&x| x > T::zero()));
                }
                Op::Binary(Binary::Min, a, b) => {
                    let picks = broadcast_zip(self.val(*a), self.val(*b), |p, q| {
                        if q < p { T::one() } else { T::zero() }
                    })
                    .expect("shapes checked in forward");
                    out.extend(picks.data().iter().map(|&x| x > T::zero()));
                }
                _ => {}
            }
        }
        Ok(out)
    }

    fn val(&self, id: NodeId) -> &Tensor<T> {
        self.values[id.0].as_ref().expect("operands precede node")
    }

    fn mismatch(&self, i: usize, detail: String) -> GraphError {
        GraphError::ShapeMismatch {
            node: i,
            op: self.nodes[i].op.name(),
            detail,
        }
    }

    fn eval_node(&self, i: usize, op: &Op<T>) -> Result<Tensor<T>, GraphError> {
        Ok(match op {
            Op::Input | Op::Param | Op::Const => unreachable!(),
            Op::MatMul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                let (m, k) = a.dims2().unwrap();
                let (k2, n) = b.dims2().unwrap();
                if k != k2 {
                    return Err(self.mismatch(i, format!("{m}×{k} · {k2}×{n}")));
                }
                let mut out = Tensor::zeros(&[m, n]);
                general_mat_mul(T::one(), &a.view2(), &b.view2(), T::zero(), &mut out.view2_mut());
                out
            }
            Op::Binary(kind, a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                let r = match kind {
                    Binary::Add => broadcast_zip(x, y, |p, q| p + q),
                    Binary::Sub => broadcast_zip(x, y, |p, q| p - q),
                    Binary::Mul => broadcast_zip(x, y, |p, q| p * q),
                    Binary::Div => broadcast_zip(x, y, |p, q| p / q),
                    Binary::Min => broadcast_zip(x, y, |p, q| if q < p { q } else { p }),
                };
                r.ok_or_else(|| {
                    self.mismatch(i, format!("{:?} vs {:?}", x.shape(), y.shape()))
                })?
            }
            Op::Unary(kind, a) => {
                let x = self.val(*a);
                let (r, c) = x.dims2().unwrap();
                let data = x.data().iter().map(|&v| apply_unary(*kind, v)).collect();
                Tensor::matrix(r, c, data)
            }
            Op::SumCols(a) => {
                let x = self.val(*a);
                let (r, _) = x.dims2().unwrap();
                let data = (0..r).map(|k| x.row_slice(k).iter().copied().sum()).collect();
                Tensor::matrix(r, 1, data)
            }
            Op::SumAll(a) => Tensor::matrix(1, 1, vec![self.val(*a).data().iter().copied().sum()]),
            Op::MeanAll(a) => {
                let x = self.val(*a);
                let s: T = x.data().iter().copied().sum();
                Tensor::matrix(1, 1, vec![s / T::from_usize(x.len()).unwrap()])
            }
            Op::Concat(parts) => {
                let vals: Vec<&Tensor<T>> = parts.iter().map(|p| self.val(*p)).collect();
                let rows = vals[0].rows();
                if vals.iter().any(|v| v.rows() != rows) {
                    let shapes: Vec<_> = vals.iter().map(|v| v.shape().to_vec()).collect();
                    return Err(self.mismatch(i, format!("row counts differ: {shapes:?}")));
                }
                let cols: usize = vals.iter().map(|v| v.cols()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for v in &vals {
                        data.extend_from_slice(v.row_slice(r));
                    }
                }
                Tensor::matrix(rows, cols, data)
            }
            Op::Slice(a, start, end) => {
                let x = self.val(*a);
                let (r, c) = x.dims2().unwrap();
                if start >= end || *end > c {
                    return Err(self.mismatch(i, format!("columns {start}..{end} of {c}")));
                }
                let mut data = Vec::with_capacity(r * (end - start));
                for k in 0..r {
                    data.extend_from_slice(&x.row_slice(k)[*start..*end]);
                }
                Tensor::matrix(r, end - start, data)
            }
            Op::StopGradient(a) => {
                let x = self.val(*a);
                let (r, c) = x.dims2().unwrap();
                Tensor::matrix(r, c, x.data().to_vec())
            }
        })
    }

    /// Reverse sweep from `output`, seeded with `output_grad`.
    ///
    /// Gradients are produced for every node that depends on an input or a
    /// parameter; contributions over fan-out are summed.
    pub fn backward(
        &self,
        output: NodeId,
        output_grad: &Tensor<T>,
    ) -> Result<Gradients<T>, GraphError> {
        self.sweep(output, output_grad, false)
    }

    /// Like [`Graph::backward`] but only visits nodes downstream of a
    /// parameter; input gradients are not produced.
    pub fn backward_params(
        &self,
        output: NodeId,
        output_grad: &Tensor<T>,
    ) -> Result<Gradients<T>, GraphError> {
        self.sweep(output, output_grad, true)
    }

    fn sweep(
        &self,
        output: NodeId,
        output_grad: &Tensor<T>,
        params_only: bool,
    ) -> Result<Gradients<T>, GraphError> {
        if !self.forwarded {
            return Err(GraphError::NotEvaluated);
        }
        let out_val = self.val(output);
        if out_val.dims2() != output_grad.dims2() {
            return Err(self.mismatch(
                output.0,
                format!(
                    "output grad {:?} vs output {:?}",
                    output_grad.shape(),
                    out_val.shape()
                ),
            ));
        }
        let want: Vec<bool> = self
            .nodes
            .iter()
            .map(|n| if params_only { n.param_dep } else { n.needs_grad })
            .collect();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        let (r, c) = out_val.dims2().unwrap();
        grads[output.0] = Some(Tensor::matrix(r, c, output_grad.data().to_vec()));

        for i in (0..=output.0).rev() {
            if !want[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads, &want);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], target: NodeId, g: Tensor<T>, want: &[bool]) {
        if !want[target.0] {
            return;
        }
        match &mut grads[target.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>], want: &[bool]) {
        match &self.nodes[i].op {
            Op::Input | Op::Param | Op::Const | Op::StopGradient(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if want[a.0] {
                    let (m, k) = av.dims2().unwrap();
                    let mut da = Tensor::zeros(&[m, k]);
                    general_mat_mul(T::one(), &g.view2(), &bv.view2().t(), T::zero(), &mut da.view2_mut());
                    self.accumulate(grads, *a, da, want);
                }
                if want[b.0] {
                    let (k, n) = bv.dims2().unwrap();
                    let mut db = Tensor::zeros(&[k, n]);
                    general_mat_mul(T::one(), &av.view2().t(), &g.view2(), T::zero(), &mut db.view2_mut());
                    self.accumulate(grads, *b, db, want);
                }
            }
            Op::Binary(kind, a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                let (xr, xc) = x.dims2().unwrap();
                let (yr, yc) = y.dims2().unwrap();
                let needs_a = want[a.0];
                let needs_b = want[b.0];
                let (ga, gb) = match kind {
                    Binary::Add => (
                        needs_a.then(|| g.clone()),
                        needs_b.then(|| g.clone()),
                    ),
                    Binary::Sub => (
                        needs_a.then(|| g.clone()),
                        needs_b.then(|| g.map(|v| -v)),
                    ),
                    Binary::Mul => (
                        needs_a.then(|| broadcast_zip(g, y, |p, q| p * q).unwrap()),
                        needs_b.then(|| broadcast_zip(g, x, |p, q| p * q).unwrap()),
                    ),
                    Binary::Div => (
                        needs_a.then(|| broadcast_zip(g, y, |p, q| p / q).unwrap()),
                        needs_b.then(|| {
                            let xy = broadcast_zip(x, y, |p, q| p / (q * q)).unwrap();
                            broadcast_zip(g, &xy, |p, q| -p * q).unwrap()
                        }),
                    ),
                    Binary::Min => {
                        let mask_a = broadcast_zip(x, y, |p, q| {
                            if q < p {
                                T::zero()
                            } else {
                                T::one()
                            }
                        })
                        .unwrap();
                        (
                            needs_a.then(|| broadcast_zip(g, &mask_a, |p, q| p * q).unwrap()),
                            needs_b
                                .then(|| broadcast_zip(g, &mask_a, |p, q| p * (T::one() - q)).unwrap()),
                        )
                    }
                };
                if let Some(ga) = ga {
                    self.accumulate(grads, *a, reduce_to(ga, xr, xc), want);
                }
                if let Some(gb) = gb {
                    self.accumulate(grads, *b, reduce_to(gb, yr, yc), want);
                }
            }
            Op::Unary(kind, a) => {
                if !want[a.0] {
                    return;
                }
                let x = self.val(*a);
                let y = self.values[i].as_ref().unwrap();
                let (r, c) = x.dims2().unwrap();
                let data = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(y.data()))
                    .map(|(&gv, (&xv, &yv))| gv * unary_derivative(*kind, xv, yv))
                    .collect();
                self.accumulate(grads, *a, Tensor::matrix(r, c, data), want);
            }
            Op::SumCols(a) => {
                let (r, c) = self.val(*a).dims2().unwrap();
                let mut data = Vec::with_capacity(r * c);
                for k in 0..r {
                    data.extend(std::iter::repeat_n(g.data()[k], c));
                }
                self.accumulate(grads, *a, Tensor::matrix(r, c, data), want);
            }
            Op::SumAll(a) => {
                let (r, c) = self.val(*a).dims2().unwrap();
                self.accumulate(grads, *a, Tensor::filled(&[r, c], g.item()), want);
            }
            Op::MeanAll(a) => {
                let (r, c) = self.val(*a).dims2().unwrap();
                let n = T::from_usize(r * c).unwrap();
                self.accumulate(grads, *a, Tensor::filled(&[r, c], g.item() / n), want);
            }
            Op::Concat(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for p in parts {
                    let pc = self.val(*p).cols();
                    if want[p.0] {
                        let mut data = Vec::with_capacity(rows * pc);
                        for k in 0..rows {
                            data.extend_from_slice(&g.row_slice(k)[offset..offset + pc]);
                        }
                        self.accumulate(grads, *p, Tensor::matrix(rows, pc, data), want);
                    }
                    offset += pc;
                }
            }
            Op::Slice(a, start, end) => {
                let (r, c) = self.val(*a).dims2().unwrap();
                let mut data = vec![T::zero(); r * c];
                for k in 0..r {
                    data[k * c + start..k * c + end].copy_from_slice(g.row_slice(k));
                }
                self.accumulate(grads, *a, Tensor::matrix(r, c, data), want);
            }
        }
    }

    /// Parameter gradients keyed by parameter name.
    pub fn param_grads(&self, grads: &Gradients<T>) -> BTreeMap<String, Tensor<T>> {
        self.params
            .iter()
            .map(|(name, id)| {
                let value = self.leaf_values[id.0].as_ref().expect("param value");
                let g = match grads.of(*id) {
                    Some(g) => Tensor::new(value.shape().to_vec(), g.data().to_vec())
                        .expect("gradient matches parameter"),
                    None => Tensor::zeros(value.shape()),
                };
                (name.clone(), g)
            })
            .collect()
    }

    /// Input gradients keyed by input name.
    pub fn input_grads(&self, grads: &Gradients<T>) -> BTreeMap<String, Tensor<T>> {
        self.inputs
            .iter()
            .filter_map(|(name, id)| grads.of(*id).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

pub(crate) fn apply_unary<T: Real>(kind: Unary<T>, v: T) -> T {
    match kind {
        Unary::Neg => -v,
        Unary::Scale(c) => v * c,
        Unary::Offset(c) => v + c,
        Unary::Relu => {
            if v > T::zero() {
                v
            } else {
                T::zero()
            }
        }
        Unary::Tanh => v.tanh(),
        Unary::Sigmoid => {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        }
        Unary::Exp => v.exp(),
        Unary::Ln => v.ln(),
        Unary::Square => v * v,
        Unary::SquashRange(low, high) => squash(v, low, high),
    }
}

fn unary_derivative<T: Real>(kind: Unary<T>, x: T, y: T) -> T {
    match kind {
        Unary::Neg => -T::one(),
        Unary::Scale(c) => c,
        Unary::Offset(_) => T::one(),
        Unary::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Unary::Tanh => T::one() - y * y,
        Unary::Sigmoid => y * (T::one() - y),
        Unary::Exp => y,
        Unary::Ln => T::one() / x,
        Unary::Square => (T::one() + T::one()) * x,
        Unary::SquashRange(low, high) => {
            let s = if x < T::zero() { -low } else { high };
            let t = y / s;
            T::one() - t * t
        }
    }
}
