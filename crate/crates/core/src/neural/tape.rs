//! Reverse-mode differentiation over a recorded list of matrix operations.
//!
//! Every value is a row-major `rows x cols` matrix. Nodes are appended in
//! evaluation order, so walking the list backwards is a valid reverse
//! topological order and each node is visited exactly once.

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Constant input; receives no gradient.
    Constant,
    /// Input whose gradient is reported back to the caller.
    Variable,
    /// Model parameter `index`.
    Param(usize),
    /// `x * w[:, cols]^T (+ b)`.
    Affine {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        cols: Range<usize>,
    },
    /// Elementwise sum; a single-row `b` broadcasts over the rows of `a`.
    Add { a: NodeId, b: NodeId },
    Relu(NodeId),
    /// Column-wise maximum over rows, producing one row. Stores the winning
    /// row per column (lowest row index on ties).
    MaxRows { x: NodeId, argmax: Vec<usize> },
    /// `scale * sigmoid(x)`.
    ScaledSigmoid { x: NodeId, scale: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    /// `None` for parameter nodes, which read from the borrowed parameters.
    value: Option<Array2<f64>>,
}

/// A recorded differentiable evaluation.
#[derive(Debug, Clone)]
pub struct Tape<'p> {
    params: &'p [Array2<f64>],
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

/// Which gradients a backward pass should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Targets {
    pub params: bool,
    pub variables: bool,
}

impl Targets {
    pub const ALL: Targets = Targets {
        params: true,
        variables: true,
    };
    pub const VARIABLES: Targets = Targets {
        params: false,
        variables: true,
    };
}

/// Result of one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// One entry per model parameter, zero where the parameter did not
    /// contribute. Empty when parameter gradients were not requested.
    pub params: Vec<Array2<f64>>,
    /// Gradients of the `Variable` leaves, in creation order.
    pub variables: Vec<Array2<f64>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Array2<f64>]) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> ArrayView2<'_, f64> {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param(p), _) => self.params[*p].view(),
            (_, Some(v)) => v.view(),
            (_, None) => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, op: Op, value: Option<Array2<f64>>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Constant, Some(value))
    }

    pub fn variable(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Variable, Some(value))
    }

    /// The node for parameter `index`, created on first use.
    pub fn param(&mut self, index: usize) -> NodeId {
        if let Some(id) = self.param_nodes[index] {
            return id;
        }
        let id = self.push(Op::Param(index), None);
        self.param_nodes[index] = Some(id);
        id
    }

    pub fn affine(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        cols: Range<usize>,
    ) -> Result<NodeId> {
        let xv = self.value(x);
        let wv = self.value(w);
        let wslice = wv.slice(s![.., cols.clone()]);
        debug_assert_eq!(xv.ncols(), wslice.ncols());
        let mut out = match b {
            Some(b) => self.value(b).broadcast((xv.nrows(), wslice.nrows())).expect("bias row").to_owned(),
            None => Array2::zeros((xv.nrows(), wslice.nrows())),
        };
        general_mat_mul(1.0, &xv, &wslice.t(), 1.0, &mut out);
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("affine layer"));
        }
        Ok(self.push(Op::Affine { x, w, b, cols }, Some(out)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = &self.value(a) + &self.value(b);
        self.push(Op::Add { a, b }, Some(out))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).mapv(|v| v.max(0.0));
        self.push(Op::Relu(x), Some(out))
    }

    pub fn max_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let cols = xv.ncols();
        let mut best = xv.row(0).to_owned();
        let mut argmax = vec![0usize; cols];
        for (r, row) in xv.rows().into_iter().enumerate().skip(1) {
            for c in 0..cols {
                if row[c] > best[c] {
                    best[c] = row[c];
                    argmax[c] = r;
                }
            }
        }
        let out = best.insert_axis(Axis(0));
        self.push(Op::MaxRows { x, argmax }, Some(out))
    }

    pub fn scaled_sigmoid(&mut self, x: NodeId, scale: f64) -> NodeId {
        let out = self.value(x).mapv(|v| scale / (1.0 + (-v).exp()));
        self.push(Op::ScaledSigmoid { x, scale }, Some(out))
    }

    /// Smallest distance of any recorded non-smooth point to its kink: the
    /// minimum over ReLU inputs of `|x|` and over max-pool columns of the gap
    /// between the best and second-best row. Finite differences with a step
    /// below this margin (times input sensitivity) see a smooth function.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.value(*x).iter() {
                        margin = margin.min(v.abs());
                    }
                }
                Op::MaxRows { x, .. } => {
                    let xv = self.value(*x);
                    for col in xv.columns() {
                        let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                        for &v in col.iter() {
                            if v > a {
                                b = a;
                                a = v;
                            } else if v > b {
                                b = v;
                            }
                        }
                        if b.is_finite() {
                            margin = margin.min(a - b);
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Which side of every kink the recorded evaluation sits on: one entry
    /// per ReLU input (`1` when positive) followed by every max-pool argmax.
    /// Two evaluations with equal patterns lie in the same smooth piece.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => pattern.extend(self.value(*x).iter().map(|&v| usize::from(v > 0.0))),
                Op::MaxRows { argmax, .. } => pattern.extend_from_slice(argmax),
                _ => {}
            }
        }
        pattern
    }

    /// Propagates `seed` (shaped like `output`) back through the tape.
    pub fn backward(&self, output: NodeId, seed: &Array2<f64>, targets: Targets) -> Gradients {
        assert_eq!(self.value(output).dim(), seed.dim(), "seed shape");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.clone());

        let wants = self.needs_grad(targets);

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Constant | Op::Variable | Op::Param(_) => {
                    grads[i] = Some(g);
                }
                Op::Affine { x, w, b, cols } => {
                    let wv = self.value(*w);
                    let wslice = wv.slice(s![.., cols.clone()]);
                    if wants[x.0] {
                        accumulate(&mut grads[x.0], g.dot(&wslice), self.value(*x).dim());
                    }
                    if wants[w.0] {
                        let dw = g.t().dot(&self.value(*x));
                        let slot = grads[w.0].get_or_insert_with(|| Array2::zeros(wv.dim()));
                        let mut sub = slot.slice_mut(s![.., cols.clone()]);
                        sub += &dw;
                    }
                    if let Some(b) = b {
                        if wants[b.0] {
                            let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                            accumulate(&mut grads[b.0], db, self.value(*b).dim());
                        }
                    }
                }
                Op::Add { a, b } => {
                    if wants[b.0] {
                        let bdim = self.value(*b).dim();
                        let gb = if bdim.0 == 1 && g.nrows() != 1 {
                            g.sum_axis(Axis(0)).insert_axis(Axis(0))
                        } else {
                            g.clone()
                        };
                        accumulate(&mut grads[b.0], gb, bdim);
                    }
                    if wants[a.0] {
                        accumulate(&mut grads[a.0], g, self.value(*a).dim());
                    }
                }
                Op::Relu(x) => {
                    if wants[x.0] {
                        let mut gx = g;
                        // Subgradient 0 at the kink.
                        Zip::from(&mut gx)
                            .and(self.nodes[i].value.as_ref().expect("relu value"))
                            .for_each(|gv, &out| {
                                if out <= 0.0 {
                                    *gv = 0.0;
                                }
                            });
                        accumulate(&mut grads[x.0], gx, self.value(*x).dim());
                    }
                }
                Op::MaxRows { x, argmax } => {
                    if wants[x.0] {
                        let dim = self.value(*x).dim();
                        let mut gx = Array2::zeros(dim);
                        for (c, &r) in argmax.iter().enumerate() {
                            gx[[r, c]] = g[[0, c]];
                        }
                        accumulate(&mut grads[x.0], gx, dim);
                    }
                }
                Op::ScaledSigmoid { x, scale } => {
                    if wants[x.0] {
                        let out = self.nodes[i].value.as_ref().expect("sigmoid value");
                        let mut gx = g;
                        Zip::from(&mut gx).and(out).for_each(|gv, &y| {
                            let s = y / scale;
                            *gv *= scale * s * (1.0 - s);
                        });
                        accumulate(&mut grads[x.0], gx, self.value(*x).dim());
                    }
                }
            }
        }

        let mut out = Gradients {
            params: Vec::new(),
            variables: Vec::new(),
        };
        if targets.params {
            out.params = self
                .params
                .iter()
                .enumerate()
                .map(|(p, value)| {
                    self.param_nodes[p]
                        .and_then(|id| grads[id.0].take())
                        .unwrap_or_else(|| Array2::zeros(value.dim()))
                })
                .collect();
        }
        if targets.variables {
            for (i, node) in self.nodes.iter().enumerate() {
                if matches!(node.op, Op::Variable) {
                    let dim = node.value.as_ref().map(|v| v.dim()).unwrap_or((0, 0));
                    out.variables
                        .push(grads[i].take().unwrap_or_else(|| Array2::zeros(dim)));
                }
            }
        }
        out
    }

    /// Marks nodes whose gradient is needed to reach a requested leaf.
    fn needs_grad(&self, targets: Targets) -> Vec<bool> {
        let mut wants = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            wants[i] = match &node.op {
                Op::Constant => false,
                Op::Variable => targets.variables,
                Op::Param(_) => targets.params,
                Op::Affine { x, w, b, .. } => {
                    wants[x.0] || wants[w.0] || b.is_some_and(|b| wants[b.0])
                }
                Op::Add { a, b } => wants[a.0] || wants[b.0],
                Op::Relu(x) | Op::MaxRows { x, .. } | Op::ScaledSigmoid { x, .. } => wants[x.0],
            };
        }
        wants
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>, dim: (usize, usize)) {
    debug_assert_eq!(g.dim(), dim);
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn affine_gradients_by_hand() {
        // y = x W^T + b, loss = sum(y)
        let params = vec![array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], array![[0.5, -0.5, 1.0]]];
        let mut t = Tape::new(&params);
        let x = t.variable(array![[1.0, -1.0], [2.0, 0.5]]);
        let w = t.param(0);
        let b = t.param(1);
        let y = t.affine(x, w, Some(b), 0..2).unwrap();
        assert_eq!(t.value(y), array![[-0.5, -1.5, 0.0], [3.5, 7.5, 14.0]]);

        let g = t.backward(y, &Array2::ones((2, 3)), Targets::ALL);
        // dL/dW[i, j] = sum_r x[r, j]
        assert_eq!(g.params[0], array![[3.0, -0.5], [3.0, -0.5], [3.0, -0.5]]);
        assert_eq!(g.params[1], array![[2.0, 2.0, 2.0]]);
        // dL/dx[r, j] = sum_i W[i, j]
        assert_eq!(g.variables[0], array![[9.0, 12.0], [9.0, 12.0]]);
    }

    #[test]
    fn column_slices_accumulate_into_one_parameter() {
        let params = vec![array![[1.0, 2.0, 3.0]]];
        let mut t = Tape::new(&params);
        let a = t.variable(array![[1.0, 1.0]]);
        let b = t.variable(array![[2.0]]);
        let w = t.param(0);
        let ya = t.affine(a, w, None, 0..2).unwrap();
        let yb = t.affine(b, w, None, 2..3).unwrap();
        let y = t.add(ya, yb);
        assert_eq!(t.value(y), array![[9.0]]);
        let g = t.backward(y, &array![[1.0]], Targets::ALL);
        assert_eq!(g.params[0], array![[1.0, 1.0, 2.0]]);
        assert_eq!(g.variables[1], array![[3.0]]);
    }

    #[test]
    fn max_rows_routes_to_first_argmax() {
        let params: Vec<Array2<f64>> = vec![];
        let mut t = Tape::new(&params);
        let x = t.variable(array![[1.0, 5.0], [3.0, 5.0], [2.0, 0.0]]);
        let m = t.max_rows(x);
        assert_eq!(t.value(m), array![[3.0, 5.0]]);
        let g = t.backward(m, &array![[1.0, 2.0]], Targets::ALL);
        assert_eq!(g.variables[0], array![[0.0, 2.0], [1.0, 0.0], [0.0, 0.0]]);
        assert_eq!(t.kink_margin(), 0.0);
    }

    #[test]
    fn activation_pattern_lists_relu_signs_then_argmax() {
        let params: Vec<Array2<f64>> = vec![];
        let mut t = Tape::new(&params);
        let x = t.variable(array![[1.0, -5.0], [3.0, 0.0]]);
        let r = t.relu(x);
        t.max_rows(r);
        assert_eq!(t.activation_pattern(), vec![1, 0, 1, 0, 1, 0]);
    }

    #[test]
    fn broadcast_add_sums_rows() {
        let params: Vec<Array2<f64>> = vec![];
        let mut t = Tape::new(&params);
        let a = t.variable(Array2::zeros((3, 2)));
        let b = t.variable(array![[1.0, 2.0]]);
        let y = t.add(a, b);
        let r = t.relu(y);
        let g = t.backward(r, &Array2::ones((3, 2)), Targets::ALL);
        assert_eq!(g.variables[1], array![[3.0, 3.0]]);
    }

    #[test]
    fn relu_kink_has_zero_subgradient() {
        let params: Vec<Array2<f64>> = vec![];
        let mut t = Tape::new(&params);
        let x = t.variable(array![[0.0, -1.0, 2.0]]);
        let r = t.relu(x);
        let g = t.backward(r, &array![[1.0, 1.0, 1.0]], Targets::ALL);
        assert_eq!(g.variables[0], array![[0.0, 0.0, 1.0]]);
    }

    #[test]
    fn sigmoid_derivative() {
        let params: Vec<Array2<f64>> = vec![];
        let mut t = Tape::new(&params);
        let x = t.variable(array![[0.3]]);
        let y = t.scaled_sigmoid(x, 2.0);
        let g = t.backward(y, &array![[1.0]], Targets::ALL);
        let s = 1.0 / (1.0 + (-0.3f64).exp());
        assert!((g.variables[0][[0, 0]] - 2.0 * s * (1.0 - s)).abs() < 1e-15);
    }

    #[test]
    fn affine_overflow_is_reported() {
        let params = vec![array![[1e300]]];
        let mut t = Tape::new(&params);
        let x = t.constant(array![[1e300]]);
        let w = t.param(0);
        assert!(matches!(t.affine(x, w, None, 0..1), Err(Error::NonFinite(_))));
    }
}
