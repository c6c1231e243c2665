//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation in insertion order. Because a node can
//! only reference nodes created before it, insertion order is a topological
//! order and [`Tape::backward`] simply walks the nodes in reverse, adding each
//! node's contribution into the accumulators of its parents.
//!
//! Values live on the tape; a [`Var`] is a cheap copyable handle carrying the
//! node id and the (fixed) shape of its value.

mod adam;

pub use adam::{adam_step, AdamConfig, AdamState};

use ndarray::{Array2, Axis, Zip};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("loss must be 1x1, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("backward already ran on this tape; call reset_grads first")]
    BackwardTwice,
    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),
}

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Kind of operation recorded on the tape. Also used to name ops in
/// gradient-check reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Affine,
    Relu,
    FrobSq,
    SupNormRows,
    Add,
    Sub,
    Scale,
    WeightedSum,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Affine => "affine",
            OpKind::Relu => "relu",
            OpKind::FrobSq => "frob_sq",
            OpKind::SupNormRows => "sup_norm_rows",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Scale => "scale",
            OpKind::WeightedSum => "weighted_sum",
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Affine(usize, usize, usize),
    Relu(usize),
    FrobSq(usize),
    /// Caches the argmax column of every row.
    SupNormRows(usize, Vec<usize>),
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    WeightedSum(usize, Array2<f64>),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Affine(..) => OpKind::Affine,
            Op::Relu(..) => OpKind::Relu,
            Op::FrobSq(..) => OpKind::FrobSq,
            Op::SupNormRows(..) => OpKind::SupNormRows,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Scale(..) => OpKind::Scale,
            Op::WeightedSum(..) => OpKind::WeightedSum,
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Array2<f64>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
    backward_done: bool,
    fault: Option<OpKind>,
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

    /// Scales the backward contribution of every `kind` node by 1.5.
    /// Only meant for checking that the gradient checker notices.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    fn push(&mut self, op: Op, value: Array2<f64>, requires_grad: bool) -> Var {
        let (rows, cols) = value.dim();
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        self.grads.push(None);
        Var { id, rows, cols }
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes.get(v.id).ok_or(AutodiffError::UnknownVar(v.id))
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.id].value
    }

    /// Value of a 1x1 variable.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.id].value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.id].requires_grad
    }

    /// Gradient of the last backward pass. `None` for variables that do not
    /// require a gradient or that the loss does not depend on.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.node(a)?;
        self.node(b)?;
        if a.cols != b.rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let value = self.value(a).dot(self.value(b));
        let rg = self.needs(&[a.id, b.id]);
        Ok(self.push(Op::MatMul(a.id, b.id), value, rg))
    }

    /// `w·x + b·1ᵀ` with `b` a column vector broadcast across columns.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        self.node(w)?;
        self.node(x)?;
        self.node(b)?;
        if w.cols != x.rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "affine",
                lhs: w.shape(),
                rhs: x.shape(),
            });
        }
        if b.rows != w.rows || b.cols != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "affine(bias)",
                lhs: (w.rows, 1),
                rhs: b.shape(),
            });
        }
        let mut value = self.value(w).dot(self.value(x));
        value += self.value(b);
        let rg = self.needs(&[w.id, x.id, b.id]);
        Ok(self.push(Op::Affine(w.id, x.id, b.id), value, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.node(x)?.value.mapv(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.needs(&[x.id]);
        Ok(self.push(Op::Relu(x.id), value, rg))
    }

    /// Squared Frobenius norm as a 1x1 variable.
    pub fn frob_sq(&mut self, x: Var) -> Result<Var> {
        let s = sum_sq(&self.node(x)?.value);
        let rg = self.needs(&[x.id]);
        Ok(self.push(Op::FrobSq(x.id), Array2::from_elem((1, 1), s), rg))
    }

    /// `Σ_i max_j |x_ij|`. The subgradient of each row sits at its argmax
    /// column, lowest index on ties.
    pub fn sup_norm_rows(&mut self, x: Var) -> Result<Var> {
        let value = &self.node(x)?.value;
        let mut argmax = Vec::with_capacity(value.nrows());
        let mut total = 0.0;
        for row in value.rows() {
            let mut best = 0;
            let mut best_abs = f64::NEG_INFINITY;
            for (j, v) in row.iter().enumerate() {
                if v.abs() > best_abs {
                    best_abs = v.abs();
                    best = j;
                }
            }
            if row.is_empty() {
                best_abs = 0.0;
            }
            argmax.push(best);
            total += best_abs;
        }
        let rg = self.needs(&[x.id]);
        Ok(self.push(
            Op::SupNormRows(x.id, argmax),
            Array2::from_elem((1, 1), total),
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let value = self.value(a) + self.value(b);
        let rg = self.needs(&[a.id, b.id]);
        Ok(self.push(Op::Add(a.id, b.id), value, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let value = self.value(a) - self.value(b);
        let rg = self.needs(&[a.id, b.id]);
        Ok(self.push(Op::Sub(a.id, b.id), value, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.node(x)?.value.mapv(|v| v * c);
        let rg = self.needs(&[x.id]);
        Ok(self.push(Op::Scale(x.id, c), value, rg))
    }

    /// `Σ_ij w_ij x_ij` for a constant weight matrix `w`.
    pub fn weighted_sum(&mut self, x: Var, w: Array2<f64>) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if xv.dim() != w.dim() {
            return Err(AutodiffError::ShapeMismatch {
                op: "weighted_sum",
                lhs: x.shape(),
                rhs: w.dim(),
            });
        }
        let mut s = 0.0;
        for (a, b) in xv.iter().zip(w.iter()) {
            s += a * b;
        }
        let rg = self.needs(&[x.id]);
        Ok(self.push(Op::WeightedSum(x.id, w), Array2::from_elem((1, 1), s), rg))
    }

    /// Sums a non-empty list of variables of equal shape, left to right.
    pub fn sum(&mut self, terms: &[Var]) -> Result<Var> {
        let (first, rest) = terms.split_first().expect("sum of empty list");
        let mut acc = *first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.node(a)?;
        self.node(b)?;
        if a.shape() != b.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        Ok(())
    }

    pub fn reset_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.node(loss)?;
        if loss.shape() != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(loss.shape()));
        }
        if self.backward_done {
            return Err(AutodiffError::BackwardTwice);
        }
        self.backward_done = true;
        if !self.nodes[loss.id].requires_grad {
            return Ok(());
        }
        self.grads[loss.id] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.id).rev() {
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            let g = match self.fault {
                Some(kind) if kind == self.nodes[id].op.kind() => g * 1.5,
                _ => g,
            };
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
        // Only leaves and nodes the caller may inspect keep their gradient;
        // constants never had one allocated.
        Ok(())
    }

    fn accumulate(&mut self, id: usize, contribution: Array2<f64>) {
        if !self.nodes[id].requires_grad {
            return;
        }
        match &mut self.grads[id] {
            Some(acc) => *acc += &contribution,
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&mut self, id: usize, g: &Array2<f64>) {
        let rg = |tape: &Tape, i: usize| tape.nodes[i].requires_grad;
        match &self.nodes[id].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if rg(self, a) {
                    let ga = g.dot(&self.nodes[b].value.t());
                    self.accumulate(a, ga);
                }
                if rg(self, b) {
                    let gb = self.nodes[a].value.t().dot(g);
                    self.accumulate(b, gb);
                }
            }
            &Op::Affine(w, x, b) => {
                if rg(self, w) {
                    let gw = g.dot(&self.nodes[x].value.t());
                    self.accumulate(w, gw);
                }
                if rg(self, x) {
                    let gx = self.nodes[w].value.t().dot(g);
                    self.accumulate(x, gx);
                }
                if rg(self, b) {
                    let gb = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.accumulate(b, gb);
                }
            }
            &Op::Relu(x) => {
                let mut gx = g.clone();
                Zip::from(&mut gx)
                    .and(&self.nodes[x].value)
                    .for_each(|gv, &xv| {
                        if xv <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                self.accumulate(x, gx);
            }
            &Op::FrobSq(x) => {
                let s = 2.0 * g[[0, 0]];
                let gx = self.nodes[x].value.mapv(|v| s * v);
                self.accumulate(x, gx);
            }
            Op::SupNormRows(x, argmax) => {
                let x = *x;
                let s = g[[0, 0]];
                let value = &self.nodes[x].value;
                let mut gx = Array2::zeros(value.dim());
                for (i, &j) in argmax.iter().enumerate() {
                    if value.ncols() > 0 {
                        gx[[i, j]] = s * sign(value[[i, j]]);
                    }
                }
                self.accumulate(x, gx);
            }
            &Op::Add(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.mapv(|v| -v));
            }
            &Op::Scale(x, c) => {
                self.accumulate(x, g.mapv(|v| c * v));
            }
            Op::WeightedSum(x, w) => {
                let x = *x;
                let gx = w.mapv(|v| v * g[[0, 0]]);
                self.accumulate(x, gx);
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sum of squares in row-major order.
pub(crate) fn sum_sq(x: &Array2<f64>) -> f64 {
    x.iter().fold(0.0, |acc, v| acc + v * v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_identity_and_gradient() {
        let mut t = Tape::new();
        let m = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let i = t.param(Array2::eye(3));
        let mv = t.param(m.clone());
        let out = t.matmul(i, mv).unwrap();
        assert_eq!(t.value(out), &m);
        let w = array![[1.0, -1.0], [0.5, 2.0], [0.0, 3.0]];
        let loss = t.weighted_sum(out, w.clone()).unwrap();
        t.backward(loss).unwrap();
        // upstream g = w, so d/dI = g·Mᵀ
        assert_eq!(t.grad(i).unwrap(), &w.dot(&m.t()));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.param(Array2::zeros((2, 3)));
        let b = t.param(Array2::zeros((2, 3)));
        assert!(matches!(
            t.matmul(a, b),
            Err(AutodiffError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn affine_zero_weight_gives_bias_columns() {
        let mut t = Tape::new();
        let w = t.param(Array2::zeros((2, 3)));
        let x = t.constant(Array2::from_elem((3, 4), 7.0));
        let b = t.param(array![[1.5], [-2.0]]);
        let y = t.affine(w, x, b).unwrap();
        for col in t.value(y).columns() {
            assert_eq!(col.to_vec(), vec![1.5, -2.0]);
        }
    }

    #[test]
    fn affine_bias_shape_checked() {
        let mut t = Tape::new();
        let w = t.param(Array2::zeros((2, 3)));
        let x = t.constant(Array2::zeros((3, 4)));
        let b = t.param(Array2::zeros((3, 1)));
        assert!(t.affine(w, x, b).is_err());
    }

    #[test]
    fn relu_value_and_mask() {
        let mut t = Tape::new();
        let x = t.param(array![[-1.0, 0.0, 2.0]]);
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y), &array![[0.0, 0.0, 2.0]]);
        let loss = t.weighted_sum(y, array![[1.0, 1.0, 1.0]]).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &array![[0.0, 0.0, 1.0]]);
    }

    #[test]
    fn frob_sq_values() {
        let mut t = Tape::new();
        let z = t.param(Array2::zeros((2, 2)));
        let a = t.param(array![[1.0, 2.0], [3.0, 4.0]]);
        let fz = t.frob_sq(z).unwrap();
        let fa = t.frob_sq(a).unwrap();
        assert_eq!(t.scalar(fz), 0.0);
        assert_eq!(t.scalar(fa), 30.0);
        t.backward(fa).unwrap();
        assert_eq!(t.grad(a).unwrap(), &array![[2.0, 4.0], [6.0, 8.0]]);
    }

    #[test]
    fn sup_norm_rows_identity_and_ties() {
        let mut t = Tape::new();
        let i = t.param(Array2::eye(3));
        let si = t.sup_norm_rows(i).unwrap();
        assert_eq!(t.scalar(si), 3.0);

        let q = t.param(array![[1.0, -4.0], [2.0, 2.0]]);
        let s = t.sup_norm_rows(q).unwrap();
        assert_eq!(t.scalar(s), 6.0);
        t.backward(s).unwrap();
        assert_eq!(t.grad(q).unwrap(), &array![[0.0, -1.0], [1.0, 0.0]]);
    }

    #[test]
    fn add_sub_scale_identities() {
        let mut t = Tape::new();
        let x = t.param(array![[1.0, -2.0], [0.5, 3.0]]);
        let s = t.scale(x, 1.0).unwrap();
        assert_eq!(t.value(s), t.value(x));
        let neg = t.scale(x, -1.0).unwrap();
        let z = t.add(x, neg).unwrap();
        assert!(t.value(z).iter().all(|&v| v == 0.0));
        let d = t.sub(x, x).unwrap();
        assert!(t.value(d).iter().all(|&v| v == 0.0));
        let y = t.param(Array2::zeros((1, 2)));
        assert!(t.add(x, y).is_err());
    }

    #[test]
    fn backward_frob_closed_form() {
        let mut t = Tape::new();
        let xv = array![[0.3, -1.2, 2.0], [4.0, 0.0, -0.7]];
        let x = t.param(xv.clone());
        let l = t.frob_sq(x).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap(), &(xv * 2.0));
    }

    #[test]
    fn backward_errors() {
        let mut t = Tape::new();
        let x = t.param(Array2::ones((2, 2)));
        assert_eq!(
            t.backward(x),
            Err(AutodiffError::NonScalarLoss((2, 2)))
        );
        let l = t.frob_sq(x).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.backward(l), Err(AutodiffError::BackwardTwice));
        t.reset_grads();
        assert!(t.grad(x).is_none());
        t.backward(l).unwrap();
        assert!(t.grad(x).is_some());
    }

    #[test]
    fn constant_leaf_gets_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(array![[1.0, 2.0]]);
        let p = t.param(array![[3.0, 4.0]]);
        let s = t.add(c, p).unwrap();
        let l = t.frob_sq(s).unwrap();
        t.backward(l).unwrap();
        assert!(t.grad(c).is_none());
        assert!(!t.requires_grad(c));
        assert_eq!(t.grad(p).unwrap(), &array![[8.0, 12.0]]);
    }

    #[test]
    fn fan_out_accumulates() {
        let xv = array![[1.0, 2.0], [-3.0, 0.5]];
        let single = {
            let mut t = Tape::new();
            let x = t.param(xv.clone());
            let l = t.frob_sq(x).unwrap();
            t.backward(l).unwrap();
            t.grad(x).unwrap().clone()
        };
        let mut t = Tape::new();
        let x = t.param(xv);
        let a = t.frob_sq(x).unwrap();
        let b = t.frob_sq(x).unwrap();
        let l = t.add(a, b).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap(), &(single * 2.0));
    }
}
