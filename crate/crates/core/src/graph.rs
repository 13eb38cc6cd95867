//! Reverse-mode automatic differentiation over dense matrices.
//!
//! The graph is built define-by-run, one graph per sequence. Nodes live in an
//! arena and reference their operands by index, so insertion order is already
//! a topological order: `forward` evaluates the arena front to back and
//! `backward` sweeps it in reverse, accumulating gradients by the chain rule.

use crate::matrix::Matrix;
use thiserror::Error;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("shape mismatch in {op}: {lhs_rows}x{lhs_cols} vs {rhs_rows}x{rhs_cols}")]
    ShapeMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },
    #[error("row index {row} out of range for matrix with {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("non-finite value produced by {op} (node {node})")]
    NonFiniteValue { op: &'static str, node: usize },
    #[error("root must evaluate to a 1x1 matrix, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("backward called before forward")]
    BackwardBeforeForward,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Parameter,
    MatMul(NodeId, NodeId),
    /// Elementwise add; a 1-row rhs is broadcast over the rows of the lhs.
    Add(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    ConcatCols(NodeId, NodeId),
    RowSelect(NodeId, usize),
    /// (R x C) -> (1 x R); entry r is logsumexp over row r, max-subtracted.
    LogSumExpRow(NodeId),
    ScalarScale(NodeId, f64),
    /// Elementwise multiply by a fixed (non-learnable) mask.
    DropoutMask(NodeId, Matrix),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Parameter => "parameter",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Hadamard(..) => "hadamard",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::ConcatCols(..) => "concat-cols",
            Op::RowSelect(..) => "row-select",
            Op::LogSumExpRow(..) => "logsumexp-row",
            Op::ScalarScale(..) => "scalar-scale",
            Op::DropoutMask(..) => "dropout-mask-apply",
        }
    }
}

#[derive(Debug)]
struct NodeData {
    op: Op,
    rows: usize,
    cols: usize,
    value: Option<Matrix>,
    grad: Option<Matrix>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<NodeData>,
    forward_run: bool,
    evals: usize,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of op evaluations performed by the last `forward` call.
    /// Leaves hold their value from construction and are not counted.
    pub fn last_forward_evals(&self) -> usize {
        self.evals
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Option<Matrix>) -> NodeId {
        self.nodes.push(NodeData {
            op,
            rows,
            cols,
            value,
            grad: None,
        });
        self.forward_run = false;
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Matrix) -> NodeId {
        let (r, c) = (value.rows(), value.cols());
        self.push(Op::Input, r, c, Some(value))
    }

    pub fn parameter(&mut self, value: Matrix) -> NodeId {
        let (r, c) = (value.rows(), value.cols());
        self.push(Op::Parameter, r, c, Some(value))
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    fn mismatch(op: &'static str, a: (usize, usize), b: (usize, usize)) -> GraphError {
        GraphError::ShapeMismatch {
            op,
            lhs_rows: a.0,
            lhs_cols: a.1,
            rhs_rows: b.0,
            rhs_cols: b.1,
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Self::mismatch("matmul", (ar, ac), (br, bc)));
        }
        Ok(self.push(Op::MatMul(a, b), ar, bc, None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let broadcast = br == 1 && ar >= 1 && bc == ac;
        if !(ar == br && ac == bc) && !broadcast {
            return Err(Self::mismatch("add", (ar, ac), (br, bc)));
        }
        Ok(self.push(Op::Add(a, b), ar, ac, None))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ar != br || ac != bc {
            return Err(Self::mismatch("hadamard", (ar, ac), (br, bc)));
        }
        Ok(self.push(Op::Hadamard(a, b), ar, ac, None))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        self.push(Op::Sigmoid(x), r, c, None)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        self.push(Op::Tanh(x), r, c, None)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ar != br {
            return Err(Self::mismatch("concat-cols", (ar, ac), (br, bc)));
        }
        Ok(self.push(Op::ConcatCols(a, b), ar, ac + bc, None))
    }

    pub fn row_select(&mut self, x: NodeId, row: usize) -> Result<NodeId, GraphError> {
        let (r, c) = self.shape(x);
        if row >= r {
            return Err(GraphError::RowOutOfRange { row, rows: r });
        }
        Ok(self.push(Op::RowSelect(x, row), 1, c, None))
    }

    pub fn logsumexp_row(&mut self, x: NodeId) -> NodeId {
        let (r, _) = self.shape(x);
        self.push(Op::LogSumExpRow(x), 1, r, None)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let (r, cl) = self.shape(x);
        self.push(Op::ScalarScale(x, c), r, cl, None)
    }

    pub fn apply_mask(&mut self, x: NodeId, mask: Matrix) -> Result<NodeId, GraphError> {
        let (r, c) = self.shape(x);
        if mask.rows() != r || mask.cols() != c {
            return Err(Self::mismatch(
                "dropout-mask-apply",
                (r, c),
                (mask.rows(), mask.cols()),
            ));
        }
        Ok(self.push(Op::DropoutMask(x, mask), r, c, None))
    }

    /// Value of a node; panics if no forward pass has computed it yet.
    pub fn value(&self, id: NodeId) -> &Matrix {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("node value not computed; run forward first")
    }

    /// Gradient of the last backward root w.r.t. this node.
    pub fn grad(&self, id: NodeId) -> &Matrix {
        self.nodes[id.0]
            .grad
            .as_ref()
            .expect("node gradient not computed; run backward first")
    }

    /// Masks of every dropout-mask-apply node, in insertion order.
    pub fn dropout_masks(&self) -> Vec<&Matrix> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::DropoutMask(_, m) => Some(m),
                _ => None,
            })
            .collect()
    }

    fn eval_node(&mut self, idx: usize) -> Result<(), GraphError> {
        let op = self.nodes[idx].op.clone();
        let value = match &op {
            Op::Input | Op::Parameter => return Ok(()),
            Op::MatMul(a, b) => {
                let va = self.nodes[a.0].value.as_ref().unwrap();
                let vb = self.nodes[b.0].value.as_ref().unwrap();
                va.matmul(vb)
            }
            Op::Add(a, b) => {
                let va = self.nodes[a.0].value.as_ref().unwrap();
                let vb = self.nodes[b.0].value.as_ref().unwrap();
                let mut out = va.clone();
                if vb.rows() == 1 && va.rows() > 1 {
                    for r in 0..out.rows() {
                        for c in 0..out.cols() {
                            out.set(r, c, out.get(r, c) + vb.get(0, c));
                        }
                    }
                } else {
                    out.add_assign(vb);
                }
                out
            }
            Op::Hadamard(a, b) => {
                let va = self.nodes[a.0].value.as_ref().unwrap();
                let vb = self.nodes[b.0].value.as_ref().unwrap();
                let mut out = va.clone();
                for (o, x) in out.as_mut_slice().iter_mut().zip(vb.as_slice()) {
                    *o *= x;
                }
                out
            }
            Op::Sigmoid(x) => {
                let vx = self.nodes[x.0].value.as_ref().unwrap();
                let mut out = vx.clone();
                for v in out.as_mut_slice() {
                    *v = 1.0 / (1.0 + (-*v).exp());
                }
                out
            }
            Op::Tanh(x) => {
                let vx = self.nodes[x.0].value.as_ref().unwrap();
                let mut out = vx.clone();
                for v in out.as_mut_slice() {
                    *v = v.tanh();
                }
                out
            }
            Op::ConcatCols(a, b) => {
                let va = self.nodes[a.0].value.as_ref().unwrap();
                let vb = self.nodes[b.0].value.as_ref().unwrap();
                let mut out = Matrix::zeros(va.rows(), va.cols() + vb.cols());
                for r in 0..va.rows() {
                    for c in 0..va.cols() {
                        out.set(r, c, va.get(r, c));
                    }
                    for c in 0..vb.cols() {
                        out.set(r, va.cols() + c, vb.get(r, c));
                    }
                }
                out
            }
            Op::RowSelect(x, row) => {
                let vx = self.nodes[x.0].value.as_ref().unwrap();
                Matrix::from_vec(1, vx.cols(), vx.row(*row).to_vec())
            }
            Op::LogSumExpRow(x) => {
                let vx = self.nodes[x.0].value.as_ref().unwrap();
                let mut out = Matrix::zeros(1, vx.rows());
                for r in 0..vx.rows() {
                    let row = vx.row(r);
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
                    out.set(0, r, m + s.ln());
                }
                out
            }
            Op::ScalarScale(x, c) => {
                let vx = self.nodes[x.0].value.as_ref().unwrap();
                let mut out = vx.clone();
                out.scale_assign(*c);
                out
            }
            Op::DropoutMask(x, mask) => {
                let vx = self.nodes[x.0].value.as_ref().unwrap();
                let mut out = vx.clone();
                for (o, m) in out.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    *o *= m;
                }
                out
            }
        };
        if !value.is_finite() {
            return Err(GraphError::NonFiniteValue {
                op: op.name(),
                node: idx,
            });
        }
        self.evals += 1;
        self.nodes[idx].value = Some(value);
        Ok(())
    }

    /// Evaluate every node up to and including `root`, each exactly once.
    pub fn evaluate(&mut self, root: NodeId) -> Result<(), GraphError> {
        self.evals = 0;
        for idx in 0..=root.0 {
            self.eval_node(idx)?;
        }
        self.forward_run = true;
        Ok(())
    }

    /// Forward pass; `root` must be scalar (1x1). Returns its value.
    pub fn forward(&mut self, root: NodeId) -> Result<f64, GraphError> {
        let (r, c) = self.shape(root);
        if r != 1 || c != 1 {
            return Err(GraphError::NonScalarRoot { rows: r, cols: c });
        }
        self.evaluate(root)?;
        Ok(self.nodes[root.0].value.as_ref().unwrap().get(0, 0))
    }

    /// Reverse sweep from `root`; fills `grad` on every node up to `root`.
    /// Parameter nodes not reachable from `root` keep a zero gradient.
    pub fn backward(&mut self, root: NodeId) -> Result<(), GraphError> {
        if !self.forward_run {
            return Err(GraphError::BackwardBeforeForward);
        }
        let (r, c) = self.shape(root);
        if r != 1 || c != 1 {
            return Err(GraphError::NonScalarRoot { rows: r, cols: c });
        }
        for n in self.nodes.iter_mut() {
            n.grad = Some(Matrix::zeros(n.rows, n.cols));
        }
        self.nodes[root.0].grad.as_mut().unwrap().set(0, 0, 1.0);

        for idx in (0..=root.0).rev() {
            let op = self.nodes[idx].op.clone();
            let gout = self.nodes[idx].grad.clone().unwrap();
            match &op {
                Op::Input | Op::Parameter => {}
                Op::MatMul(a, b) => {
                    let va = self.nodes[a.0].value.clone().unwrap();
                    let vb = self.nodes[b.0].value.clone().unwrap();
                    let da = gout.matmul_bt(&vb);
                    let db = va.matmul_at(&gout);
                    self.nodes[a.0].grad.as_mut().unwrap().add_assign(&da);
                    self.nodes[b.0].grad.as_mut().unwrap().add_assign(&db);
                }
                Op::Add(a, b) => {
                    self.nodes[a.0].grad.as_mut().unwrap().add_assign(&gout);
                    let (br, bc) = self.shape(*b);
                    if br == 1 && gout.rows() > 1 {
                        let mut db = Matrix::zeros(1, bc);
                        for rr in 0..gout.rows() {
                            for cc in 0..bc {
                                db.set(0, cc, db.get(0, cc) + gout.get(rr, cc));
                            }
                        }
                        self.nodes[b.0].grad.as_mut().unwrap().add_assign(&db);
                    } else {
                        self.nodes[b.0].grad.as_mut().unwrap().add_assign(&gout);
                    }
                }
                Op::Hadamard(a, b) => {
                    let va = self.nodes[a.0].value.clone().unwrap();
                    let vb = self.nodes[b.0].value.clone().unwrap();
                    let mut da = gout.clone();
                    for (d, v) in da.as_mut_slice().iter_mut().zip(vb.as_slice()) {
                        *d *= v;
                    }
                    let mut db = gout.clone();
                    for (d, v) in db.as_mut_slice().iter_mut().zip(va.as_slice()) {
                        *d *= v;
                    }
                    self.nodes[a.0].grad.as_mut().unwrap().add_assign(&da);
                    self.nodes[b.0].grad.as_mut().unwrap().add_assign(&db);
                }
                Op::Sigmoid(x) => {
                    let y = self.nodes[idx].value.clone().unwrap();
                    let mut dx = gout.clone();
                    for (d, s) in dx.as_mut_slice().iter_mut().zip(y.as_slice()) {
                        *d *= s * (1.0 - s);
                    }
                    self.nodes[x.0].grad.as_mut().unwrap().add_assign(&dx);
                }
                Op::Tanh(x) => {
                    let y = self.nodes[idx].value.clone().unwrap();
                    let mut dx = gout.clone();
                    for (d, t) in dx.as_mut_slice().iter_mut().zip(y.as_slice()) {
                        *d *= 1.0 - t * t;
                    }
                    self.nodes[x.0].grad.as_mut().unwrap().add_assign(&dx);
                }
                Op::ConcatCols(a, b) => {
                    let (_, ac) = self.shape(*a);
                    let (_, bc) = self.shape(*b);
                    let mut da = Matrix::zeros(gout.rows(), ac);
                    let mut db = Matrix::zeros(gout.rows(), bc);
                    for rr in 0..gout.rows() {
                        for cc in 0..ac {
                            da.set(rr, cc, gout.get(rr, cc));
                        }
                        for cc in 0..bc {
                            db.set(rr, cc, gout.get(rr, ac + cc));
                        }
                    }
                    self.nodes[a.0].grad.as_mut().unwrap().add_assign(&da);
                    self.nodes[b.0].grad.as_mut().unwrap().add_assign(&db);
                }
                Op::RowSelect(x, row) => {
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    for cc in 0..gout.cols() {
                        g.set(*row, cc, g.get(*row, cc) + gout.get(0, cc));
                    }
                }
                Op::LogSumExpRow(x) => {
                    let vx = self.nodes[x.0].value.clone().unwrap();
                    let y = self.nodes[idx].value.clone().unwrap();
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    for rr in 0..vx.rows() {
                        let go = gout.get(0, rr);
                        if go == 0.0 {
                            continue;
                        }
                        let lse = y.get(0, rr);
                        for cc in 0..vx.cols() {
                            let soft = (vx.get(rr, cc) - lse).exp();
                            g.set(rr, cc, g.get(rr, cc) + go * soft);
                        }
                    }
                }
                Op::ScalarScale(x, c) => {
                    let mut dx = gout.clone();
                    dx.scale_assign(*c);
                    self.nodes[x.0].grad.as_mut().unwrap().add_assign(&dx);
                }
                Op::DropoutMask(x, mask) => {
                    let mut dx = gout.clone();
                    for (d, m) in dx.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                        *d *= m;
                    }
                    self.nodes[x.0].grad.as_mut().unwrap().add_assign(&dx);
                }
            }
        }
        Ok(())
    }
}

/// Gradients of the loss built by `build` w.r.t. each parameter, via backward.
pub fn analytic_gradients<F>(build: F, params: &[Matrix]) -> Vec<Matrix>
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.parameter(p.clone())).collect();
    let root = build(&mut g, &ids);
    g.forward(root).expect("forward failed in gradient check");
    g.backward(root).expect("backward failed in gradient check");
    ids.iter().map(|id| g.grad(*id).clone()).collect()
}

/// Gradients by central finite differences, rebuilding the graph per probe.
pub fn numeric_gradients<F>(build: F, params: &[Matrix], step: f64) -> Vec<Matrix>
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let eval = |ps: &[Matrix]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| g.parameter(p.clone())).collect();
        let root = build(&mut g, &ids);
        g.forward(root).expect("forward failed in gradient check")
    };

    let mut work: Vec<Matrix> = params.to_vec();
    let mut out: Vec<Matrix> = params
        .iter()
        .map(|p| Matrix::zeros(p.rows(), p.cols()))
        .collect();
    for pi in 0..work.len() {
        for e in 0..work[pi].as_slice().len() {
            let orig = work[pi].as_slice()[e];
            work[pi].as_mut_slice()[e] = orig + step;
            let f_plus = eval(&work);
            work[pi].as_mut_slice()[e] = orig - step;
            let f_minus = eval(&work);
            work[pi].as_mut_slice()[e] = orig;
            out[pi].as_mut_slice()[e] = (f_plus - f_minus) / (2.0 * step);
        }
    }
    out
}

/// max over entries of |a - b| / max(1, |a|, |b|).
pub fn max_relative_error(a: &[Matrix], b: &[Matrix]) -> f64 {
    let mut max_err = 0.0f64;
    for (ma, mb) in a.iter().zip(b) {
        for (x, y) in ma.as_slice().iter().zip(mb.as_slice()) {
            let err = (x - y).abs() / 1.0f64.max(x.abs()).max(y.abs());
            max_err = max_err.max(err);
        }
    }
    max_err
}

/// Compare analytic gradients against central finite differences.
///
/// `build` must deterministically construct the loss from the given parameter
/// nodes (any dropout masks fixed). Returns the maximum over all parameter
/// entries of |analytic - numeric| / max(1, |analytic|, |numeric|).
pub fn check_gradients<F>(build: F, params: &[Matrix], step: f64) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let analytic = analytic_gradients(&build, params);
    let numeric = numeric_gradients(&build, params, step);
    max_relative_error(&analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_forward_and_backward() {
        let mut g = Graph::new();
        let x = g.parameter(Matrix::from_vec(1, 1, vec![3.0]));
        let y = g.matmul(x, x).unwrap();
        assert_eq!(g.forward(y).unwrap(), 9.0);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).get(0, 0), 6.0);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut g = Graph::new();
        let x = g.input(Matrix::zeros(2, 2));
        let s = g.sigmoid(x);
        g.evaluate(s).unwrap();
        assert!(g.value(s).as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn sigmoid_grad_at_zero() {
        let mut g = Graph::new();
        let x = g.parameter(Matrix::zeros(1, 1));
        let s = g.sigmoid(x);
        assert_eq!(g.forward(s).unwrap(), 0.5);
        g.backward(s).unwrap();
        assert!((g.grad(x).get(0, 0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn logsumexp_uniform_row() {
        let mut g = Graph::new();
        let x = g.input(Matrix::zeros(1, 4));
        let l = g.logsumexp_row(x);
        let v = g.forward(l).unwrap();
        assert!((v - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_is_overflow_safe() {
        let mut g = Graph::new();
        let x = g.input(Matrix::from_vec(1, 2, vec![1000.0, 1000.0]));
        let l = g.logsumexp_row(x);
        let v = g.forward(l).unwrap();
        assert!((v - (1000.0 + 2.0f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn matvec_sum_gradient() {
        // f(W) = sum(W v) with v = [1, 2]^T; dW = [[1,2],[1,2]].
        let mut g = Graph::new();
        let w = g.parameter(Matrix::zeros(2, 2));
        let v = g.input(Matrix::from_vec(2, 1, vec![1.0, 2.0]));
        let ones = g.input(Matrix::from_vec(1, 2, vec![1.0, 1.0]));
        let wv = g.matmul(w, v).unwrap();
        let s = g.matmul(ones, wv).unwrap();
        g.forward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).as_slice(), &[1.0, 2.0, 1.0, 2.0]);

        // Same function through the finite-difference checker.
        let err = check_gradients(
            |g, ps| {
                let v = g.input(Matrix::from_vec(2, 1, vec![1.0, 2.0]));
                let ones = g.input(Matrix::from_vec(1, 2, vec![1.0, 1.0]));
                let wv = g.matmul(ps[0], v).unwrap();
                g.matmul(ones, wv).unwrap()
            },
            &[Matrix::zeros(2, 2)],
            1e-5,
        );
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn backward_before_forward_errors() {
        let mut g = Graph::new();
        let x = g.parameter(Matrix::from_vec(1, 1, vec![1.0]));
        let y = g.matmul(x, x).unwrap();
        assert!(matches!(
            g.backward(y),
            Err(GraphError::BackwardBeforeForward)
        ));
    }

    #[test]
    fn shape_mismatch_reported_at_build() {
        let mut g = Graph::new();
        let a = g.input(Matrix::zeros(2, 3));
        let b = g.input(Matrix::zeros(2, 3));
        assert!(g.matmul(a, b).is_err());
        let c = g.input(Matrix::zeros(1, 2));
        assert!(g.hadamard(a, c).is_err());
        assert!(g.row_select(a, 5).is_err());
    }

    #[test]
    fn each_node_evaluated_once_even_when_shared() {
        let mut g = Graph::new();
        let x = g.parameter(Matrix::from_vec(1, 1, vec![2.0]));
        let sq = g.matmul(x, x).unwrap();
        // sq feeds two consumers; it must still be evaluated once.
        let a = g.scale(sq, 3.0);
        let b = g.add(sq, a).unwrap();
        let total = g.forward(b).unwrap();
        assert_eq!(total, 16.0);
        // 3 op nodes (matmul, scale, add); the parameter leaf is not counted.
        assert_eq!(g.last_forward_evals(), 3);
    }

    #[test]
    fn unreachable_parameter_gets_zero_grad() {
        let mut g = Graph::new();
        let x = g.parameter(Matrix::from_vec(1, 1, vec![3.0]));
        let unused = g.parameter(Matrix::from_vec(2, 2, vec![1.0; 4]));
        let y = g.matmul(x, x).unwrap();
        g.forward(y).unwrap();
        g.backward(y).unwrap();
        assert!(g.grad(unused).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadratic_gradcheck_is_tight() {
        // Quadratics are exact for central differences up to roundoff.
        let err = check_gradients(
            |g, ps| {
                let prod = g.hadamard(ps[0], ps[0]).unwrap();
                let ones = g.input(Matrix::from_vec(3, 1, vec![1.0; 3]));
                g.matmul(prod, ones).unwrap()
            },
            &[Matrix::from_vec(1, 3, vec![1.5, -2.0, 0.5])],
            1e-5,
        );
        assert!(err < 1e-7, "err = {err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let build = |g: &mut Graph, ps: &[NodeId]| {
            let s = g.sigmoid(ps[0]);
            let boosted = g.scale(s, 8.0);
            let ones = g.input(Matrix::from_vec(3, 1, vec![1.0; 3]));
            g.matmul(boosted, ones).unwrap()
        };
        let params = [Matrix::from_vec(1, 3, vec![0.3, -0.2, 0.1])];
        let mut analytic = analytic_gradients(build, &params);
        let numeric = numeric_gradients(build, &params, 1e-5);
        assert!(max_relative_error(&analytic, &numeric) < 1e-7);
        // Doubling one entry must be flagged loudly.
        analytic[0].as_mut_slice()[1] *= 2.0;
        let err = max_relative_error(&analytic, &numeric);
        assert!(err > 0.3, "corruption not detected: err = {err}");
    }

    #[test]
    fn every_primitive_op_passes_finite_difference_check() {
        // 100 random shape/seed combinations across the op set.
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = rng.random_range(1..4usize);
            let c = rng.random_range(1..4usize);
            let k = rng.random_range(1..4usize);
            let randm = |rng: &mut ChaCha8Rng, rr: usize, cc: usize| {
                Matrix::from_vec(
                    rr,
                    cc,
                    (0..rr * cc)
                        .map(|_| rng.random::<f64>() * 2.0 - 1.0)
                        .collect(),
                )
            };

            // Wrap op output (R x C) to a scalar with fixed random probes:
            // probe_l (1 x R) * out * probe_r (C x 1).
            let scalarize = |g: &mut Graph, out: NodeId, pl: &Matrix, pr: &Matrix| {
                let l = g.input(pl.clone());
                let r = g.input(pr.clone());
                let lo = g.matmul(l, out).unwrap();
                g.matmul(lo, r).unwrap()
            };

            type Builder = Box<dyn Fn(&mut Graph, &[NodeId]) -> NodeId>;
            let op_idx = seed as usize % 10;
            let (params, builder): (Vec<Matrix>, Builder) = match op_idx {
                0 => {
                    let a = randm(&mut rng, r, k);
                    let b = randm(&mut rng, k, c);
                    let pl = randm(&mut rng, 1, r);
                    let pr = randm(&mut rng, c, 1);
                    (
                        vec![a, b],
                        Box::new(move |g, ps| {
                            let o = g.matmul(ps[0], ps[1]).unwrap();
                            scalarize(g, o, &pl, &pr)
                        }),
                    )
                }
                1 => {
                    let a = randm(&mut rng, r.max(2), c);
                    let b = randm(&mut rng, 1, c); // broadcast rhs
                    let pl = randm(&mut rng, 1, a.rows());
                    let pr = randm(&mut rng, c, 1);
                    (
                        vec![a, b],
                        Box::new(move |g, ps| {
                            let o = g.add(ps[0], ps[1]).unwrap();
                            scalarize(g, o, &pl, &pr)
                        }),
                    )
                }
                2 => {
                    let a = randm(&mut rng, r, c);
                    let b = randm(&mut rng, r, c);
                    let pl = randm(&mut rng, 1, r);
                    let pr = randm(&mut rng, c, 1);
                    (
                        vec![a, b],
                        Box::new(move |g, ps| {
                            let o = g.hadamard(ps[0], ps[1]).unwrap();
                            scalarize(g, o, &pl, &pr)
                        }),
                    )
                }
                3 => {
                    let a = randm(&mut rng, r, c);
                    let pl = randm(&mut rng, 1, r);
                    let pr = randm(&mut rng, c, 1);
                    (
                        vec![a],
                        Box::new(move |g, ps| {
                            let o = g.sigmoid(ps[0]);
                            scalarize(g, o, &pl, &pr)
                        }),
                    )
                }
                4 => {
                    let a = randm(&mut rng, r, c);
                    let pl = randm(&mut rng, 1, r);
                    let pr = randm(&mut rng, c, 1);
                    (
                        vec![a],
                        Box::new(move |g, ps| {
                            let o = g.tanh(ps[0]);
                            scalarize(g, o, &pl, &pr)
                        }),
                    )
                }
                5 => {
                    let a = randm(&mut rng, r, c);
                    let b = randm(&mut rng, r, k);
                    let pl = randm(&mut rng, 1, r);
                    let pr = randm(&mut rng, c + k, 1);
                    (
                        vec![a, b],
                        Box::new(move |g, ps| {
                            let o = g.concat_cols(ps[0], ps[1]).unwrap();
                            scalarize(g, o, &pl, &pr)
                        }),
                    )
                }
                6 => {
                    let a = randm(&mut rng, r, c);
                    let row = rng.random_range(0..r);
                    let pl = randm(&mut rng, 1, 1);
                    let pr = randm(&mut rng, c, 1);
                    (
                        vec![a],
                        Box::new(move |g, ps| {
                            let o = g.row_select(ps[0], row).unwrap();
                            scalarize(g, o, &pl, &pr)
                        }),
                    )
                }
                7 => {
                    let a = randm(&mut rng, r, c);
                    let pl = randm(&mut rng, 1, 1);
                    let pr = randm(&mut rng, r, 1);
                    (
                        vec![a],
                        Box::new(move |g, ps| {
                            let o = g.logsumexp_row(ps[0]);
                            scalarize(g, o, &pl, &pr)
                        }),
                    )
                }
                8 => {
                    let a = randm(&mut rng, r, c);
                    let factor = rng.random::<f64>() * 4.0 - 2.0;
                    let pl = randm(&mut rng, 1, r);
                    let pr = randm(&mut rng, c, 1);
                    (
                        vec![a],
                        Box::new(move |g, ps| {
                            let o = g.scale(ps[0], factor);
                            scalarize(g, o, &pl, &pr)
                        }),
                    )
                }
                _ => {
                    let a = randm(&mut rng, r, c);
                    let mask = Matrix::from_vec(
                        r,
                        c,
                        (0..r * c)
                            .map(|_| if rng.random::<f64>() < 0.5 { 0.0 } else { 2.0 })
                            .collect(),
                    );
                    let pl = randm(&mut rng, 1, r);
                    let pr = randm(&mut rng, c, 1);
                    (
                        vec![a],
                        Box::new(move |g, ps| {
                            let o = g.apply_mask(ps[0], mask.clone()).unwrap();
                            scalarize(g, o, &pl, &pr)
                        }),
                    )
                }
            };

            let err = check_gradients(|g, ps| builder(g, ps), &params, 1e-5);
            assert!(err < 1e-4, "seed {seed} op {op_idx}: err = {err}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let build = || {
            let mut g = Graph::new();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let x = g.parameter(Matrix::glorot(3, 3, &mut rng));
            let s = g.sigmoid(x);
            let t = g.tanh(s);
            let l = g.logsumexp_row(t);
            let ones = g.input(Matrix::from_vec(3, 1, vec![1.0; 3]));
            let root = g.matmul(l, ones).unwrap();
            g.forward(root).unwrap()
        };
        let a = build();
        let b = build();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
