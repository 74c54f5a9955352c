//! Dense f64 matrices with tape-based reverse-mode differentiation.
//!
//! Just enough machinery for the split predictor: matmul, elementwise ops,
//! row stacking/selection, softmax and the two losses. A [`Tape`] records
//! every op; [`backward`] replays it in reverse creation order (which is a
//! reverse topological order) and accumulates gradients into every leaf.
//! [`grad_check`] compares tape gradients against central finite
//! differences and is the ground truth for the whole module.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Row-major dense matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Operand shapes are incompatible for the named op.
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// backward() requires a 1x1 loss node.
    NonScalarLoss { rows: usize, cols: usize },
    /// Row or class index outside the operand.
    IndexOutOfRange { index: usize, len: usize },
    /// Data length does not match rows*cols.
    BadDimensions { rows: usize, cols: usize, len: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch {}x{} vs {}x{}", lhs.0, lhs.1, rhs.0, rhs.1)
            }
            TensorError::NonScalarLoss { rows, cols } => {
                write!(f, "backward requires a 1x1 loss, got {rows}x{cols}")
            }
            TensorError::IndexOutOfRange { index, len } => {
                write!(f, "index {index} out of range for length {len}")
            }
            TensorError::BadDimensions { rows, cols, len } => {
                write!(f, "data length {len} does not match {rows}x{cols}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TensorError {}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::BadDimensions { rows, cols, len: data.len() });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// 1xN row vector.
    pub fn row_vector(values: &[f64]) -> Self {
        Matrix { rows: 1, cols: values.len(), data: values.to_vec() }
    }

    /// Nx1 column vector.
    pub fn column_vector(values: &[f64]) -> Self {
        Matrix { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &Matrix, op: &'static str) -> Result<(), TensorError> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch { op, lhs: self.shape(), rhs: other.shape() });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Raw kernels (shared by forward and backward passes)
// ---------------------------------------------------------------------------

/// C = A * B, ikj order. Zero entries of A are skipped, which makes the
/// sparse chain adjacencies used by the GNN nearly free.
pub(crate) fn matmul_raw(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// C += A^T * B where A is m x n and B is m x p; result n x p.
fn matmul_tn_acc(out: &mut Matrix, a: &Matrix, b: &Matrix) {
    for i in 0..a.rows {
        let arow = a.row(i);
        let brow = b.row(i);
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let orow = &mut out.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// C += A * B^T where A is m x p and B is n x p; result m x n.
fn matmul_nt_acc(out: &mut Matrix, a: &Matrix, b: &Matrix) {
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * b.rows..(i + 1) * b.rows];
        for (k, o) in orow.iter_mut().enumerate() {
            let brow = b.row(k);
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn softmax_row_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        let e = libm::exp(x - max);
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Numerically-stable softmax of a flat slice (helper for inference paths).
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    softmax_row_into(values, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul,
    Add,
    /// Broadcast add of a 1xN bias row onto every row of the first parent.
    AddRowBias,
    Hadamard,
    Scale(f64),
    Relu,
    Sigmoid,
    Tanh,
    /// Vertical stack: rows of the first parent followed by rows of the second.
    ConcatRows,
    SelectRow(usize),
    SoftmaxRows,
    MseLoss,
    /// Cross-entropy of softmax over all entries against one true index.
    /// The cached matrix holds the softmax probabilities.
    SoftmaxCrossEntropy(usize, Matrix),
}

const NO_PARENT: usize = usize::MAX;

struct Node {
    value: Matrix,
    parents: [usize; 2],
    op: Op,
}

/// Records every op applied to its [`Var`]s; one tape per training step.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register a leaf (parameter or constant input).
    pub fn leaf(&self, value: Matrix) -> Var<'_> {
        self.push(value, [NO_PARENT, NO_PARENT], Op::Leaf)
    }

    fn push(&self, value: Matrix, parents: [usize; 2], op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents, op });
        Var { tape: self, idx: nodes.len() - 1 }
    }
}

impl<'t> Var<'t> {
    pub fn index(&self) -> usize {
        self.idx
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.idx].value.shape()
    }

    pub fn value(&self) -> Matrix {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self) -> Result<f64, TensorError> {
        let nodes = self.tape.nodes.borrow();
        let v = &nodes[self.idx].value;
        if v.shape() != (1, 1) {
            return Err(TensorError::NonScalarLoss { rows: v.rows, cols: v.cols });
        }
        Ok(v.data[0])
    }

    pub fn matmul(&self, rhs: Var<'t>) -> Result<Var<'t>, TensorError> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.idx].value, &nodes[rhs.idx].value);
            if a.cols != b.rows {
                return Err(TensorError::ShapeMismatch { op: "matmul", lhs: a.shape(), rhs: b.shape() });
            }
            matmul_raw(a, b)
        };
        Ok(self.tape.push(out, [self.idx, rhs.idx], Op::MatMul))
    }

    pub fn add(&self, rhs: Var<'t>) -> Result<Var<'t>, TensorError> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.idx].value, &nodes[rhs.idx].value);
            a.same_shape(b, "add")?;
            let mut out = a.clone();
            for (o, &bv) in out.data.iter_mut().zip(&b.data) {
                *o += bv;
            }
            out
        };
        Ok(self.tape.push(out, [self.idx, rhs.idx], Op::Add))
    }

    /// Add a 1xN bias row to every row of self (M x N).
    pub fn add_row_bias(&self, bias: Var<'t>) -> Result<Var<'t>, TensorError> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.idx].value, &nodes[bias.idx].value);
            if b.rows != 1 || b.cols != a.cols {
                return Err(TensorError::ShapeMismatch { op: "add_row_bias", lhs: a.shape(), rhs: b.shape() });
            }
            let mut out = a.clone();
            for i in 0..out.rows {
                let row = &mut out.data[i * out.cols..(i + 1) * out.cols];
                for (o, &bv) in row.iter_mut().zip(&b.data) {
                    *o += bv;
                }
            }
            out
        };
        Ok(self.tape.push(out, [self.idx, bias.idx], Op::AddRowBias))
    }

    pub fn hadamard(&self, rhs: Var<'t>) -> Result<Var<'t>, TensorError> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.idx].value, &nodes[rhs.idx].value);
            a.same_shape(b, "hadamard")?;
            let mut out = a.clone();
            for (o, &bv) in out.data.iter_mut().zip(&b.data) {
                *o *= bv;
            }
            out
        };
        Ok(self.tape.push(out, [self.idx, rhs.idx], Op::Hadamard))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let mut out = nodes[self.idx].value.clone();
            for o in out.data.iter_mut() {
                *o *= c;
            }
            out
        };
        self.tape.push(out, [self.idx, NO_PARENT], Op::Scale(c))
    }

    pub fn relu(&self) -> Var<'t> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let mut out = nodes[self.idx].value.clone();
            for o in out.data.iter_mut() {
                if *o < 0.0 {
                    *o = 0.0;
                }
            }
            out
        };
        self.tape.push(out, [self.idx, NO_PARENT], Op::Relu)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let mut out = nodes[self.idx].value.clone();
            for o in out.data.iter_mut() {
                *o = sigmoid_scalar(*o);
            }
            out
        };
        self.tape.push(out, [self.idx, NO_PARENT], Op::Sigmoid)
    }

    pub fn tanh(&self) -> Var<'t> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let mut out = nodes[self.idx].value.clone();
            for o in out.data.iter_mut() {
                *o = libm::tanh(*o);
            }
            out
        };
        self.tape.push(out, [self.idx, NO_PARENT], Op::Tanh)
    }

    /// Stack self (M1 x N) on top of rhs (M2 x N) giving (M1+M2) x N.
    pub fn concat_rows(&self, rhs: Var<'t>) -> Result<Var<'t>, TensorError> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.idx].value, &nodes[rhs.idx].value);
            if a.cols != b.cols {
                return Err(TensorError::ShapeMismatch { op: "concat_rows", lhs: a.shape(), rhs: b.shape() });
            }
            let mut data = Vec::with_capacity(a.data.len() + b.data.len());
            data.extend_from_slice(&a.data);
            data.extend_from_slice(&b.data);
            Matrix { rows: a.rows + b.rows, cols: a.cols, data }
        };
        Ok(self.tape.push(out, [self.idx, rhs.idx], Op::ConcatRows))
    }

    /// Extract row i as a 1xN matrix.
    pub fn select_row(&self, i: usize) -> Result<Var<'t>, TensorError> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.idx].value;
            if i >= a.rows {
                return Err(TensorError::IndexOutOfRange { index: i, len: a.rows });
            }
            Matrix::row_vector(a.row(i))
        };
        Ok(self.tape.push(out, [self.idx, NO_PARENT], Op::SelectRow(i)))
    }

    /// Softmax applied independently to every row.
    pub fn softmax_rows(&self) -> Var<'t> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.idx].value;
            let mut out = Matrix::zeros(a.rows, a.cols);
            for i in 0..a.rows {
                let (src, dst) = (a.row(i), &mut out.data[i * a.cols..(i + 1) * a.cols]);
                softmax_row_into(src, dst);
            }
            out
        };
        self.tape.push(out, [self.idx, NO_PARENT], Op::SoftmaxRows)
    }

    /// Mean squared error over all elements; returns a 1x1 node.
    pub fn mse_loss(&self, target: Var<'t>) -> Result<Var<'t>, TensorError> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (p, t) = (&nodes[self.idx].value, &nodes[target.idx].value);
            p.same_shape(t, "mse_loss")?;
            let n = p.data.len() as f64;
            let mut acc = 0.0;
            for (&pv, &tv) in p.data.iter().zip(&t.data) {
                let d = pv - tv;
                acc += d * d;
            }
            Matrix::from_vec(1, 1, vec![acc / n]).unwrap()
        };
        Ok(self.tape.push(out, [self.idx, target.idx], Op::MseLoss))
    }

    /// -log(softmax(self)[true_index]) treating self as a flat score vector
    /// (one row or one column); returns a 1x1 node.
    pub fn softmax_cross_entropy(&self, true_index: usize) -> Result<Var<'t>, TensorError> {
        let (out, probs) = {
            let nodes = self.tape.nodes.borrow();
            let s = &nodes[self.idx].value;
            if s.rows != 1 && s.cols != 1 {
                return Err(TensorError::ShapeMismatch { op: "softmax_cross_entropy", lhs: s.shape(), rhs: (1, 0) });
            }
            if true_index >= s.data.len() {
                return Err(TensorError::IndexOutOfRange { index: true_index, len: s.data.len() });
            }
            let mut probs = s.clone();
            softmax_row_into(&s.data, &mut probs.data);
            let loss = -libm::log(probs.data[true_index].max(f64::MIN_POSITIVE));
            (Matrix::from_vec(1, 1, vec![loss]).unwrap(), probs)
        };
        Ok(self.tape.push(out, [self.idx, NO_PARENT], Op::SoftmaxCrossEntropy(true_index, probs)))
    }
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

/// Per-node gradients produced by [`backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`; zeros if the var did not
    /// contribute to the loss.
    pub fn get(&self, var: Var<'_>) -> Matrix {
        match &self.grads[var.idx] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.idx];
                Matrix::zeros(r, c)
            }
        }
    }
}

/// Reverse pass from a scalar loss node. Visits nodes in reverse creation
/// order exactly once.
pub fn backward(loss: Var<'_>) -> Result<Gradients, TensorError> {
    let nodes = loss.tape.nodes.borrow();
    {
        let v = &nodes[loss.idx].value;
        if v.shape() != (1, 1) {
            return Err(TensorError::NonScalarLoss { rows: v.rows, cols: v.cols });
        }
    }
    let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
    grads[loss.idx] = Some(Matrix::from_vec(1, 1, vec![1.0]).unwrap());

    for idx in (0..=loss.idx).rev() {
        let g = match grads[idx].clone() {
            Some(g) => g,
            None => continue,
        };
        let node = &nodes[idx];
        let [p0, p1] = node.parents;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul => {
                let a = &nodes[p0].value;
                let b = &nodes[p1].value;
                let ga = grads[p0].get_or_insert_with(|| Matrix::zeros(a.rows, a.cols));
                matmul_nt_acc(ga, &g, b);
                let gb = grads[p1].get_or_insert_with(|| Matrix::zeros(b.rows, b.cols));
                matmul_tn_acc(gb, a, &g);
            }
            Op::Add => {
                accumulate(&mut grads, p0, &g);
                accumulate(&mut grads, p1, &g);
            }
            Op::AddRowBias => {
                accumulate(&mut grads, p0, &g);
                let b = &nodes[p1].value;
                let gb = grads[p1].get_or_insert_with(|| Matrix::zeros(1, b.cols));
                for i in 0..g.rows {
                    for (o, &gv) in gb.data.iter_mut().zip(g.row(i)) {
                        *o += gv;
                    }
                }
            }
            Op::Hadamard => {
                let b = nodes[p1].value.clone();
                let a = nodes[p0].value.clone();
                accumulate_scaled_by(&mut grads, p0, &g, &b);
                accumulate_scaled_by(&mut grads, p1, &g, &a);
            }
            Op::Scale(c) => {
                let mut gs = g.clone();
                for v in gs.data.iter_mut() {
                    *v *= c;
                }
                accumulate(&mut grads, p0, &gs);
            }
            Op::Relu => {
                let a = &nodes[p0].value;
                let mut gs = g.clone();
                for (gv, &av) in gs.data.iter_mut().zip(&a.data) {
                    if av <= 0.0 {
                        *gv = 0.0;
                    }
                }
                accumulate(&mut grads, p0, &gs);
            }
            Op::Sigmoid => {
                let y = &node.value;
                let mut gs = g.clone();
                for (gv, &yv) in gs.data.iter_mut().zip(&y.data) {
                    *gv *= yv * (1.0 - yv);
                }
                accumulate(&mut grads, p0, &gs);
            }
            Op::Tanh => {
                let y = &node.value;
                let mut gs = g.clone();
                for (gv, &yv) in gs.data.iter_mut().zip(&y.data) {
                    *gv *= 1.0 - yv * yv;
                }
                accumulate(&mut grads, p0, &gs);
            }
            Op::ConcatRows => {
                let a = &nodes[p0].value;
                let split = a.data.len();
                let ga = Matrix { rows: a.rows, cols: a.cols, data: g.data[..split].to_vec() };
                accumulate(&mut grads, p0, &ga);
                let b = &nodes[p1].value;
                let gb = Matrix { rows: b.rows, cols: b.cols, data: g.data[split..].to_vec() };
                accumulate(&mut grads, p1, &gb);
            }
            Op::SelectRow(i) => {
                let a = &nodes[p0].value;
                let ga = grads[p0].get_or_insert_with(|| Matrix::zeros(a.rows, a.cols));
                let row = &mut ga.data[i * a.cols..(i + 1) * a.cols];
                for (o, &gv) in row.iter_mut().zip(&g.data) {
                    *o += gv;
                }
            }
            Op::SoftmaxRows => {
                let y = &node.value;
                let mut gs = Matrix::zeros(y.rows, y.cols);
                for i in 0..y.rows {
                    let yrow = y.row(i);
                    let grow = g.row(i);
                    let dot: f64 = yrow.iter().zip(grow).map(|(&yv, &gv)| yv * gv).sum();
                    let orow = &mut gs.data[i * y.cols..(i + 1) * y.cols];
                    for ((o, &yv), &gv) in orow.iter_mut().zip(yrow).zip(grow) {
                        *o = yv * (gv - dot);
                    }
                }
                accumulate(&mut grads, p0, &gs);
            }
            Op::MseLoss => {
                let p = &nodes[p0].value;
                let t = &nodes[p1].value;
                let scale = 2.0 * g.data[0] / p.data.len() as f64;
                let mut gp = Matrix::zeros(p.rows, p.cols);
                for ((o, &pv), &tv) in gp.data.iter_mut().zip(&p.data).zip(&t.data) {
                    *o = scale * (pv - tv);
                }
                accumulate(&mut grads, p0, &gp);
                for o in gp.data.iter_mut() {
                    *o = -*o;
                }
                accumulate(&mut grads, p1, &gp);
            }
            Op::SoftmaxCrossEntropy(true_index, probs) => {
                let mut gs = probs.clone();
                gs.data[*true_index] -= 1.0;
                for v in gs.data.iter_mut() {
                    *v *= g.data[0];
                }
                accumulate(&mut grads, p0, &gs);
            }
        }
    }

    let shapes = nodes.iter().map(|n| n.value.shape()).collect();
    Ok(Gradients { grads, shapes })
}

fn accumulate(grads: &mut [Option<Matrix>], idx: usize, g: &Matrix) {
    match &mut grads[idx] {
        Some(acc) => {
            for (o, &gv) in acc.data.iter_mut().zip(&g.data) {
                *o += gv;
            }
        }
        slot => {
            *slot = Some(g.clone());
        }
    }
}

fn accumulate_scaled_by(grads: &mut [Option<Matrix>], idx: usize, g: &Matrix, factor: &Matrix) {
    let acc = grads[idx].get_or_insert_with(|| Matrix::zeros(g.rows, g.cols));
    for ((o, &gv), &fv) in acc.data.iter_mut().zip(&g.data).zip(&factor.data) {
        *o += gv * fv;
    }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Compare tape gradients against central finite differences.
///
/// `build` constructs the scalar loss from leaves registered in the same
/// order as `params`. Returns the maximum relative error over every
/// coordinate, with denominator max(|analytic|, |numeric|, 1e-8).
pub fn grad_check<F>(build: F, params: &[Matrix], eps: f64) -> Result<f64, TensorError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, TensorError>,
{
    let eval = |ps: &[Matrix]| -> Result<f64, TensorError> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = ps.iter().map(|m| tape.leaf(m.clone())).collect();
        let loss = build(&tape, &vars)?;
        loss.scalar()
    };

    // Analytic gradients.
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|m| tape.leaf(m.clone())).collect();
    let loss = build(&tape, &vars)?;
    let grads = backward(loss)?;
    let analytic: Vec<Matrix> = vars.iter().map(|v| grads.get(*v)).collect();

    let mut work: Vec<Matrix> = params.to_vec();
    let mut max_rel = 0.0f64;
    for (pi, grad) in analytic.iter().enumerate() {
        for ci in 0..grad.data.len() {
            let orig = work[pi].data[ci];
            work[pi].data[ci] = orig + eps;
            let fp = eval(&work)?;
            work[pi].data[ci] = orig - eps;
            let fm = eval(&work)?;
            work[pi].data[ci] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = grad.data[ci];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
