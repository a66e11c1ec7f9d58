//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive applied during the forward pass. Each
//! entry keeps its forward value and the operands it was computed from, so the
//! entries are already in topological order and [`Tape::backward`] is a single
//! reverse sweep. Scalars are `1 × 1` matrices.
//!
//! ```
//! use mi_lab::autodiff::Tape;
//! use mi_lab::Matrix;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Matrix::column(vec![0.0, 3f64.ln()]));
//! let y = tape.logsumexp(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! let g = grads.wrt(&tape, x);
//! assert!((g.as_slice()[0] - 0.25).abs() < 1e-12);
//! assert!((g.as_slice()[1] - 0.75).abs() < 1e-12);
//! ```

mod gradcheck;

pub use gradcheck::{grad_check, GradCheck};

use crate::matrix::{gemm, Matrix};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("logarithm of non-positive value {value}")]
    NonPositiveLog { value: f64 },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar((usize, usize)),
    #[error("{op} of an empty matrix")]
    Empty { op: &'static str },
    #[error("non-finite function value {value} at probe point")]
    NonFinite { value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to an entry on a [`Tape`].
///
/// Handles are only meaningful for the tape that produced them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Adds a `1 × cols` row to every row.
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Clip(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    LogSumExp(Var),
    LogSumExpRows(Var),
    LogMeanExp(Var),
    LogMeanExpRows(Var),
    Diag(Var),
    OffDiag(Var),
    /// Row `i * m + j` is `a[i] + b[j]`.
    PairSum(Var, Var),
    Reshape(Var),
    SliceRows(Var, usize),
    /// `out[i][j] = a[rows[i]][cols[j]]`.
    Gather(Var, Vec<usize>, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Entry {
    value: Matrix,
    op: Op,
}

/// An append-only record of a forward computation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    entries: Vec<Entry>,
}

/// Gradients of a scalar with respect to every entry it depends on.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// The gradient for `v`, or zeros shaped like its value.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(v).shape();
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(AutodiffError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        })
    }
}

fn non_empty(op: &'static str, a: &Matrix) -> Result<()> {
    if a.is_empty() {
        Err(AutodiffError::Empty { op })
    } else {
        Ok(())
    }
}

/// `max(x) + ln Σ exp(x - max(x))`, with the infinite and empty cases handled.
pub fn logsumexp_slice(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if xs.iter().any(|v| v.is_nan()) {
        return f64::NAN;
    }
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// `ln((1/n) Σ exp(x))`. Equal entries return that entry exactly.
pub fn logmeanexp_slice(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if xs.iter().any(|v| v.is_nan()) {
        return f64::NAN;
    }
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&v| (v - m).exp()).sum();
    m + (s / xs.len() as f64).ln()
}

/// `max(x, 0) + ln(1 + e^{-|x|})`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn clip(v: f64, lower: f64, upper: f64) -> f64 {
    v.min(upper).max(lower)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.entries[v.0].value
    }

    /// The value of a `1 × 1` entry.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.as_slice()[0]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.entries.push(Entry { value, op });
        Var(self.entries.len() - 1)
    }

    /// Records an input (parameter or data) with no operands.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.leaf(Matrix::scalar(value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let mut out = Matrix::zeros(av.rows(), bv.cols());
        gemm(av, false, bv, false, &mut out, 0.0);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`, the pairwise dot products of the rows of `a` and `b`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul_nt",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let mut out = Matrix::zeros(av.rows(), bv.rows());
        gemm(av, false, bv, true, &mut out, 0.0);
        Ok(self.push(out, Op::MatMulNt(a, b)))
    }

    fn zip(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(op_name, av, bv)?;
        let data = av
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Matrix::from_vec(av.rows(), av.cols(), data).expect("shape preserved");
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the `1 × cols` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                left: av.shape(),
                right: rv.shape(),
            });
        }
        let mut out = av.clone();
        let bias = rv.as_slice();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bias) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Natural log; every entry must be positive.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).as_slice().iter().find(|v| !(**v > 0.0)) {
            return Err(AutodiffError::NonPositiveLog { value: bad });
        }
        Ok(self.unary(a, f64::ln, Op::Ln(a)))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// `max(min(v, upper), lower)` elementwise.
    pub fn clip(&mut self, a: Var, lower: f64, upper: f64) -> Result<Var> {
        if !(lower <= upper) {
            return Err(AutodiffError::InvalidArgument(format!(
                "clip bounds {lower} > {upper}"
            )));
        }
        Ok(self.unary(a, |x| clip(x, lower, upper), Op::Clip(a, lower, upper)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).as_slice().iter().sum();
        self.push(Matrix::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        non_empty("mean", v)?;
        let s = v.as_slice().iter().sum::<f64>() / v.len() as f64;
        Ok(self.push(Matrix::scalar(s), Op::Mean(a)))
    }

    /// `ln Σ e^{x}` over all entries, computed by max-shifting.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        non_empty("logsumexp", v)?;
        let s = logsumexp_slice(v.as_slice());
        Ok(self.push(Matrix::scalar(s), Op::LogSumExp(a)))
    }

    /// Row-wise logsumexp, `rows × 1`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        non_empty("logsumexp_rows", v)?;
        let out = Matrix::column((0..v.rows()).map(|r| logsumexp_slice(v.row(r))).collect());
        Ok(self.push(out, Op::LogSumExpRows(a)))
    }

    /// `ln mean e^{x}` over all entries, computed by max-shifting.
    pub fn logmeanexp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        non_empty("logmeanexp", v)?;
        let s = logmeanexp_slice(v.as_slice());
        Ok(self.push(Matrix::scalar(s), Op::LogMeanExp(a)))
    }

    /// Row-wise `ln mean e^{x}`, `rows × 1`.
    pub fn logmeanexp_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        non_empty("logmeanexp_rows", v)?;
        let out = Matrix::column((0..v.rows()).map(|r| logmeanexp_slice(v.row(r))).collect());
        Ok(self.push(out, Op::LogMeanExpRows(a)))
    }

    fn require_square(&self, op: &'static str, a: Var) -> Result<usize> {
        let v = self.value(a);
        if v.rows() != v.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op,
                left: v.shape(),
                right: (v.cols(), v.rows()),
            });
        }
        Ok(v.rows())
    }

    /// Main diagonal of a square matrix as an `n × 1` column.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        self.require_square("diag", a)?;
        let out = Matrix::column(self.value(a).diagonal());
        Ok(self.push(out, Op::Diag(a)))
    }

    /// Off-diagonal entries of a square matrix, row by row, as an
    /// `n(n-1) × 1` column.
    pub fn off_diag(&mut self, a: Var) -> Result<Var> {
        self.require_square("off_diag", a)?;
        let out = Matrix::column(self.value(a).off_diagonal());
        Ok(self.push(out, Op::OffDiag(a)))
    }

    /// All pairwise row sums: for `a` (`n × h`) and `b` (`m × h`), row
    /// `i * m + j` of the `(n·m) × h` result is `a[i] + b[j]`.
    pub fn pair_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "pair_sum",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let (n, m, h) = (av.rows(), bv.rows(), av.cols());
        let mut data = Vec::with_capacity(n * m * h);
        for i in 0..n {
            let ai = av.row(i);
            for j in 0..m {
                data.extend(ai.iter().zip(bv.row(j)).map(|(x, y)| x + y));
            }
        }
        let out = Matrix::from_vec(n * m, h, data).expect("pair_sum shape");
        Ok(self.push(out, Op::PairSum(a, b)))
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(a);
        if v.len() != rows * cols {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                left: v.shape(),
                right: (rows, cols),
            });
        }
        let out = Matrix::from_vec(rows, cols, v.as_slice().to_vec()).expect("checked");
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Entry `(i, j)` is `a[rows[i]][cols[j]]`.
    pub fn gather(&mut self, a: Var, rows: Vec<usize>, cols: Vec<usize>) -> Result<Var> {
        let v = self.value(a);
        let (r, c) = v.shape();
        if rows.iter().any(|&i| i >= r) || cols.iter().any(|&j| j >= c) {
            return Err(AutodiffError::ShapeMismatch {
                op: "gather",
                left: v.shape(),
                right: (rows.len(), cols.len()),
            });
        }
        let out = Matrix::from_fn(rows.len(), cols.len(), |i, j| v.get(rows[i], cols[j]));
        Ok(self.push(out, Op::Gather(a, rows, cols)))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        if start > end || end > v.rows() {
            return Err(AutodiffError::InvalidArgument(format!(
                "row range {start}..{end} out of bounds for {} rows",
                v.rows()
            )));
        }
        let cols = v.cols();
        let data = v.as_slice()[start * cols..end * cols].to_vec();
        let out = Matrix::from_vec(end - start, cols, data).expect("checked");
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let entry = &self.entries[idx];
            self.propagate(entry, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads.resize(self.entries.len(), None);
        Ok(Gradients { grads })
    }

    fn propagate(&self, entry: &Entry, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.entries[v.0].value;
        match entry.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                gemm(g, false, bv, true, &mut ga, 0.0);
                accumulate(grads, a, ga);
                let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                gemm(av, true, g, false, &mut gb, 0.0);
                accumulate(grads, b, gb);
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (val(a), val(b));
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                gemm(g, false, bv, false, &mut ga, 0.0);
                accumulate(grads, a, ga);
                let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                gemm(g, true, av, false, &mut gb, 0.0);
                accumulate(grads, b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, a, g.clone());
                accumulate(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, a, g.clone());
                accumulate(grads, b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(grads, a, zip_map(g, val(b), |g, y| g * y));
                accumulate(grads, b, zip_map(g, val(a), |g, x| g * x));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, a, g.clone());
                let mut gr = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (acc, x) in gr.as_mut_slice().iter_mut().zip(g.row(r)) {
                        *acc += x;
                    }
                }
                accumulate(grads, row, gr);
            }
            Op::Scale(a, s) => accumulate(grads, a, g.map(|x| x * s)),
            Op::AddScalar(a) => accumulate(grads, a, g.clone()),
            Op::Relu(a) => accumulate(
                grads,
                a,
                zip_map(g, val(a), |g, x| if x > 0.0 { g } else { 0.0 }),
            ),
            Op::Softplus(a) => accumulate(grads, a, zip_map(g, val(a), |g, x| g * sigmoid(x))),
            Op::Exp(a) => accumulate(grads, a, zip_map(g, &entry.value, |g, y| g * y)),
            Op::Ln(a) => accumulate(grads, a, zip_map(g, val(a), |g, x| g / x)),
            Op::Square(a) => accumulate(grads, a, zip_map(g, val(a), |g, x| 2.0 * g * x)),
            Op::Clip(a, lo, hi) => accumulate(
                grads,
                a,
                zip_map(
                    g,
                    val(a),
                    |g, x| if (lo..=hi).contains(&x) { g } else { 0.0 },
                ),
            ),
            Op::Sum(a) => {
                let (r, c) = val(a).shape();
                accumulate(grads, a, Matrix::filled(r, c, g.as_slice()[0]));
            }
            Op::Mean(a) => {
                let (r, c) = val(a).shape();
                let s = g.as_slice()[0] / (r * c) as f64;
                accumulate(grads, a, Matrix::filled(r, c, s));
            }
            Op::LogSumExp(a) => {
                let lse = entry.value.as_slice()[0];
                let s = g.as_slice()[0];
                accumulate(grads, a, val(a).map(|x| s * (x - lse).exp()));
            }
            Op::LogMeanExp(a) => {
                let av = val(a);
                let lse = entry.value.as_slice()[0] + (av.len() as f64).ln();
                let s = g.as_slice()[0];
                accumulate(grads, a, av.map(|x| s * (x - lse).exp()));
            }
            Op::LogMeanExpRows(a) => {
                let av = val(a);
                let ln_n = (av.cols() as f64).ln();
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let lse = entry.value.as_slice()[r] + ln_n;
                    let s = g.as_slice()[r];
                    for (o, &x) in ga.row_mut(r).iter_mut().zip(av.row(r)) {
                        *o = s * (x - lse).exp();
                    }
                }
                accumulate(grads, a, ga);
            }
            Op::LogSumExpRows(a) => {
                let av = val(a);
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let lse = entry.value.as_slice()[r];
                    let s = g.as_slice()[r];
                    for (o, &x) in ga.row_mut(r).iter_mut().zip(av.row(r)) {
                        *o = s * (x - lse).exp();
                    }
                }
                accumulate(grads, a, ga);
            }
            Op::Diag(a) => {
                let n = val(a).rows();
                let mut ga = Matrix::zeros(n, n);
                for i in 0..n {
                    ga.set(i, i, g.as_slice()[i]);
                }
                accumulate(grads, a, ga);
            }
            Op::OffDiag(a) => {
                let n = val(a).rows();
                let mut ga = Matrix::zeros(n, n);
                let mut k = 0;
                for r in 0..n {
                    for c in 0..n {
                        if r != c {
                            ga.set(r, c, g.as_slice()[k]);
                            k += 1;
                        }
                    }
                }
                accumulate(grads, a, ga);
            }
            Op::PairSum(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (n, m, h) = (av.rows(), bv.rows(), av.cols());
                let mut ga = Matrix::zeros(n, h);
                let mut gb = Matrix::zeros(m, h);
                for i in 0..n {
                    for j in 0..m {
                        let gr = g.row(i * m + j);
                        for (acc, x) in ga.row_mut(i).iter_mut().zip(gr) {
                            *acc += x;
                        }
                        for (acc, x) in gb.row_mut(j).iter_mut().zip(gr) {
                            *acc += x;
                        }
                    }
                }
                accumulate(grads, a, ga);
                accumulate(grads, b, gb);
            }
            Op::Gather(a, ref rows, ref cols) => {
                let (r, c) = val(a).shape();
                let mut ga = Matrix::zeros(r, c);
                for (i, &ri) in rows.iter().enumerate() {
                    for (j, &cj) in cols.iter().enumerate() {
                        ga.set(ri, cj, ga.get(ri, cj) + g.get(i, j));
                    }
                }
                accumulate(grads, a, ga);
            }
            Op::Reshape(a) => {
                let (r, c) = val(a).shape();
                let ga = Matrix::from_vec(r, c, g.as_slice().to_vec()).expect("reshape grad");
                accumulate(grads, a, ga);
            }
            Op::SliceRows(a, start) => {
                let (r, c) = val(a).shape();
                let mut ga = Matrix::zeros(r, c);
                ga.as_mut_slice()[start * c..start * c + g.len()].copy_from_slice(g.as_slice());
                accumulate(grads, a, ga);
            }
        }
    }
}

fn zip_map(g: &Matrix, x: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = g
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(&a, &b)| f(a, b))
        .collect();
    Matrix::from_vec(g.rows(), g.cols(), data).expect("same shape")
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
