//! Reverse-mode automatic differentiation on a scalar tape.
//!
//! Every recorded node stores its value and a list of `(parent, local partial)`
//! edges. Nodes are appended in evaluation order, so the reverse of insertion
//! order is a valid reverse topological order and the backward sweep is a
//! single pass over the node array.
//!
//! Numerical code is written once, generically over [`Real`], and instantiated
//! with `f64` (plain evaluation) or [`Var`] (recorded on a [`Tape`]). Targets
//! expose their gradients as `Real` expressions too, so gradients of
//! leapfrog-integrated objectives, which contain target gradients, are
//! themselves differentiable.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("domain error in `{op}` at node {node}: operand {operand}")]
    Domain {
        op: &'static str,
        node: usize,
        operand: f64,
    },
    #[error("backward already ran on this tape; reset and re-run the forward pass")]
    AlreadyConsumed,
    #[error("output value is not finite: {0}")]
    NonFiniteOutput(f64),
    #[error("objective evaluation is not finite at coordinate {coord}: {value}")]
    NonFiniteEvaluation { coord: usize, value: f64 },
    #[error("finite-difference step {0} outside [1e-8, 1e-4]")]
    BadStep(f64),
}

/// Scalar type usable by generic numerical code.
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant living in the same context as `self`.
    fn constant_like(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn square(self) -> Self;
    fn sigmoid(self) -> Self;
    fn softplus(self) -> Self;
    /// Panics on an empty slice for tape variables (no tape to record on).
    fn sum(xs: &[Self]) -> Self;
    fn dot(a: &[Self], b: &[Self]) -> Self;
    /// `bias + Σ coeffs[i]·xs[i]` with constant coefficients.
    fn lin_comb(coeffs: &[f64], xs: &[Self], bias: f64) -> Self;
    fn log_sum_exp(xs: &[Self]) -> Self;
    /// `M·xs` for a constant matrix. On a tape this is a single block whose
    /// reverse sweep is a dense transposed product.
    fn mat_vec(m: &Arc<ConstMatrix>, xs: &[Self]) -> Vec<Self>;
}

/// Dense row-major matrix of constants shared between tape passes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ConstMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Self { rows, cols, data }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.data[j * self.cols + i])
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "mat_vec dimension mismatch");
        (0..self.rows).map(|i| dot_unrolled(self.row(i), x)).collect()
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot_unrolled(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus_f64(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of softplus, for initializing constrained parameters.
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inv of non-positive value");
    if y > 30.0 {
        y
    } else {
        y + (-(-y).exp_m1()).ln()
    }
}

pub fn log_sum_exp_f64(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m.is_infinite() || m.is_nan() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Real for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn constant_like(self, c: f64) -> Self {
        c
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn square(self) -> Self {
        self * self
    }
    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    #[inline]
    fn softplus(self) -> Self {
        softplus_f64(self)
    }
    fn sum(xs: &[Self]) -> Self {
        xs.iter().sum()
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
    fn lin_comb(coeffs: &[f64], xs: &[Self], bias: f64) -> Self {
        debug_assert_eq!(coeffs.len(), xs.len());
        bias + coeffs.iter().zip(xs).map(|(c, x)| c * x).sum::<f64>()
    }
    fn log_sum_exp(xs: &[Self]) -> Self {
        log_sum_exp_f64(xs)
    }
    fn mat_vec(m: &Arc<ConstMatrix>, xs: &[Self]) -> Vec<Self> {
        m.apply(xs)
    }
}

/// Outputs `out_start..out_start + matrix.rows` are `matrix · inputs`.
struct Block {
    out_start: u32,
    inputs: Vec<u32>,
    matrix: Arc<ConstMatrix>,
}

#[derive(Default)]
struct TapeInner {
    values: Vec<f64>,
    /// `edge_end[i]` is one past the last edge of node `i`.
    edge_end: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    blocks: Vec<Block>,
    error: Option<AdError>,
    consumed: bool,
}

impl TapeInner {
    #[inline]
    fn push(&mut self, value: f64) -> u32 {
        let idx = self.values.len();
        self.values.push(value);
        self.edge_end.push(self.parents.len() as u32);
        idx as u32
    }

    #[inline]
    fn edge(&mut self, parent: u32, partial: f64) {
        self.parents.push(parent);
        self.partials.push(partial);
        *self.edge_end.last_mut().expect("edge without node") += 1;
    }

    fn flag(&mut self, op: &'static str, operand: f64) {
        if self.error.is_none() {
            self.error = Some(AdError::Domain {
                op,
                node: self.values.len(),
                operand,
            });
        }
    }
}

/// Recording context for [`Var`]s. Single-threaded; use one tape per thread.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.values.len())
            .field("edges", &inner.parents.len())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clears all nodes while keeping the allocations. Requires that no
    /// variable of the previous pass is still alive.
    pub fn reset(&mut self) {
        let inner = self.inner.get_mut();
        inner.values.clear();
        inner.edge_end.clear();
        inner.parents.clear();
        inner.partials.clear();
        inner.blocks.clear();
        inner.error = None;
        inner.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn edge_count(&self) -> usize {
        self.inner.borrow().parents.len()
    }

    /// Records an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.inner.borrow_mut().push(value);
        Var {
            tape: self,
            idx,
            val: value,
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// First domain error recorded during the forward pass, if any.
    pub fn error(&self) -> Option<AdError> {
        self.inner.borrow().error.clone()
    }

    /// Reverse sweep from `output`. Fails if the forward pass hit a domain
    /// error or if backward already ran since the last reset.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients, AdError> {
        debug_assert!(std::ptr::eq(self, output.tape));
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(AdError::AlreadyConsumed);
        }
        inner.consumed = true;
        if let Some(err) = inner.error.clone() {
            return Err(err);
        }
        if !output.val.is_finite() {
            return Err(AdError::NonFiniteOutput(output.val));
        }
        let out = output.idx as usize;
        let mut adjoint = vec![0.0; inner.values.len()];
        adjoint[out] = 1.0;
        let mut bi = inner.blocks.partition_point(|b| b.out_start as usize <= out);
        let mut scratch = Vec::new();
        for node in (0..=out).rev() {
            if bi > 0 && inner.blocks[bi - 1].out_start as usize == node {
                bi -= 1;
                let b = &inner.blocks[bi];
                let m = &b.matrix;
                scratch.clear();
                scratch.resize(m.cols, 0.0);
                for r in 0..m.rows {
                    let a = adjoint[node + r];
                    if a != 0.0 {
                        for (acc, &c) in scratch.iter_mut().zip(m.row(r)) {
                            *acc += a * c;
                        }
                    }
                }
                for (&p, &g) in b.inputs.iter().zip(&scratch) {
                    adjoint[p as usize] += g;
                }
            }
            let a = adjoint[node];
            if a == 0.0 {
                continue;
            }
            let start = if node == 0 {
                0
            } else {
                inner.edge_end[node - 1] as usize
            };
            let end = inner.edge_end[node] as usize;
            for e in start..end {
                adjoint[inner.parents[e] as usize] += a * inner.partials[e];
            }
        }
        Ok(Gradients { adjoint })
    }
}

/// Adjoints of every node up to the output of a backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoint: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adjoint.get(v.idx as usize).copied().unwrap_or(0.0)
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|v| self.wrt(*v)).collect()
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.idx, self.val)
    }
}

impl<'t> Var<'t> {
    #[inline]
    fn unary(self, value: f64, partial: f64) -> Self {
        let mut inner = self.tape.inner.borrow_mut();
        let idx = inner.push(value);
        inner.edge(self.idx, partial);
        Var {
            tape: self.tape,
            idx,
            val: value,
        }
    }

    #[inline]
    fn binary(self, other: Self, value: f64, da: f64, db: f64) -> Self {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "mixing tapes");
        let mut inner = self.tape.inner.borrow_mut();
        let idx = inner.push(value);
        inner.edge(self.idx, da);
        inner.edge(other.idx, db);
        Var {
            tape: self.tape,
            idx,
            val: value,
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        if rhs.val == 0.0 {
            self.tape.inner.borrow_mut().flag("div", rhs.val);
        }
        let inv = 1.0 / rhs.val;
        let value = self.val * inv;
        self.binary(rhs, value, inv, -value * inv)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: f64) -> Self {
        self.unary(self.val + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.val - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.val * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        if rhs == 0.0 {
            self.tape.inner.borrow_mut().flag("div", rhs);
        }
        self.unary(self.val / rhs, 1.0 / rhs)
    }
}

impl<'t> Real for Var<'t> {
    #[inline]
    fn value(self) -> f64 {
        self.val
    }

    fn constant_like(self, c: f64) -> Self {
        let idx = self.tape.inner.borrow_mut().push(c);
        Var {
            tape: self.tape,
            idx,
            val: c,
        }
    }

    #[inline]
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }

    #[inline]
    fn ln(self) -> Self {
        if self.val <= 0.0 {
            self.tape.inner.borrow_mut().flag("log", self.val);
        }
        self.unary(self.val.ln(), 1.0 / self.val)
    }

    #[inline]
    fn sqrt(self) -> Self {
        if self.val < 0.0 {
            self.tape.inner.borrow_mut().flag("sqrt", self.val);
        }
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }

    #[inline]
    fn square(self) -> Self {
        self.unary(self.val * self.val, 2.0 * self.val)
    }

    #[inline]
    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.val);
        self.unary(s, s * (1.0 - s))
    }

    #[inline]
    fn softplus(self) -> Self {
        self.unary(softplus_f64(self.val), sigmoid_f64(self.val))
    }

    fn sum(xs: &[Self]) -> Self {
        let tape = xs.first().expect("sum of an empty slice of tape variables").tape;
        let value: f64 = xs.iter().map(|x| x.val).sum();
        let mut inner = tape.inner.borrow_mut();
        let idx = inner.push(value);
        for x in xs {
            inner.edge(x.idx, 1.0);
        }
        Var {
            tape,
            idx,
            val: value,
        }
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        assert_eq!(a.len(), b.len(), "dot of unequal lengths");
        let tape = a.first().expect("dot of empty slices").tape;
        let value: f64 = a.iter().zip(b).map(|(x, y)| x.val * y.val).sum();
        let mut inner = tape.inner.borrow_mut();
        let idx = inner.push(value);
        for (x, y) in a.iter().zip(b) {
            inner.edge(x.idx, y.val);
            inner.edge(y.idx, x.val);
        }
        Var {
            tape,
            idx,
            val: value,
        }
    }

    fn lin_comb(coeffs: &[f64], xs: &[Self], bias: f64) -> Self {
        assert_eq!(coeffs.len(), xs.len(), "lin_comb of unequal lengths");
        let tape = xs.first().expect("lin_comb of an empty slice").tape;
        let value = bias
            + coeffs
                .iter()
                .zip(xs)
                .map(|(c, x)| c * x.val)
                .sum::<f64>();
        let mut inner = tape.inner.borrow_mut();
        let idx = inner.push(value);
        for (&c, x) in coeffs.iter().zip(xs) {
            if c != 0.0 {
                inner.edge(x.idx, c);
            }
        }
        Var {
            tape,
            idx,
            val: value,
        }
    }

    fn log_sum_exp(xs: &[Self]) -> Self {
        let tape = xs.first().expect("log_sum_exp of an empty slice").tape;
        let m = xs.iter().map(|x| x.val).fold(f64::NEG_INFINITY, f64::max);
        let mut inner = tape.inner.borrow_mut();
        if !m.is_finite() {
            let idx = inner.push(m);
            return Var { tape, idx, val: m };
        }
        let total: f64 = xs.iter().map(|x| (x.val - m).exp()).sum();
        let value = m + total.ln();
        let idx = inner.push(value);
        for x in xs {
            inner.edge(x.idx, (x.val - value).exp());
        }
        Var {
            tape,
            idx,
            val: value,
        }
    }
    fn mat_vec(m: &Arc<ConstMatrix>, xs: &[Self]) -> Vec<Self> {
        assert_eq!(xs.len(), m.cols, "mat_vec dimension mismatch");
        let tape = xs.first().expect("mat_vec of an empty slice").tape;
        let vals: Vec<f64> = xs.iter().map(|x| x.val).collect();
        let out = m.apply(&vals);
        let mut inner = tape.inner.borrow_mut();
        let out_start = inner.values.len() as u32;
        let res = out
            .into_iter()
            .map(|v| Var {
                tape,
                idx: inner.push(v),
                val: v,
            })
            .collect();
        if m.rows > 0 {
            inner.blocks.push(Block {
                out_start,
                inputs: xs.iter().map(|x| x.idx).collect(),
                matrix: Arc::clone(m),
            });
        }
        res
    }
}

/// A named block of parameters with a gradient buffer of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub name: String,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
}

impl ParamVector {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        let grads = vec![0.0; values.len()];
        Self {
            name: name.into(),
            values,
            grads,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Records the values as leaves on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        tape.vars(&self.values)
    }

    /// Adds the adjoints of `leaves` into `grads`.
    pub fn accumulate(&mut self, grads: &Gradients, leaves: &[Var<'_>]) {
        assert_eq!(leaves.len(), self.grads.len());
        for (g, v) in self.grads.iter_mut().zip(leaves) {
            *g += grads.wrt(*v);
        }
    }
}

/// A scalar function of a parameter vector, evaluable in any [`Real`].
///
/// Implementors must be deterministic: stochastic objectives re-seed their
/// random stream on every call so that the noise is fixed.
pub trait ScalarObjective {
    fn eval<R: Real>(&self, params: &[R]) -> R;
}

/// Fills `params.grads` with the reverse-mode gradient of `f` and returns
/// the objective value.
pub fn gradient<F: ScalarObjective + ?Sized>(
    f: &F,
    params: &mut ParamVector,
) -> Result<f64, AdError> {
    let tape = Tape::new();
    let leaves = params.bind(&tape);
    let out = f.eval(&leaves);
    let grads = tape.backward(out)?;
    params.zero_grads();
    params.accumulate(&grads, &leaves);
    Ok(out.value())
}

/// Largest relative discrepancy between the reverse-mode gradient and a
/// central finite difference with step `h`, over all coordinates.
pub fn finite_diff_check<F: ScalarObjective + ?Sized>(
    f: &F,
    params: &mut ParamVector,
    h: f64,
) -> Result<f64, AdError> {
    if !(1e-8..=1e-4).contains(&h) {
        return Err(AdError::BadStep(h));
    }
    gradient(f, params)?;
    let mut worst: f64 = 0.0;
    let mut probe = params.values.clone();
    for i in 0..probe.len() {
        let x = probe[i];
        probe[i] = x + h;
        let up = f.eval(&probe);
        probe[i] = x - h;
        let down = f.eval(&probe);
        probe[i] = x;
        for value in [up, down] {
            if !value.is_finite() {
                return Err(AdError::NonFiniteEvaluation { coord: i, value });
            }
        }
        let fd = (up - down) / (2.0 * h);
        let rel = (params.grads[i] - fd).abs() / (fd.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
