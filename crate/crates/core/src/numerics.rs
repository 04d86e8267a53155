//! Dense vector/matrix kernel, parameter storage and the finite-difference
//! gradient oracle that every backward pass in the crate is checked against.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Vectors are plain `Vec<f64>`; matrices carry their dims.
pub type Vector = Vec<f64>;

/// Default half-width of the uniform initializer.
pub const DEFAULT_INIT_SCALE: f64 = 0.08;
/// Default central-difference step.
pub const DEFAULT_FD_EPS: f64 = 1e-4;
/// Floor of the relative-error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}, {:?})", self.rows, self.cols, self.data)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} values for {rows}x{cols}", rows * cols),
                format!("{} values", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape("Matrix::from_rows", cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vector {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `W x`, unchecked beyond a debug assertion.
    pub fn matvec(&self, x: &[f64]) -> Vector {
        let mut out = vec![0.0; self.rows];
        self.matvec_acc(x, &mut out);
        out
    }

    /// `out += W x`
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols.max(1))) {
            *o += dot(row, x);
        }
    }

    /// `out += Wᵀ y`
    pub fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&yr, row) in y.iter().zip(self.data.chunks_exact(self.cols.max(1))) {
            if yr != 0.0 {
                axpy(yr, row, out);
            }
        }
    }

    /// `self += a bᵀ`
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        let cols = self.cols.max(1);
        for (&ar, row) in a.iter().zip(self.data.chunks_exact_mut(cols)) {
            if ar != 0.0 {
                axpy(ar, b, row);
            }
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        add_into(&other.data, &mut self.data);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn add_into(src: &[f64], dst: &mut [f64]) {
    debug_assert_eq!(src.len(), dst.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn norm_inf_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check_finite(op: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{op}: non-finite input")))
    }
}

/// `W x + b` with full shape checking.
pub fn affine(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vector> {
    if w.cols() != x.len() || w.rows() != b.len() {
        return Err(Error::shape(
            "affine",
            format!("W {}x{}, x {}, b {}", w.rows(), w.cols(), w.cols(), w.rows()),
            format!("W {}x{}, x {}, b {}", w.rows(), w.cols(), x.len(), b.len()),
        ));
    }
    let mut out = b.to_vec();
    w.matvec_acc(x, &mut out);
    Ok(out)
}

/// Backward of `y = W x + b`: accumulates into `dw`, `db` and returns `dx`.
pub fn affine_backward(w: &Matrix, x: &[f64], dy: &[f64], dw: &mut Matrix, db: &mut [f64]) -> Vector {
    dw.add_outer(dy, x);
    add_into(dy, db);
    let mut dx = vec![0.0; w.cols()];
    w.matvec_t_acc(dy, &mut dx);
    dx
}

/// Max-subtracted softmax.
pub fn softmax(v: &[f64]) -> Result<Vector> {
    if v.is_empty() {
        return Err(Error::shape("softmax", "nonempty vector", "empty vector"));
    }
    check_finite("softmax", v)?;
    Ok(softmax_unchecked(v))
}

pub(crate) fn softmax_unchecked(v: &[f64]) -> Vector {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vector = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

/// Backward of softmax given its output `p` and upstream `dp`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vector {
    let inner = dot(p, dp);
    p.iter().zip(dp).map(|(pi, gi)| pi * (gi - inner)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn apply(self, v: &[f64]) -> Result<Vector> {
        check_finite("activation", v)?;
        Ok(v.iter().map(|&x| self.eval(x)).collect())
    }

    pub fn derivative(self, v: &[f64]) -> Result<Vector> {
        check_finite("activation", v)?;
        Ok(v
            .iter()
            .map(|&x| self.derivative_from_output(self.eval(x)))
            .collect())
    }
}

/// Seeded random stream; identical seeds give identical streams.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this rng's seed and `stream`, without
    /// advancing `self`.
    pub fn derive(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Rng {
            seed: self.seed,
            inner,
        }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        Normal::new(mean, std)
            .expect("standard deviation must be finite and non-negative")
            .sample(&mut self.inner)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

/// Uniform(−scale, scale) initialization.
pub fn param_init(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Result<Matrix> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!(
            "initialization scale must be positive, got {scale}"
        )));
    }
    let data = (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensor. Vectors are stored as single-column matrices and
/// keep rank 1 in `dims`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: Matrix,
    pub grad: Matrix,
}

impl ParamTensor {
    pub fn len(&self) -> usize {
        self.value.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The complete trainable parameter bundle: uniquely named tensors with
/// accumulated gradients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: Vec<ParamTensor>,
    by_name: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: String, dims: Vec<usize>, value: Matrix) -> Result<ParamId> {
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.tensors.len());
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.by_name.insert(name.clone(), id);
        self.tensors.push(ParamTensor {
            name,
            dims,
            value,
            grad,
        });
        Ok(id)
    }

    pub fn add_matrix(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let dims = vec![value.rows(), value.cols()];
        self.insert(name.into(), dims, value)
    }

    pub fn add_vector(&mut self, name: impl Into<String>, value: Vector) -> Result<ParamId> {
        let dims = vec![value.len()];
        let n = value.len();
        self.insert(name.into(), dims, Matrix::from_vec(n, 1, value)?)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensor(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tensors[id.0].value
    }

    /// A rank-1 tensor's values.
    pub fn vector(&self, id: ParamId) -> &[f64] {
        self.tensors[id.0].value.data()
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad.fill(0.0);
        }
    }

    /// Fresh zero gradient buffer aligned with this set.
    pub fn zero_grad_buffer(&self) -> Grads {
        Grads {
            mats: self
                .tensors
                .iter()
                .map(|t| Matrix::zeros(t.value.rows(), t.value.cols()))
                .collect(),
        }
    }

    /// Adds `grads` into each tensor's accumulated gradient.
    pub fn accumulate(&mut self, grads: &Grads) {
        for (t, g) in self.tensors.iter_mut().zip(&grads.mats) {
            t.grad.add_assign(g);
        }
    }

    pub fn grads(&self) -> Grads {
        Grads {
            mats: self.tensors.iter().map(|t| t.grad.clone()).collect(),
        }
    }
}

/// Gradient buffer indexed by [`ParamId`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    mats: Vec<Matrix>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.mats[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.mats[id.0]
    }

    /// Rank-1 gradient as a mutable slice.
    pub fn vector_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.mats[id.0].data_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.mats.iter().enumerate().map(|(i, m)| (ParamId(i), m))
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.mats.iter_mut().zip(&other.mats) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.mats.iter_mut().for_each(|m| m.scale(s));
    }

    pub fn global_norm(&self) -> f64 {
        self.mats.iter().map(Matrix::sum_squares).sum::<f64>().sqrt()
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

fn eval_finite(value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numeric(format!(
            "objective returned non-finite value {value}"
        )))
    }
}

/// Central-difference estimate of `∂f/∂θ` for every scalar in `params`.
/// `params` is restored exactly before returning.
pub fn finite_diff_grad<F>(mut f: F, params: &mut ParamSet, eps: f64) -> Result<Grads>
where
    F: FnMut(&ParamSet) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let mut out = params.zero_grad_buffer();
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        for k in 0..params.tensor(id).len() {
            let orig = params.value(id).data()[k];
            params.value_mut(id).data_mut()[k] = orig + eps;
            let plus = eval_finite(f(params));
            params.value_mut(id).data_mut()[k] = orig - eps;
            let minus = eval_finite(f(params));
            params.value_mut(id).data_mut()[k] = orig;
            out.get_mut(id).data_mut()[k] = (plus? - minus?) / (2.0 * eps);
        }
    }
    Ok(out)
}

/// Central differences for a function of a plain vector.
pub fn finite_diff_vec<F>(mut f: F, x: &[f64], eps: f64) -> Result<Vector>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        probe[k] = x[k] + eps;
        let plus = eval_finite(f(&probe))?;
        probe[k] = x[k] - eps;
        let minus = eval_finite(f(&probe))?;
        probe[k] = x[k];
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

/// Per-tensor comparison of an analytic gradient against an estimate.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_tensor: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn compare(params: &ParamSet, analytic: &Grads, numeric: &Grads) -> Self {
        let per_tensor = params
            .ids()
            .map(|id| {
                let worst = analytic
                    .get(id)
                    .data()
                    .iter()
                    .zip(numeric.get(id).data())
                    .map(|(&a, &n)| rel_error(a, n))
                    .fold(0.0, f64::max);
                (params.tensor(id).name.clone(), worst)
            })
            .collect();
        GradCheckReport { per_tensor }
    }

    pub fn max_rel_error(&self) -> f64 {
        self.per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_tensor
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() <= tol
    }
}
