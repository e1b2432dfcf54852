//! Small dense-tensor neural toolkit with hand-written backward passes.
//!
//! Every layer exposes `forward`, which returns its output together with a
//! cache, and `backward`, which consumes that cache, accumulates parameter
//! gradients and returns the gradient with respect to its input. Layers are
//! generic over [`Scalar`] so the same code runs in `f32` for training and
//! in `f64` for finite-difference checks.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

mod attention;
mod gradcheck;
mod layers;
mod loss;
mod optim;
mod transformer;
pub mod suite;

pub use attention::{AttentionCache, KeyValueCache, MultiHeadAttention};
pub use gradcheck::{grad_check, grad_check_mixed, relative_error, GradCheckReport, InputProbe, ParamError};
pub use layers::{
    dropout, dropout_backward, Embedding, EmbeddingCache, FeedForward, FeedForwardCache, LayerNorm,
    LayerNormCache, Linear, LinearCache,
};
pub use loss::cross_entropy;
pub use optim::{adam_step, Adam, AdamConfig, Moments};
pub use transformer::{
    DecoderCache, DecoderLayer, DecoderLayerCache, DecoderStack, DecoderState, Encoder, EncoderCache,
    EncoderConfig, EncoderLayer, EncoderLayerCache, StackCache, TransformerStack,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NeuralError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("non-finite value in {context}")]
    NonFiniteValue { context: &'static str },
    #[error("index {index} out of range for {bound} classes")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("sequence of length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

fn mismatch(expected: &[usize], found: &[usize]) -> NeuralError {
    NeuralError::ShapeMismatch { expected: expected.to_vec(), found: found.to_vec() }
}

/// Floating-point element type.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[inline]
pub(crate) fn c<F: Scalar>(x: f64) -> F {
    F::from_f64(x)
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![F::zero(); n] }
    }

    /// Wraps `data`, checking its length and rejecting NaN or infinity.
    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self, NeuralError> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(mismatch(shape, &[data.len()]));
        }
        let t = Self { shape: shape.to_vec(), data };
        t.check_finite("tensor construction")?;
        Ok(t)
    }

    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        for x in &mut t.data {
            *x = c(rng.gen_range(-bound..=bound));
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows of a matrix (first dimension).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Length of the last dimension.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[F] {
        let m = self.cols();
        &self.data[i * m..(i + 1) * m]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        let m = self.cols();
        &mut self.data[i * m..(i + 1) * m]
    }

    pub fn get(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols() + j]
    }

    pub fn check_finite(&self, context: &'static str) -> Result<(), NeuralError> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(NeuralError::NonFiniteValue { context })
        }
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<(), NeuralError> {
        if self.shape == shape {
            Ok(())
        } else {
            Err(mismatch(shape, &self.shape))
        }
    }

    pub(crate) fn expect_cols(&self, cols: usize) -> Result<(), NeuralError> {
        if self.shape.len() == 2 && self.shape[1] == cols {
            Ok(())
        } else {
            Err(mismatch(&[self.rows(), cols], &self.shape))
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<F>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale(&mut self, s: F) {
        for a in &mut self.data {
            *a = *a * s;
        }
    }

    pub fn fill_zero(&mut self) {
        for a in &mut self.data {
            *a = F::zero();
        }
    }

    /// Copies the listed rows into a new matrix.
    pub fn gather_rows(&self, rows: &[usize]) -> Tensor<F> {
        let m = self.cols();
        let mut out = Tensor::zeros(&[rows.len(), m]);
        for (k, &r) in rows.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(r));
        }
        out
    }

    /// Inverse of [`Tensor::gather_rows`] for gradients: adds row `k` of
    /// `grad` into row `rows[k]` of `self`.
    pub fn scatter_add_rows(&mut self, rows: &[usize], grad: &Tensor<F>) {
        for (k, &r) in rows.iter().enumerate() {
            axpy(F::one(), grad.row(k), self.row_mut(r));
        }
    }

    /// Index of the largest entry of each row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| G::from_f64(x.as_f64())).collect() }
    }
}

/// Trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    pub requires_grad: bool,
}

impl<F: Scalar> Param<F> {
    pub fn new(name: impl Into<String>, value: Tensor<F>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { name: name.into(), value, grad, requires_grad: true }
    }
}

/// Access to the parameters of a layer or model, in a fixed order.
pub trait Module<F: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.grad.fill_zero());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.value.len());
        n
    }

    fn scale_grad(&mut self, s: F) {
        self.visit_mut(&mut |p| p.grad.scale(s));
    }
}

/// Copies every parameter value of `src` into `dst`, converting precision.
/// Both modules must have the same parameter layout.
pub fn cast_params<F: Scalar, G: Scalar, A, B>(src: &A, dst: &mut B) -> Result<(), NeuralError>
where
    A: Module<F> + ?Sized,
    B: Module<G> + ?Sized,
{
    let mut values: Vec<Tensor<F>> = Vec::new();
    src.visit(&mut |p| values.push(p.value.clone()));
    let mut idx = 0;
    let mut result = Ok(());
    dst.visit_mut(&mut |p| {
        match values.get(idx) {
            Some(v) if v.shape() == p.value.shape() => p.value = v.cast(),
            Some(v) if result.is_ok() => result = Err(mismatch(p.value.shape(), v.shape())),
            None if result.is_ok() => result = Err(mismatch(&[values.len()], &[idx + 1])),
            _ => {}
        }
        idx += 1;
    });
    if result.is_ok() && idx != values.len() {
        result = Err(mismatch(&[values.len()], &[idx]));
    }
    result
}

/// Shortens the borrow of an optional random source so it can be handed to
/// several callees in turn.
pub fn reborrow<'a>(rng: &'a mut Option<&mut dyn rand::RngCore>) -> Option<&'a mut dyn rand::RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

/// Prefixes parameter names of nested layers, `"enc" + "w"` → `"enc.w"`.
pub(crate) fn join(prefix: &str, name: &str) -> String {
    let mut s = String::with_capacity(prefix.len() + name.len() + 1);
    s.push_str(prefix);
    s.push('.');
    s.push_str(name);
    s
}

// Dense kernels. Matrices are row-major; `c += a · b` shapes are spelled
// out in each signature.

#[inline]
pub(crate) fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Dot product with eight independent partial sums.
#[inline]
pub(crate) fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s = s + x * y;
    }
    s
}

/// `c[n×m] += a[n×k] · b[k×m]`
pub(crate) fn gemm_nn<F: Scalar>(a: &[F], b: &[F], c: &mut [F], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        for p in 0..k {
            axpy(a[i * k + p], &b[p * m..(p + 1) * m], crow);
        }
    }
}

/// `c[n×m] += aᵀ · b` with `a[k×n]`, `b[k×m]`
pub(crate) fn gemm_tn<F: Scalar>(a: &[F], b: &[F], c: &mut [F], n: usize, k: usize, m: usize) {
    for p in 0..k {
        let brow = &b[p * m..(p + 1) * m];
        for i in 0..n {
            axpy(a[p * n + i], brow, &mut c[i * m..(i + 1) * m]);
        }
    }
}

/// `c[n×m] += a · bᵀ` with `a[n×k]`, `b[m×k]`
pub(crate) fn gemm_nt<F: Scalar>(a: &[F], b: &[F], c: &mut [F], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            c[i * m + j] = c[i * m + j] + dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Numerically stable softmax of one row in place. Entries with
/// `allowed[j] == false` get probability zero; a row with nothing allowed
/// becomes all zeros.
pub fn softmax_in_place<F: Scalar>(row: &mut [F], allowed: Option<&[bool]>) {
    let ok = |j: usize| allowed.map_or(true, |a| a[j]);
    let mut max = F::neg_infinity();
    for (j, &v) in row.iter().enumerate() {
        if ok(j) && v > max {
            max = v;
        }
    }
    if max == F::neg_infinity() {
        row.iter_mut().for_each(|v| *v = F::zero());
        return;
    }
    let mut sum = F::zero();
    for (j, v) in row.iter_mut().enumerate() {
        *v = if ok(j) { (*v - max).exp() } else { F::zero() };
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Row-wise softmax of a matrix.
pub fn softmax<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>, NeuralError> {
    x.check_finite("softmax input")?;
    let mut y = x.clone();
    for i in 0..y.rows() {
        softmax_in_place(y.row_mut(i), None);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length_and_nan() {
        assert!(matches!(
            Tensor::<f32>::from_vec(&[2, 2], vec![0.0; 3]),
            Err(NeuralError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            Tensor::<f32>::from_vec(&[1], vec![f32::NAN]),
            Err(NeuralError::NonFiniteValue { .. })
        ));
    }

    #[test]
    fn gemm_variants_agree() {
        let a: Vec<f64> = (0..6).map(|x| x as f64 * 0.5 - 1.0).collect(); // 2×3
        let b: Vec<f64> = (0..12).map(|x| (x as f64).sin()).collect(); // 3×4
        let mut c1 = vec![0.0; 8];
        gemm_nn(&a, &b, &mut c1, 2, 3, 4);
        // aᵀ stored as 3×2
        let at: Vec<f64> = (0..6).map(|i| a[(i % 2) * 3 + i / 2]).collect();
        let mut c2 = vec![0.0; 8];
        gemm_tn(&at, &b, &mut c2, 2, 3, 4);
        // bᵀ stored as 4×3
        let bt: Vec<f64> = (0..12).map(|i| b[(i % 3) * 4 + i / 3]).collect();
        let mut c3 = vec![0.0; 8];
        gemm_nt(&a, &bt, &mut c3, 2, 3, 4);
        for k in 0..8 {
            assert!((c1[k] - c2[k]).abs() < 1e-12);
            assert!((c1[k] - c3[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::<f32>::from_vec(&[3, 4], vec![1.0, 2.0, 3.0, 4.0, -50.0, 0.0, 50.0, 1.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        let y = softmax(&x).unwrap();
        for i in 0..3 {
            let s: f32 = y.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn masked_softmax_zeroes_disallowed() {
        let mut row = [1.0f64, 5.0, 2.0];
        softmax_in_place(&mut row, Some(&[true, false, true]));
        assert_eq!(row[1], 0.0);
        assert!((row[0] + row[2] - 1.0).abs() < 1e-12);
        let mut none = [1.0f64, 2.0];
        softmax_in_place(&mut none, Some(&[false, false]));
        assert_eq!(none, [0.0, 0.0]);
    }
}
