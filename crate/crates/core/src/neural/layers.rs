use alloc::vec::Vec;

use rand::Rng;

use super::{c, gemm_nn, gemm_nt, gemm_tn, join, Module, NeuralError, Param, Scalar, Tensor};

/// `y = x·W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub weight: Param<F>,
    pub bias: Param<F>,
}

#[derive(Debug, Clone)]
pub struct LinearCache<F> {
    x: Tensor<F>,
}

impl<F: Scalar> Linear<F> {
    /// Xavier-uniform weights, zero bias.
    pub fn new<R: Rng>(name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = num_traits::Float::sqrt(6.0 / (fan_in + fan_out) as f64);
        Self {
            weight: Param::new(join(name, "weight"), Tensor::uniform(&[fan_in, fan_out], bound, rng)),
            bias: Param::new(join(name, "bias"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn infer(&self, x: &Tensor<F>) -> Result<Tensor<F>, NeuralError> {
        x.expect_cols(self.fan_in())?;
        let (n, k, m) = (x.rows(), self.fan_in(), self.fan_out());
        let mut y = Tensor::zeros(&[n, m]);
        for i in 0..n {
            y.row_mut(i).copy_from_slice(self.bias.value.data());
        }
        gemm_nn(x.data(), self.weight.value.data(), y.data_mut(), n, k, m);
        Ok(y)
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, LinearCache<F>), NeuralError> {
        let y = self.infer(x)?;
        Ok((y, LinearCache { x: x.clone() }))
    }

    pub fn backward(&mut self, cache: &LinearCache<F>, dy: &Tensor<F>) -> Tensor<F> {
        let (n, k, m) = (cache.x.rows(), self.fan_in(), self.fan_out());
        debug_assert_eq!(dy.shape(), &[n, m]);
        gemm_tn(cache.x.data(), dy.data(), self.weight.grad.data_mut(), k, n, m);
        let db = self.bias.grad.data_mut();
        for i in 0..n {
            for (g, &d) in db.iter_mut().zip(dy.row(i)) {
                *g = *g + d;
            }
        }
        let mut dx = Tensor::zeros(&[n, k]);
        gemm_nt(dy.data(), self.weight.value.data(), dx.data_mut(), n, m, k);
        dx
    }
}

impl<F: Scalar> Module<F> for Linear<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Lookup table of `[vocab, dim]` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<F> {
    pub table: Param<F>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    ids: Vec<usize>,
}

impl<F: Scalar> Embedding<F> {
    pub fn new<R: Rng>(name: &str, vocab: usize, dim: usize, rng: &mut R) -> Self {
        Self { table: Param::new(join(name, "table"), Tensor::uniform(&[vocab, dim], 0.1, rng)) }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.value.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.value.cols()
    }

    pub fn infer(&self, ids: &[usize]) -> Result<Tensor<F>, NeuralError> {
        let bound = self.vocab_size();
        if let Some(&index) = ids.iter().find(|&&i| i >= bound) {
            return Err(NeuralError::IndexOutOfRange { index, bound });
        }
        Ok(self.table.value.gather_rows(ids))
    }

    pub fn forward(&self, ids: &[usize]) -> Result<(Tensor<F>, EmbeddingCache), NeuralError> {
        Ok((self.infer(ids)?, EmbeddingCache { ids: ids.to_vec() }))
    }

    pub fn backward(&mut self, cache: &EmbeddingCache, dy: &Tensor<F>) {
        self.table.grad.scatter_add_rows(&cache.ids, dy);
    }
}

impl<F: Scalar> Module<F> for Embedding<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        f(&self.table);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.table);
    }
}

const LN_EPS: f64 = 1e-5;

/// Per-row normalization with learned gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<F> {
    pub gain: Param<F>,
    pub bias: Param<F>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<F> {
    xhat: Tensor<F>,
    inv_std: Vec<F>,
}

impl<F: Scalar> LayerNorm<F> {
    pub fn new(name: &str, dim: usize) -> Self {
        let mut gain = Tensor::zeros(&[dim]);
        gain.data_mut().iter_mut().for_each(|g| *g = F::one());
        Self { gain: Param::new(join(name, "gain"), gain), bias: Param::new(join(name, "bias"), Tensor::zeros(&[dim])) }
    }

    fn dim(&self) -> usize {
        self.gain.value.len()
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, LayerNormCache<F>), NeuralError> {
        let d = self.dim();
        x.expect_cols(d)?;
        let n = x.rows();
        let inv_d = c::<F>(1.0) / c(d as f64);
        let mut xhat = Tensor::zeros(&[n, d]);
        let mut y = Tensor::zeros(&[n, d]);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = x.row(i);
            let mean = row.iter().fold(F::zero(), |a, &v| a + v) * inv_d;
            let var = row.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_d;
            let s = F::one() / (var + c(LN_EPS)).sqrt();
            inv_std.push(s);
            let (g, b) = (self.gain.value.data(), self.bias.value.data());
            let (hr, yr) = (xhat.row_mut(i), y.row_mut(i));
            for j in 0..d {
                hr[j] = (row[j] - mean) * s;
                yr[j] = hr[j] * g[j] + b[j];
            }
        }
        Ok((y, LayerNormCache { xhat, inv_std }))
    }

    pub fn backward(&mut self, cache: &LayerNormCache<F>, dy: &Tensor<F>) -> Tensor<F> {
        let d = self.dim();
        let n = cache.xhat.rows();
        let inv_d = c::<F>(1.0) / c(d as f64);
        let mut dx = Tensor::zeros(&[n, d]);
        let g = self.gain.value.data().to_vec();
        for i in 0..n {
            let (xh, dyr) = (cache.xhat.row(i), dy.row(i));
            {
                let gg = self.gain.grad.data_mut();
                for j in 0..d {
                    gg[j] = gg[j] + dyr[j] * xh[j];
                }
            }
            {
                let bg = self.bias.grad.data_mut();
                for j in 0..d {
                    bg[j] = bg[j] + dyr[j];
                }
            }
            let mut mean_dh = F::zero();
            let mut mean_dh_xh = F::zero();
            for j in 0..d {
                let dh = dyr[j] * g[j];
                mean_dh = mean_dh + dh;
                mean_dh_xh = mean_dh_xh + dh * xh[j];
            }
            mean_dh = mean_dh * inv_d;
            mean_dh_xh = mean_dh_xh * inv_d;
            let s = cache.inv_std[i];
            let dr = dx.row_mut(i);
            for j in 0..d {
                dr[j] = s * (dyr[j] * g[j] - mean_dh - xh[j] * mean_dh_xh);
            }
        }
        dx
    }
}

impl<F: Scalar> Module<F> for LayerNorm<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        f(&self.gain);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.gain);
        f(&mut self.bias);
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<F: Scalar>(x: F) -> (F, F) {
    let (k, a) = (c::<F>(GELU_K), c::<F>(GELU_A));
    let half = c::<F>(0.5);
    let x2 = x * x;
    let t = (k * (x + a * x2 * x)).tanh();
    let y = half * x * (F::one() + t);
    let dy = half * (F::one() + t) + half * x * (F::one() - t * t) * k * (F::one() + c::<F>(3.0) * a * x2);
    (y, dy)
}

/// Position-wise `Linear → GELU → Linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward<F> {
    pub inner: Linear<F>,
    pub outer: Linear<F>,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache<F> {
    inner: LinearCache<F>,
    act_grad: Tensor<F>,
    outer: LinearCache<F>,
}

impl<F: Scalar> FeedForward<F> {
    pub fn new<R: Rng>(name: &str, dim: usize, ff_dim: usize, rng: &mut R) -> Self {
        Self { inner: Linear::new(&join(name, "inner"), dim, ff_dim, rng), outer: Linear::new(&join(name, "outer"), ff_dim, dim, rng) }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, FeedForwardCache<F>), NeuralError> {
        let (mut h, inner) = self.inner.forward(x)?;
        let mut act_grad = Tensor::zeros(h.shape());
        for (v, g) in h.data_mut().iter_mut().zip(act_grad.data_mut()) {
            let (y, dy) = gelu(*v);
            *v = y;
            *g = dy;
        }
        let (y, outer) = self.outer.forward(&h)?;
        Ok((y, FeedForwardCache { inner, act_grad, outer }))
    }

    pub fn backward(&mut self, cache: &FeedForwardCache<F>, dy: &Tensor<F>) -> Tensor<F> {
        let mut dh = self.outer.backward(&cache.outer, dy);
        for (d, &g) in dh.data_mut().iter_mut().zip(cache.act_grad.data()) {
            *d = *d * g;
        }
        self.inner.backward(&cache.inner, &dh)
    }
}

impl<F: Scalar> Module<F> for FeedForward<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.inner.visit(f);
        self.outer.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.inner.visit_mut(f);
        self.outer.visit_mut(f);
    }
}

/// Inverted dropout in place. Returns the scaled keep mask, or `None` when
/// `rate` is zero and nothing was touched.
pub fn dropout<F: Scalar, R: Rng + ?Sized>(x: &mut Tensor<F>, rate: f64, rng: &mut R) -> Option<Vec<F>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = c::<F>(1.0 / (1.0 - rate));
    let mask: Vec<F> = (0..x.len()).map(|_| if rng.gen_bool(rate) { F::zero() } else { keep }).collect();
    for (v, &m) in x.data_mut().iter_mut().zip(&mask) {
        *v = *v * m;
    }
    Some(mask)
}

pub fn dropout_backward<F: Scalar>(mask: &Option<Vec<F>>, dy: &mut Tensor<F>) {
    if let Some(mask) = mask {
        for (v, &m) in dy.data_mut().iter_mut().zip(mask) {
            *v = *v * m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layer_norm_rows_are_standardized() {
        let ln = LayerNorm::<f64>::new("ln", 4);
        let x = Tensor::from_vec(&[2, 4], alloc::vec![1.0, 2.0, 3.0, 4.0, -3.0, 0.0, 0.0, 9.0]).unwrap();
        let (y, _) = ln.forward(&x).unwrap();
        for i in 0..2 {
            let m: f64 = y.row(i).iter().sum::<f64>() / 4.0;
            let v: f64 = y.row(i).iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn embedding_rejects_out_of_range_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = Embedding::<f32>::new("e", 5, 3, &mut rng);
        assert_eq!(e.infer(&[0, 5]), Err(NeuralError::IndexOutOfRange { index: 5, bound: 5 }));
        assert_eq!(e.infer(&[4, 1]).unwrap().shape(), &[2, 3]);
    }

    #[test]
    fn linear_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Linear::<f32>::new("l", 3, 2, &mut rng);
        assert!(matches!(l.infer(&Tensor::zeros(&[4, 2])), Err(NeuralError::ShapeMismatch { .. })));
    }

    #[test]
    fn zero_rate_dropout_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut x = Tensor::<f32>::uniform(&[3, 3], 1.0, &mut rng);
        let before = x.clone();
        assert!(dropout(&mut x, 0.0, &mut rng).is_none());
        assert_eq!(x, before);
    }
}
