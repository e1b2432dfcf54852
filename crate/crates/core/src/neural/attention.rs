use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{axpy, c, dot, join, softmax_in_place, Linear, LinearCache, Module, NeuralError, Param, Scalar, Tensor};

/// Scaled dot-product attention with `heads` heads over a shared model
/// dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention<F> {
    pub query: Linear<F>,
    pub key: Linear<F>,
    pub value: Linear<F>,
    pub output: Linear<F>,
    heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    query: LinearCache<F>,
    key: LinearCache<F>,
    value: LinearCache<F>,
    output: LinearCache<F>,
    q: Tensor<F>,
    k: Tensor<F>,
    v: Tensor<F>,
    // heads × n × m attention weights
    probs: Vec<F>,
}

/// Projected keys and values of the rows seen so far, for decoding one
/// query row at a time.
#[derive(Debug, Clone)]
pub struct KeyValueCache<F> {
    keys: Vec<F>,
    values: Vec<F>,
    valid: Option<Vec<bool>>,
    dim: usize,
}

impl<F> KeyValueCache<F> {
    pub fn rows(&self) -> usize {
        self.keys.len() / self.dim
    }
}

impl<F: Scalar> MultiHeadAttention<F> {
    pub fn new<R: Rng>(name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self, NeuralError> {
        if heads == 0 || dim % heads != 0 {
            return Err(NeuralError::InvalidConfig("model dimension must be divisible by head count"));
        }
        Ok(Self {
            query: Linear::new(&join(name, "query"), dim, dim, rng),
            key: Linear::new(&join(name, "key"), dim, dim, rng),
            value: Linear::new(&join(name, "value"), dim, dim, rng),
            output: Linear::new(&join(name, "output"), dim, dim, rng),
            heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Attends from the rows of `xq` to the rows of `xkv`. Key `j` is
    /// visible when `key_valid[j]` holds and, if `causal`, `j <= i`.
    pub fn forward(
        &self,
        xq: &Tensor<F>,
        xkv: &Tensor<F>,
        key_valid: Option<&[bool]>,
        causal: bool,
    ) -> Result<(Tensor<F>, AttentionCache<F>), NeuralError> {
        let m = xkv.rows();
        if let Some(mask) = key_valid {
            if mask.len() != m {
                return Err(NeuralError::ShapeMismatch { expected: vec![m], found: vec![mask.len()] });
            }
        }
        let (q, query) = self.query.forward(xq)?;
        let (k, key) = self.key.forward(xkv)?;
        let (v, value) = self.value.forward(xkv)?;
        let n = q.rows();
        let d = q.cols();
        let dk = d / self.heads;
        let scale = F::one() / c::<F>(dk as f64).sqrt();
        let mut probs = vec![F::zero(); self.heads * n * m];
        let mut ctx = Tensor::zeros(&[n, d]);
        let mut allowed = vec![true; m];
        for i in 0..n {
            for j in 0..m {
                allowed[j] = key_valid.map_or(true, |kv| kv[j]) && (!causal || j <= i);
            }
            for h in 0..self.heads {
                let off = h * dk;
                let qi = &q.row(i)[off..off + dk];
                let p = &mut probs[(h * n + i) * m..(h * n + i + 1) * m];
                for j in 0..m {
                    p[j] = if allowed[j] { dot(qi, &k.row(j)[off..off + dk]) * scale } else { F::zero() };
                }
                softmax_in_place(p, Some(&allowed));
                let out = &mut ctx.row_mut(i)[off..off + dk];
                for j in 0..m {
                    if p[j] != F::zero() {
                        axpy(p[j], &v.row(j)[off..off + dk], out);
                    }
                }
            }
        }
        let (y, output) = self.output.forward(&ctx)?;
        Ok((y, AttentionCache { query, key, value, output, q, k, v, probs }))
    }

    /// Empty cache for self-attention during incremental decoding.
    pub fn empty_cache(&self) -> KeyValueCache<F> {
        KeyValueCache { keys: Vec::new(), values: Vec::new(), valid: None, dim: self.key.fan_out() }
    }

    /// Cache holding every row of `xkv`, e.g. an encoder memory.
    pub fn cache_for(&self, xkv: &Tensor<F>, key_valid: Option<&[bool]>) -> Result<KeyValueCache<F>, NeuralError> {
        if let Some(mask) = key_valid {
            if mask.len() != xkv.rows() {
                return Err(NeuralError::ShapeMismatch { expected: vec![xkv.rows()], found: vec![mask.len()] });
            }
        }
        let mut cache = self.empty_cache();
        self.extend(&mut cache, xkv)?;
        cache.valid = key_valid.map(<[bool]>::to_vec);
        Ok(cache)
    }

    /// Appends the key and value projections of the rows of `x`.
    pub fn extend(&self, cache: &mut KeyValueCache<F>, x: &Tensor<F>) -> Result<(), NeuralError> {
        cache.keys.extend_from_slice(self.key.infer(x)?.data());
        cache.values.extend_from_slice(self.value.infer(x)?.data());
        if let Some(v) = &mut cache.valid {
            v.resize(v.len() + x.rows(), true);
        }
        Ok(())
    }

    /// Attends from every row of `xq` to every valid cached row. Matches
    /// [`Self::forward`] without a causal mask.
    pub fn attend(&self, xq: &Tensor<F>, cache: &KeyValueCache<F>) -> Result<Tensor<F>, NeuralError> {
        let q = self.query.infer(xq)?;
        let (n, d, m) = (q.rows(), q.cols(), cache.rows());
        let dk = d / self.heads;
        let scale = F::one() / c::<F>(dk as f64).sqrt();
        let allowed: Vec<bool> = cache.valid.clone().unwrap_or_else(|| vec![true; m]);
        let mut p = vec![F::zero(); m];
        let mut ctx = Tensor::zeros(&[n, d]);
        for i in 0..n {
            for h in 0..self.heads {
                let off = h * dk;
                let qi = &q.row(i)[off..off + dk];
                for j in 0..m {
                    p[j] = if allowed[j] { dot(qi, &cache.keys[j * d + off..j * d + off + dk]) * scale } else { F::zero() };
                }
                softmax_in_place(&mut p, Some(&allowed));
                let out = &mut ctx.row_mut(i)[off..off + dk];
                for j in 0..m {
                    if p[j] != F::zero() {
                        axpy(p[j], &cache.values[j * d + off..j * d + off + dk], out);
                    }
                }
            }
        }
        self.output.infer(&ctx)
    }

    /// Returns gradients with respect to `xq` and `xkv`.
    pub fn backward(&mut self, cache: &AttentionCache<F>, dy: &Tensor<F>) -> (Tensor<F>, Tensor<F>) {
        let dctx = self.output.backward(&cache.output, dy);
        let (q, k, v) = (&cache.q, &cache.k, &cache.v);
        let (n, m, d) = (q.rows(), k.rows(), q.cols());
        let dk = d / self.heads;
        let scale = F::one() / c::<F>(dk as f64).sqrt();
        let mut dq = Tensor::zeros(&[n, d]);
        let mut dkm = Tensor::zeros(&[m, d]);
        let mut dv = Tensor::zeros(&[m, d]);
        let mut dp = vec![F::zero(); m];
        for h in 0..self.heads {
            let off = h * dk;
            for i in 0..n {
                let p = &cache.probs[(h * n + i) * m..(h * n + i + 1) * m];
                let go = &dctx.row(i)[off..off + dk];
                let mut weighted = F::zero();
                for j in 0..m {
                    if p[j] == F::zero() {
                        dp[j] = F::zero();
                        continue;
                    }
                    dp[j] = dot(go, &v.row(j)[off..off + dk]);
                    weighted = weighted + p[j] * dp[j];
                    axpy(p[j], go, &mut dv.row_mut(j)[off..off + dk]);
                }
                for j in 0..m {
                    if p[j] == F::zero() {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - weighted) * scale;
                    axpy(ds, &k.row(j)[off..off + dk], &mut dq.row_mut(i)[off..off + dk]);
                    axpy(ds, &q.row(i)[off..off + dk], &mut dkm.row_mut(j)[off..off + dk]);
                }
            }
        }
        let dxq = self.query.backward(&cache.query, &dq);
        let mut dxkv = self.key.backward(&cache.key, &dkm);
        dxkv.add_assign(&self.value.backward(&cache.value, &dv));
        (dxq, dxkv)
    }
}

impl<F: Scalar> Module<F> for MultiHeadAttention<F> {
    fn visit(&self, f: &mut dyn FnMut(&Param<F>)) {
        self.query.visit(f);
        self.key.visit(f);
        self.value.visit(f);
        self.output.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.query.visit_mut(f);
        self.key.visit_mut(f);
        self.value.visit_mut(f);
        self.output.visit_mut(f);
    }
}
