//! Gradient checks for every building block on small random inputs.
//!
//! Each case feeds a layer a fixed random input, reduces its output to a
//! scalar with fixed random weights and compares analytic gradients (of
//! the parameters and the input) with central differences.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

pub const EPS: f64 = 1e-6;
/// Denominator floor of the relative error.
pub const FLOOR: f64 = 1e-3;
const ENTRIES: usize = 24;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws in single precision so both precisions see identical values.
fn draw<F: Scalar>(shape: &[usize], bound: f64, r: &mut ChaCha8Rng) -> Tensor<F> {
    Tensor::<f32>::uniform(shape, bound, r).cast()
}

/// Scalar read-out `sum(y ⊙ w)` with a fixed random `w`.
fn readout<F: Scalar>(y: &Tensor<F>, seed: u64) -> (F, Tensor<F>) {
    let w = draw::<F>(y.shape(), 1.0, &mut rng(seed ^ 0xabc));
    let loss = y.data().iter().zip(w.data()).fold(F::zero(), |a, (&p, &q)| a + p * q);
    (loss, w)
}

trait Case {
    type M<F: Scalar>: Module<F>;
    fn build<F: Scalar>(seed: u64) -> Self::M<F>;
    fn backward<F: Scalar>(m: &mut Self::M<F>, seed: u64) -> Result<F, NeuralError>;
    fn loss<F: Scalar>(m: &Self::M<F>, seed: u64) -> Result<F, NeuralError>;
}

fn double<C: Case>(seed: u64) -> Result<GradCheckReport, NeuralError> {
    let mut m = C::build::<f64>(seed);
    grad_check(&mut m, |m| C::backward(m, seed), |m| C::loss(m, seed), EPS, FLOOR, ENTRIES, seed)
}

fn single<C: Case>(seed: u64) -> Result<GradCheckReport, NeuralError> {
    let mut m = C::build::<f32>(seed);
    let mut reference = C::build::<f64>(seed);
    grad_check_mixed(
        &mut m,
        &mut reference,
        |m| C::backward(m, seed),
        |r| C::loss(r, seed),
        EPS,
        FLOOR,
        ENTRIES,
        seed,
    )
}

struct Nothing;

impl<F: Scalar> Module<F> for Nothing {
    fn visit(&self, _: &mut dyn FnMut(&Param<F>)) {}
    fn visit_mut(&mut self, _: &mut dyn FnMut(&mut Param<F>)) {}
}

struct LinearCase;
impl Case for LinearCase {
    type M<F: Scalar> = InputProbe<F, Linear<F>>;
    fn build<F: Scalar>(seed: u64) -> Self::M<F> {
        let mut r = rng(seed);
        InputProbe::new(draw(&[3, 5], 1.0, &mut r), Linear::new("lin", 5, 4, &mut r))
    }
    fn backward<F: Scalar>(m: &mut Self::M<F>, seed: u64) -> Result<F, NeuralError> {
        m.zero_grad();
        let (y, cache) = m.layer.forward(&m.input.value)?;
        let (loss, dy) = readout(&y, seed);
        let dx = m.layer.backward(&cache, &dy);
        m.input.grad.add_assign(&dx);
        Ok(loss)
    }
    fn loss<F: Scalar>(m: &Self::M<F>, seed: u64) -> Result<F, NeuralError> {
        Ok(readout(&m.layer.infer(&m.input.value)?, seed).0)
    }
}

struct EmbeddingCase;
impl Case for EmbeddingCase {
    type M<F: Scalar> = Embedding<F>;
    fn build<F: Scalar>(seed: u64) -> Self::M<F> {
        Embedding::new("emb", 6, 4, &mut rng(seed))
    }
    fn backward<F: Scalar>(m: &mut Self::M<F>, seed: u64) -> Result<F, NeuralError> {
        m.zero_grad();
        let (y, cache) = m.forward(&[1, 3, 1, 5])?;
        let (loss, dy) = readout(&y, seed);
        m.backward(&cache, &dy);
        Ok(loss)
    }
    fn loss<F: Scalar>(m: &Self::M<F>, seed: u64) -> Result<F, NeuralError> {
        Ok(readout(&m.infer(&[1, 3, 1, 5])?, seed).0)
    }
}

struct LayerNormCase;
impl Case for LayerNormCase {
    type M<F: Scalar> = InputProbe<F, LayerNorm<F>>;
    fn build<F: Scalar>(seed: u64) -> Self::M<F> {
        let mut r = rng(seed);
        let x = draw(&[3, 6], 2.0, &mut r);
        let mut ln = LayerNorm::new("ln", 6);
        // off the identity initialization so every term matters
        ln.gain.value = draw(&[6], 1.5, &mut r);
        ln.bias.value = draw(&[6], 0.5, &mut r);
        InputProbe::new(x, ln)
    }
    fn backward<F: Scalar>(m: &mut Self::M<F>, seed: u64) -> Result<F, NeuralError> {
        m.zero_grad();
        let (y, cache) = m.layer.forward(&m.input.value)?;
        let (loss, dy) = readout(&y, seed);
        let dx = m.layer.backward(&cache, &dy);
        m.input.grad.add_assign(&dx);
        Ok(loss)
    }
    fn loss<F: Scalar>(m: &Self::M<F>, seed: u64) -> Result<F, NeuralError> {
        Ok(readout(&m.layer.forward(&m.input.value)?.0, seed).0)
    }
}

struct FeedForwardCase;
impl Case for FeedForwardCase {
    type M<F: Scalar> = InputProbe<F, FeedForward<F>>;
    fn build<F: Scalar>(seed: u64) -> Self::M<F> {
        let mut r = rng(seed);
        InputProbe::new(draw(&[3, 4], 1.0, &mut r), FeedForward::new("ffn", 4, 7, &mut r))
    }
    fn backward<F: Scalar>(m: &mut Self::M<F>, seed: u64) -> Result<F, NeuralError> {
        m.zero_grad();
        let (y, cache) = m.layer.forward(&m.input.value)?;
        let (loss, dy) = readout(&y, seed);
        let dx = m.layer.backward(&cache, &dy);
        m.input.grad.add_assign(&dx);
        Ok(loss)
    }
    fn loss<F: Scalar>(m: &Self::M<F>, seed: u64) -> Result<F, NeuralError> {
        Ok(readout(&m.layer.forward(&m.input.value)?.0, seed).0)
    }
}

const KEY_MASK: [bool; 4] = [true, false, true, true];

struct AttentionCase<const CAUSAL: bool>;
impl<const CAUSAL: bool> Case for AttentionCase<CAUSAL> {
    type M<F: Scalar> = InputProbe<F, InputProbe<F, MultiHeadAttention<F>>>;
    fn build<F: Scalar>(seed: u64) -> Self::M<F> {
        let mut r = rng(seed);
        let xq = draw(&[4, 8], 1.0, &mut r);
        let xkv = draw(&[4, 8], 1.0, &mut r);
        InputProbe::new(xq, InputProbe::new(xkv, MultiHeadAttention::new("attn", 8, 2, &mut r).unwrap()))
    }
    fn backward<F: Scalar>(m: &mut Self::M<F>, seed: u64) -> Result<F, NeuralError> {
        m.zero_grad();
        let (y, cache) = m.layer.layer.forward(&m.input.value, &m.layer.input.value, Some(&KEY_MASK), CAUSAL)?;
        let (loss, dy) = readout(&y, seed);
        let (dq, dkv) = m.layer.layer.backward(&cache, &dy);
        m.input.grad.add_assign(&dq);
        m.layer.input.grad.add_assign(&dkv);
        Ok(loss)
    }
    fn loss<F: Scalar>(m: &Self::M<F>, seed: u64) -> Result<F, NeuralError> {
        let y = m.layer.layer.forward(&m.input.value, &m.layer.input.value, Some(&KEY_MASK), CAUSAL)?.0;
        Ok(readout(&y, seed).0)
    }
}

struct EncoderLayerCase;
impl Case for EncoderLayerCase {
    type M<F: Scalar> = InputProbe<F, EncoderLayer<F>>;
    fn build<F: Scalar>(seed: u64) -> Self::M<F> {
        let mut r = rng(seed);
        InputProbe::new(draw(&[4, 8], 1.0, &mut r), EncoderLayer::new("enc", 8, 2, 12, 0.0, &mut r).unwrap())
    }
    fn backward<F: Scalar>(m: &mut Self::M<F>, seed: u64) -> Result<F, NeuralError> {
        m.zero_grad();
        let (y, cache) = m.layer.forward(&m.input.value, Some(&KEY_MASK), false, None)?;
        let (loss, dy) = readout(&y, seed);
        let dx = m.layer.backward(&cache, &dy);
        m.input.grad.add_assign(&dx);
        Ok(loss)
    }
    fn loss<F: Scalar>(m: &Self::M<F>, seed: u64) -> Result<F, NeuralError> {
        Ok(readout(&m.layer.forward(&m.input.value, Some(&KEY_MASK), false, None)?.0, seed).0)
    }
}

const IDS: [usize; 5] = [0, 4, 7, 2, 1];
const ID_MASK: [bool; 5] = [true, true, true, true, false];

struct EncoderCase;
impl Case for EncoderCase {
    type M<F: Scalar> = Encoder<F>;
    fn build<F: Scalar>(seed: u64) -> Self::M<F> {
        let config =
            EncoderConfig { vocab_size: 9, dim: 8, heads: 2, layers: 2, ff_dim: 12, max_len: 6, dropout: 0.0, seed };
        Encoder::new("enc", &config, &mut rng(seed)).unwrap()
    }
    fn backward<F: Scalar>(m: &mut Self::M<F>, seed: u64) -> Result<F, NeuralError> {
        m.zero_grad();
        let (y, cache) = m.forward(&IDS, Some(&ID_MASK), None)?;
        let (loss, dy) = readout(&y, seed);
        m.backward(&cache, &dy);
        Ok(loss)
    }
    fn loss<F: Scalar>(m: &Self::M<F>, seed: u64) -> Result<F, NeuralError> {
        Ok(readout(&m.forward(&IDS, Some(&ID_MASK), None)?.0, seed).0)
    }
}

const MEMORY_MASK: [bool; 5] = [true, true, false, true, true];

struct DecoderCase;
impl Case for DecoderCase {
    type M<F: Scalar> = InputProbe<F, InputProbe<F, DecoderStack<F>>>;
    fn build<F: Scalar>(seed: u64) -> Self::M<F> {
        let mut r = rng(seed);
        let y0 = draw(&[3, 8], 1.0, &mut r);
        let mem = draw(&[5, 8], 1.0, &mut r);
        InputProbe::new(y0, InputProbe::new(mem, DecoderStack::new("dec", 8, 2, 2, 12, &mut r).unwrap()))
    }
    fn backward<F: Scalar>(m: &mut Self::M<F>, seed: u64) -> Result<F, NeuralError> {
        m.zero_grad();
        let (y, cache) = m.layer.layer.forward(&m.input.value, &m.layer.input.value, Some(&MEMORY_MASK))?;
        let (loss, dy) = readout(&y, seed);
        let (dx, dmem) = m.layer.layer.backward(&cache, &dy, &[5, 8]);
        m.input.grad.add_assign(&dx);
        m.layer.input.grad.add_assign(&dmem);
        Ok(loss)
    }
    fn loss<F: Scalar>(m: &Self::M<F>, seed: u64) -> Result<F, NeuralError> {
        let y = m.layer.layer.forward(&m.input.value, &m.layer.input.value, Some(&MEMORY_MASK))?.0;
        Ok(readout(&y, seed).0)
    }
}

const TARGETS: [usize; 4] = [0, 4, 2, 2];
const ROW_MASK: [bool; 4] = [true, true, false, true];

struct CrossEntropyCase;
impl Case for CrossEntropyCase {
    type M<F: Scalar> = InputProbe<F, Nothing>;
    fn build<F: Scalar>(seed: u64) -> Self::M<F> {
        InputProbe::new(draw(&[4, 5], 3.0, &mut rng(seed)), Nothing)
    }
    fn backward<F: Scalar>(m: &mut Self::M<F>, _: u64) -> Result<F, NeuralError> {
        m.zero_grad();
        let (loss, g) = cross_entropy(&m.input.value, &TARGETS, Some(&ROW_MASK))?;
        m.input.grad.add_assign(&g);
        Ok(loss)
    }
    fn loss<F: Scalar>(m: &Self::M<F>, _: u64) -> Result<F, NeuralError> {
        Ok(cross_entropy(&m.input.value, &TARGETS, Some(&ROW_MASK))?.0)
    }
}

/// Checks every block with inputs drawn from `seed`. In single precision
/// the analytic gradients are `f32` and the differences are taken in `f64`.
pub fn layer_suite(seed: u64, single_precision: bool) -> Result<Vec<(&'static str, GradCheckReport)>, NeuralError> {
    macro_rules! run {
        ($($name:literal => $case:ty),* $(,)?) => {
            vec![$(($name, if single_precision { single::<$case>(seed)? } else { double::<$case>(seed)? })),*]
        };
    }
    Ok(run! {
        "linear" => LinearCase,
        "embedding" => EmbeddingCase,
        "layer_norm" => LayerNormCase,
        "feed_forward" => FeedForwardCase,
        "attention" => AttentionCase<false>,
        "causal_attention" => AttentionCase<true>,
        "encoder_layer" => EncoderLayerCase,
        "encoder" => EncoderCase,
        "decoder" => DecoderCase,
        "cross_entropy" => CrossEntropyCase,
    })
}

/// Negative control: the linear-layer check with the weight gradient
/// scaled by 1.5. Must report a large error.
pub fn corrupted_linear(seed: u64) -> Result<GradCheckReport, NeuralError> {
    let mut m = LinearCase::build::<f64>(seed);
    grad_check(
        &mut m,
        |m| {
            let loss = LinearCase::backward(m, seed)?;
            m.layer.weight.grad.scale(1.5);
            Ok(loss)
        },
        |m| LinearCase::loss(m, seed),
        EPS,
        FLOOR,
        ENTRIES,
        seed,
    )
}
