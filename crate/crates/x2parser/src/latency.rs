//! Wall-clock latency per output-length bucket at batch size 1.
//!
//! Every example is timed on one thread after warm-up runs. The
//! sequence-to-sequence model is forced to emit exactly the gold number of
//! symbols, so its step count is the output length regardless of how well
//! it is trained. With padding on, every input is padded to one fixed
//! encoder width (and slot width), so the work of the non-autoregressive
//! models does not depend on the example.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use x2parser_core::baselines::linearize_tree;
use x2parser_core::corpus::{Dataset, Example, Vocabs};
use x2parser_core::harness::{AnyParser, ModelConfig};
use x2parser_core::decomposer::MAX_FERTILITY;
use x2parser_core::model::{InferenceShape, ModelError, ModelFamily, Parser};
use x2parser_core::neural::{Module, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyConfig {
    /// Target linearization lengths, ascending.
    pub buckets: Vec<usize>,
    /// An example joins the nearest bucket within this distance.
    pub bucket_width: usize,
    pub samples_per_bucket: usize,
    /// Buckets with fewer examples are reported as insufficient.
    pub min_samples: usize,
    /// Untimed runs per example before timing.
    pub warmup: usize,
    /// Timed runs per example.
    pub repetitions: usize,
    /// Measure with fixed-shape padding, without, or both.
    pub padding: Vec<bool>,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self {
            buckets: vec![10, 20, 30, 40],
            bucket_width: 1,
            samples_per_bucket: 20,
            min_samples: 5,
            warmup: 2,
            repetitions: 5,
            padding: vec![true, false],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketLatency {
    pub bucket: usize,
    pub samples: usize,
    /// Fewer than `min_samples` examples fell into the bucket.
    pub insufficient: bool,
    pub mean_symbols: f64,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub mean_steps: f64,
    pub min_steps: usize,
    pub max_steps: usize,
    /// Every sample took exactly as many steps as it has output symbols.
    pub steps_equal_symbols: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLatency {
    pub name: String,
    pub family: ModelFamily,
    pub params: usize,
    pub padded: bool,
    pub buckets: Vec<BucketLatency>,
}

impl ModelLatency {
    pub fn bucket(&self, bucket: usize) -> Option<&BucketLatency> {
        self.buckets.iter().find(|b| b.bucket == bucket)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub config: LatencyConfig,
    /// Shape used for the padded runs.
    pub shape: InferenceShape,
    pub models: Vec<ModelLatency>,
}

impl LatencyReport {
    pub fn find(&self, family: ModelFamily, padded: bool) -> Option<&ModelLatency> {
        self.models.iter().find(|m| m.family == family && m.padded == padded)
    }

    /// One aligned table per padding mode: mean ms, p95 ms and mean steps
    /// per bucket.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        for padded in [true, false] {
            let rows: Vec<&ModelLatency> = self.models.iter().filter(|m| m.padded == padded).collect();
            if rows.is_empty() {
                continue;
            }
            let width = rows.iter().map(|m| m.name.len()).max().unwrap_or(0).max(5);
            out.push_str(if padded { "padded inputs\n" } else { "unpadded inputs\n" });
            out.push_str(&format!("{:<width$} {:>9}", "model", "params"));
            for b in &self.config.buckets {
                out.push_str(&format!(" {:>24}", format!("len {b}: mean/p95 ms, steps")));
            }
            out.push('\n');
            for m in rows {
                out.push_str(&format!("{:<width$} {:>9}", m.name, m.params));
                for b in &m.buckets {
                    let cell = if b.samples == 0 {
                        "(empty)".to_string()
                    } else {
                        format!("{:.3}/{:.3}, {:.1}", b.mean_ms, b.p95_ms, b.mean_steps)
                    };
                    out.push_str(&format!(" {cell:>24}"));
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

/// Examples per bucket, nearest to the bucket length first, then by id.
pub fn bucket_examples<'a>(dataset: &'a Dataset, config: &LatencyConfig) -> Vec<(usize, Vec<(&'a Example, usize)>)> {
    let mut buckets: Vec<(usize, Vec<(&Example, usize)>)> = config.buckets.iter().map(|&b| (b, Vec::new())).collect();
    for e in dataset {
        let len = linearize_tree(e.tree()).len();
        let nearest = buckets.iter_mut().min_by_key(|(b, _)| b.abs_diff(len));
        if let Some((b, members)) = nearest {
            if b.abs_diff(len) <= config.bucket_width {
                members.push((e, len));
            }
        }
    }
    for (b, members) in &mut buckets {
        members.sort_by(|x, y| x.1.abs_diff(*b).cmp(&y.1.abs_diff(*b)).then_with(|| x.0.id.cmp(&y.0.id)));
        members.truncate(config.samples_per_bucket);
    }
    buckets
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times every model on every bucket. Models are `(name, parser)` pairs;
/// they are only read.
pub fn latency_benchmark<F: Scalar>(
    models: &[(String, AnyParser<F>)],
    dataset: &Dataset,
    config: &LatencyConfig,
) -> LatencyReport {
    let buckets = bucket_examples(dataset, config);
    let longest = buckets.iter().flat_map(|(_, m)| m.iter().map(|(e, _)| e.tree().len())).max().unwrap_or(1);
    let shape = InferenceShape { tokens: longest, slots: MAX_FERTILITY * longest };
    let mut results = Vec::new();
    for &padded in &config.padding {
        let pad = padded.then_some(&shape);
        for (name, model) in models {
            let buckets = buckets
                .iter()
                .map(|(bucket, members)| time_bucket(model, *bucket, members, pad, config))
                .collect();
            results.push(ModelLatency {
                name: name.clone(),
                family: model.family(),
                params: model.param_count(),
                padded,
                buckets,
            });
        }
    }
    LatencyReport { config: config.clone(), shape, models: results }
}

fn time_bucket<F: Scalar>(
    model: &AnyParser<F>,
    bucket: usize,
    members: &[(&Example, usize)],
    shape: Option<&InferenceShape>,
    config: &LatencyConfig,
) -> BucketLatency {
    let mut times = Vec::with_capacity(members.len() * config.repetitions);
    let mut steps = Vec::with_capacity(members.len());
    let mut equal = !members.is_empty();
    for (example, symbols) in members {
        let tokens = example.tokens();
        let run = || model.predict_forced(&tokens, *symbols, shape);
        for _ in 0..config.warmup {
            std::hint::black_box(run());
        }
        let mut taken = 0;
        for _ in 0..config.repetitions.max(1) {
            let start = Instant::now();
            let p = std::hint::black_box(run());
            times.push(start.elapsed().as_secs_f64() * 1e3);
            taken = p.steps;
        }
        equal &= taken == *symbols;
        steps.push(taken);
    }
    let n = members.len();
    let mean = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    BucketLatency {
        bucket,
        samples: n,
        insufficient: n < config.min_samples,
        mean_symbols: mean(&members.iter().map(|m| m.1 as f64).collect::<Vec<_>>()),
        mean_ms: mean(&times),
        p95_ms: percentile(&sorted, 0.95),
        mean_steps: mean(&steps.iter().map(|&s| s as f64).collect::<Vec<_>>()),
        min_steps: steps.iter().copied().min().unwrap_or(0),
        max_steps: steps.iter().copied().max().unwrap_or(0),
        steps_equal_symbols: equal,
    }
}

/// The feed-forward width that [`match_parameters`] adjusts for a family:
/// the slot encoder for X2Parser, the encoder for the layered model and the
/// decoder for the sequence-to-sequence model.
fn ff_dim(config: &mut ModelConfig) -> &mut usize {
    match config {
        ModelConfig::X2Parser(c) => &mut c.slot_encoder.ff_dim,
        ModelConfig::Nlm(c) => &mut c.encoder.ff_dim,
        ModelConfig::Seq2Seq(c) => &mut c.decoder_ff_dim,
    }
}

pub fn param_count(config: &ModelConfig, vocabs: &Vocabs) -> Result<usize, ModelError> {
    Ok(config.build::<f32>(vocabs.clone())?.param_count())
}

/// Returns `config` with one feed-forward width changed so its parameter
/// count is as close as possible to `target`. Count is monotone in the
/// width, so a bisection over widths suffices.
pub fn match_parameters(config: &ModelConfig, target: usize, vocabs: &Vocabs) -> Result<ModelConfig, ModelError> {
    let mut candidate = config.clone();
    let count = |c: &mut ModelConfig, w: usize| -> Result<usize, ModelError> {
        *ff_dim(c) = w;
        param_count(c, vocabs)
    };
    let (mut lo, mut hi) = (1usize, 1usize);
    while count(&mut candidate, hi)? < target {
        lo = hi;
        hi *= 2;
        if hi > 1 << 20 {
            break;
        }
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if count(&mut candidate, mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let below = count(&mut candidate, lo)?;
    let above = count(&mut candidate, hi)?;
    *ff_dim(&mut candidate) = if target.abs_diff(below) <= target.abs_diff(above) { lo } else { hi };
    Ok(candidate)
}
