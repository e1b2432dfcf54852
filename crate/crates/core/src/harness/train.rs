use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, HarnessError};
use crate::corpus::Dataset;
use crate::model::Parser;
use crate::neural::{Adam, AdamConfig, Module, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// The last batch of an epoch may be shorter.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// One run per seed; the seed drives shuffling and dropout.
    pub seeds: Vec<u64>,
    /// Stop after this many epochs without an improvement of evaluation EM.
    pub patience: Option<usize>,
    /// Stop as soon as evaluation EM reaches this value.
    pub stop_at_em: Option<f64>,
    /// Rescale the gradient to at most this global L2 norm.
    pub clip_norm: Option<f64>,
    /// Evaluate every this many epochs (and after the last one).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            seeds: vec![0, 1, 2],
            patience: None,
            stop_at_em: None,
            clip_norm: None,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    /// Settings for small models trained from scratch on CPU.
    pub fn desk() -> Self {
        Self { learning_rate: 1e-3, clip_norm: Some(5.0), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(HarnessError::InvalidConfig("batch size and eval interval must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HarnessError::InvalidConfig("learning rate must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::InvalidConfig("at least one seed is required"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, beta1: self.beta1, beta2: self.beta2, ..AdamConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean total loss over the epoch's examples.
    pub loss: f64,
    pub eval_em: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
    pub best_em: Option<f64>,
    pub optimizer_steps: u64,
}

/// Mini-batch Adam on `data`. With `eval`, the parameters of the epoch with
/// the best evaluation EM are restored at the end; otherwise the last ones
/// are kept.
pub fn train<F, P>(
    model: &mut P,
    data: &Dataset,
    eval: Option<&Dataset>,
    config: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport, HarnessError>
where
    F: Scalar,
    P: Parser<F> + Clone,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(config.adam());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, P)> = None;
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            model.zero_grad();
            for &i in batch {
                let example = &data.examples[i];
                let parts = model.accumulate(example, Some(&mut rng))?;
                if !parts.total.is_finite() {
                    return Err(HarnessError::NonFiniteLoss { epoch, id: example.id.to_string() });
                }
                total += parts.total;
            }
            model.scale_grad(F::from_f64(1.0 / batch.len() as f64));
            if let Some(max) = config.clip_norm {
                clip(model, max);
            }
            adam.step(model).map_err(crate::model::ModelError::from)?;
        }
        let due = epoch % config.eval_every == 0 || epoch == config.epochs;
        let eval_em = match eval {
            Some(d) if due => Some(evaluate(model, d, None).exact_match),
            _ => None,
        };
        let entry = EpochLog { epoch, loss: if data.is_empty() { 0.0 } else { total / data.len() as f64 }, eval_em };
        on_epoch(&entry);
        log.push(entry);

        if let Some(em) = eval_em {
            if best.as_ref().map_or(true, |(b, _, _)| em > *b) {
                best = Some((em, epoch, model.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
            if config.stop_at_em.is_some_and(|t| em >= t) || config.patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }

    let last = log.last().map_or(0, |e| e.epoch);
    let (best_epoch, best_em) = match best {
        Some((em, epoch, kept)) => {
            *model = kept;
            (epoch, Some(em))
        }
        None => (last, None),
    };
    Ok(TrainReport { seed, log, best_epoch, best_em, optimizer_steps: adam.steps_taken() })
}

fn clip<F: Scalar, M: Module<F> + ?Sized>(model: &mut M, max: f64) {
    let mut sq = 0.0;
    model.visit(&mut |p| sq += p.grad.data().iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>());
    let norm = num_traits::Float::sqrt(sq);
    if norm > max {
        model.scale_grad(F::from_f64(max / norm));
    }
}
