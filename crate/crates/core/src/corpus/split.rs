use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, Dataset, Example, Split};

/// Target-domain fine-tuning fractions used for few-shot curves.
pub const FEW_SHOT_FRACTIONS: [f64; 4] = [0.01, 0.03, 0.06, 0.10];

/// Salt separating the test/pool draw from the fine-tune draw so the test
/// set does not depend on the fraction.
const TEST_SALT: u64 = 0x7465_7374_5f73_706c;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotSplit {
    pub source_train: Dataset,
    pub target_finetune: Dataset,
    pub target_test: Dataset,
    /// Target training-pool examples not drawn for fine-tuning.
    pub target_unused: Dataset,
}

impl FewShotSplit {
    /// Size of the target training pool the fine-tune set was drawn from.
    pub fn pool_len(&self) -> usize {
        self.target_finetune.len() + self.target_unused.len()
    }
}

/// Splits `dataset` for cross-domain few-shot adaptation to `target`.
///
/// Source training data is every non-target example. The target domain is
/// divided into a training pool and a test set: by the examples' split
/// tags when any target example carries one (train tags form the pool,
/// test tags the test set), otherwise by a seeded half/half draw that
/// depends only on `seed`. The fine-tune set is a seeded sample of
/// `max(1, floor(fraction * pool))` pool examples.
pub fn few_shot_split(
    dataset: &Dataset,
    target: &str,
    fraction: f64,
    seed: u64,
) -> Result<FewShotSplit, CorpusError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::InvalidFraction(fraction));
    }
    if !dataset.iter().any(|e| e.domain == target) {
        return Err(CorpusError::UnknownDomain(target.to_string()));
    }
    let (target_examples, source): (Vec<&Example>, Vec<&Example>) =
        dataset.iter().partition(|e| e.domain == target);

    let tagged = target_examples.iter().any(|e| e.split.is_some());
    let (mut pool, test, mut unused): (Vec<&Example>, Vec<&Example>, Vec<&Example>) = if tagged {
        let mut pool = Vec::new();
        let mut test = Vec::new();
        let mut rest = Vec::new();
        for e in target_examples {
            match e.split {
                Some(Split::Train) => pool.push(e),
                Some(Split::Test) => test.push(e),
                _ => rest.push(e),
            }
        }
        (pool, test, rest)
    } else {
        let mut shuffled = target_examples;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ TEST_SALT));
        let test = shuffled.split_off(shuffled.len() / 2);
        (shuffled, test, Vec::new())
    };
    if pool.is_empty() || test.is_empty() {
        return Err(CorpusError::EmptyTarget(target.to_string()));
    }

    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((fraction * pool.len() as f64 + 1e-9) as usize).clamp(1, pool.len());
    unused.extend(pool.split_off(k));

    let collect = |v: Vec<&Example>| v.into_iter().cloned().collect::<Dataset>();
    Ok(FewShotSplit {
        source_train: collect(source),
        target_finetune: collect(pool),
        target_test: collect(test),
        target_unused: collect(unused),
    })
}
