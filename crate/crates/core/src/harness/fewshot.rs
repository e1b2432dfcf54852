use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{evaluate, train, EvalReport, HarnessError, ModelConfig, TrainConfig};
use crate::corpus::{few_shot_split, Dataset, FewShotSplit, Vocabs, FEW_SHOT_FRACTIONS};
use crate::neural::Scalar;

/// One system taken through pre-training, fine-tuning and testing.
pub trait Learner {
    type Model: Clone;

    fn name(&self) -> String;

    fn pretrain(&self, source: &Dataset, vocabs: &Vocabs, seed: u64) -> Result<Self::Model, HarnessError>;

    fn finetune(&self, model: &mut Self::Model, data: &Dataset, seed: u64) -> Result<(), HarnessError>;

    fn evaluate(&self, model: &Self::Model, test: &Dataset) -> EvalReport;
}

/// A parser family trained with the regular loop in both phases.
#[derive(Debug, Clone, PartialEq)]
pub struct ParserLearner<F> {
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Every example the model will ever see; used only to size the length
    /// limits.
    pub lengths_from: Dataset,
    _precision: core::marker::PhantomData<F>,
}

impl<F> ParserLearner<F> {
    pub fn new(model: ModelConfig, pretrain: TrainConfig, finetune: TrainConfig, lengths_from: Dataset) -> Self {
        Self { model, pretrain, finetune, lengths_from, _precision: core::marker::PhantomData }
    }
}

impl<F: Scalar> Learner for ParserLearner<F> {
    type Model = super::AnyParser<F>;

    fn name(&self) -> String {
        self.model.family().to_string()
    }

    fn pretrain(&self, source: &Dataset, vocabs: &Vocabs, seed: u64) -> Result<Self::Model, HarnessError> {
        let mut config = self.model.clone();
        config.fit_lengths(&self.lengths_from);
        config.encoder_mut().seed = seed;
        let mut model = config.build(vocabs.clone())?;
        train(&mut model, source, None, &self.pretrain, seed, |_| {})?;
        Ok(model)
    }

    fn finetune(&self, model: &mut Self::Model, data: &Dataset, seed: u64) -> Result<(), HarnessError> {
        train(model, data, None, &self.finetune, seed, |_| {})?;
        Ok(())
    }

    fn evaluate(&self, model: &Self::Model, test: &Dataset) -> EvalReport {
        evaluate(model, test, None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FewShotConfig {
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self { fractions: FEW_SHOT_FRACTIONS.to_vec(), seeds: alloc::vec![0, 1, 2] }
    }
}

/// Outcome of one (model, fraction, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotCell {
    pub model: String,
    pub fraction: f64,
    pub seed: u64,
    pub finetune_size: usize,
    pub test_size: usize,
    pub exact_match: f64,
    pub nested_em: f64,
    pub non_nested_em: f64,
}

/// Mean EM over seeds, one entry per fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotRow {
    pub model: String,
    pub exact_match: Vec<f64>,
}

/// Split properties verified while the protocol runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCheck {
    pub fraction: f64,
    pub seed: u64,
    pub source: usize,
    pub finetune: usize,
    pub unused: usize,
    pub test: usize,
    /// No example id appears in two partitions.
    pub disjoint: bool,
    /// The partitions together hold every example of the corpus.
    pub exhaustive: bool,
    /// Splitting again with the same seed gives the same partitions.
    pub reproducible: bool,
}

impl SplitCheck {
    pub fn passed(&self) -> bool {
        self.disjoint && self.exhaustive && self.reproducible
    }
}

/// Models as rows, fine-tuning fractions as columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotReport {
    pub target_domain: String,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub rows: Vec<FewShotRow>,
    pub cells: Vec<FewShotCell>,
    pub split_checks: Vec<SplitCheck>,
}

impl FewShotReport {
    /// Every model has a value for every fraction and seed.
    pub fn is_complete(&self) -> bool {
        let models = self.rows.len();
        self.rows.iter().all(|r| r.exact_match.len() == self.fractions.len())
            && self.cells.len() == models * self.fractions.len() * self.seeds.len()
    }

    pub fn row(&self, model: &str) -> Option<&FewShotRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// Aligned text table of EM percentages.
    pub fn render_table(&self) -> String {
        let headers: Vec<String> = self.fractions.iter().map(|f| format!("{:.0}%", f * 100.0)).collect();
        let width = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
        let mut out = format!("target domain: {}\n{:<width$}", self.target_domain, "model");
        for h in &headers {
            out.push_str(&format!(" {h:>7}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{:<width$}", row.model));
            for em in &row.exact_match {
                out.push_str(&format!(" {:>7.2}", em * 100.0));
            }
            out.push('\n');
        }
        out
    }
}

fn check_split(dataset: &Dataset, split: &FewShotSplit, again: &FewShotSplit, fraction: f64, seed: u64) -> SplitCheck {
    let parts = [&split.source_train, &split.target_finetune, &split.target_unused, &split.target_test];
    let mut seen = BTreeSet::new();
    let mut disjoint = true;
    for part in parts {
        for e in part {
            disjoint &= seen.insert(e.id.as_str());
        }
    }
    let exhaustive = seen.len() == dataset.len() && dataset.iter().all(|e| seen.contains(e.id.as_str()));
    SplitCheck {
        fraction,
        seed,
        source: split.source_train.len(),
        finetune: split.target_finetune.len(),
        unused: split.target_unused.len(),
        test: split.target_test.len(),
        disjoint,
        exhaustive,
        reproducible: split == again,
    }
}

/// Trains each learner on the source domains, fine-tunes a copy on every
/// fraction of the target pool and tests on the held-out target examples.
///
/// Vocabularies come from the source data plus the whole target pool, so
/// they are the same for every fraction.
pub fn run_few_shot_protocol<L: Learner>(
    dataset: &Dataset,
    target_domain: &str,
    learners: &[L],
    config: &FewShotConfig,
    mut progress: impl FnMut(&str),
) -> Result<FewShotReport, HarnessError> {
    if config.fractions.is_empty() || config.seeds.is_empty() {
        return Err(HarnessError::InvalidConfig("few-shot runs need fractions and seeds"));
    }
    let mut cells = Vec::new();
    let mut split_checks = Vec::new();
    for &seed in &config.seeds {
        let mut splits = Vec::with_capacity(config.fractions.len());
        for &fraction in &config.fractions {
            let split = few_shot_split(dataset, target_domain, fraction, seed)?;
            let again = few_shot_split(dataset, target_domain, fraction, seed)?;
            split_checks.push(check_split(dataset, &split, &again, fraction, seed));
            splits.push(split);
        }
        let first = &splits[0];
        let seen: Dataset = first
            .source_train
            .iter()
            .chain(&first.target_finetune)
            .chain(&first.target_unused)
            .cloned()
            .collect();
        let vocabs = Vocabs::build(&seen);
        for learner in learners {
            let name = learner.name();
            progress(&format!("{name} seed {seed}: pre-training on {} source examples", first.source_train.len()));
            let base = learner.pretrain(&first.source_train, &vocabs, seed)?;
            for (split, &fraction) in splits.iter().zip(&config.fractions) {
                let mut model = base.clone();
                learner.finetune(&mut model, &split.target_finetune, seed)?;
                let report = learner.evaluate(&model, &split.target_test);
                progress(&format!(
                    "{name} seed {seed} fraction {fraction}: {} fine-tune examples, EM {:.4}",
                    split.target_finetune.len(),
                    report.exact_match
                ));
                cells.push(FewShotCell {
                    model: name.clone(),
                    fraction,
                    seed,
                    finetune_size: split.target_finetune.len(),
                    test_size: split.target_test.len(),
                    exact_match: report.exact_match,
                    nested_em: report.nested.exact_match,
                    non_nested_em: report.non_nested.exact_match,
                });
            }
        }
    }
    let rows = learners
        .iter()
        .map(|l| {
            let name = l.name();
            let exact_match = config
                .fractions
                .iter()
                .map(|&f| {
                    let ems: Vec<f64> =
                        cells.iter().filter(|c| c.model == name && c.fraction == f).map(|c| c.exact_match).collect();
                    ems.iter().sum::<f64>() / ems.len().max(1) as f64
                })
                .collect();
            FewShotRow { model: name, exact_match }
        })
        .collect();
    Ok(FewShotReport {
        target_domain: target_domain.to_string(),
        fractions: config.fractions.clone(),
        seeds: config.seeds.clone(),
        rows,
        cells,
        split_checks,
    })
}
