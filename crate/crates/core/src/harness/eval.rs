use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example};
use crate::decomposer::{fertility_of, frames_equal, is_nested, DecomposedFrame};
use crate::model::{InferenceShape, Parser};
use crate::neural::Scalar;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub count: usize,
    pub correct: usize,
    pub exact_match: f64,
}

impl DomainScore {
    fn add(&mut self, hit: bool) {
        self.count += 1;
        self.correct += usize::from(hit);
    }

    fn finish(&mut self) {
        self.exact_match = ratio(self.correct, self.count);
    }
}

/// Exact match overall, on the nested/non-nested partition of the gold
/// trees, and per domain. Empty partitions score 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub exact_match: f64,
    pub nested: DomainScore,
    pub non_nested: DomainScore,
    pub per_domain: BTreeMap<String, DomainScore>,
    /// Predictions that could not be read as a frame.
    pub failures: usize,
    /// Share of gold tokens whose predicted slot stack has the gold length.
    pub fertility_accuracy: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Scores one prediction per example, in dataset order. `None` stands for a
/// failed decode and counts as wrong.
pub fn evaluate_predictions<I>(dataset: &Dataset, predictions: I) -> EvalReport
where
    I: IntoIterator<Item = Option<DecomposedFrame>>,
{
    let mut report = EvalReport::default();
    let mut tokens = 0;
    let mut fertile = 0;
    let mut predictions = predictions.into_iter();
    for example in dataset {
        let predicted = predictions.next().flatten();
        score(&mut report, example, predicted.as_ref(), &mut tokens, &mut fertile);
    }
    report.exact_match = ratio(report.correct, report.total);
    report.fertility_accuracy = ratio(fertile, tokens);
    report.nested.finish();
    report.non_nested.finish();
    report.per_domain.values_mut().for_each(DomainScore::finish);
    report
}

fn score(
    report: &mut EvalReport,
    example: &Example,
    predicted: Option<&DecomposedFrame>,
    tokens: &mut usize,
    fertile: &mut usize,
) {
    let gold = example.frame();
    let hit = predicted.is_some_and(|p| frames_equal(p, gold));
    report.total += 1;
    report.correct += usize::from(hit);
    match predicted {
        None => report.failures += 1,
        Some(p) => {
            let pf = fertility_of(p);
            *fertile += fertility_of(gold).iter().zip(&pf).filter(|(a, b)| a == b).count();
        }
    }
    *tokens += gold.slot_stacks.len();
    if is_nested(example.tree()) {
        report.nested.add(hit);
    } else {
        report.non_nested.add(hit);
    }
    report.per_domain.entry(example.domain.clone()).or_default().add(hit);
}

/// Decodes every example with `model` and scores the result.
pub fn evaluate<F: Scalar, P: Parser<F> + ?Sized>(
    model: &P,
    dataset: &Dataset,
    shape: Option<&InferenceShape>,
) -> EvalReport {
    evaluate_predictions(dataset, dataset.iter().map(|e| model.predict(&e.tokens(), shape).frame))
}
