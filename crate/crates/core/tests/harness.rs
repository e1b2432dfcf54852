use x2parser_core::corpus::{generate_synthetic, Dataset, GeneratorConfig, Vocabs};
use x2parser_core::decomposer::{DecomposedFrame, IntentTag, SlotStack, SlotTag};
use x2parser_core::harness::*;
use x2parser_core::model::ModelFamily;

fn corpus(domains: &[&str], per_domain: usize) -> Dataset {
    generate_synthetic(&GeneratorConfig {
        seed: 11,
        domains: domains.iter().map(|d| d.to_string()).collect(),
        examples_per_domain: per_domain,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

fn flip(frame: &DecomposedFrame) -> DecomposedFrame {
    let mut f = frame.clone();
    f.slot_stacks[0] = match f.slot_stacks[0].tags() {
        [SlotTag::O] => SlotStack(vec![SlotTag::B("FLIPPED".into())]),
        _ => SlotStack::outside(),
    };
    f
}

#[test]
fn gold_frames_score_exactly_one() {
    let data = corpus(&["event", "news"], 150);
    let report = evaluate_predictions(&data, data.iter().map(|e| Some(e.frame().clone())));
    assert_eq!(report.exact_match, 1.0);
    assert_eq!(report.nested.exact_match, 1.0);
    assert_eq!(report.non_nested.exact_match, 1.0);
    assert_eq!(report.fertility_accuracy, 1.0);
    assert_eq!(report.nested.count + report.non_nested.count, report.total);
    assert_eq!(report.per_domain.len(), 2);
    assert!(report.per_domain.values().all(|d| d.exact_match == 1.0));
}

#[test]
fn one_mutated_tag_costs_exactly_one_example() {
    let data = corpus(&["event"], 80);
    let n = data.len();
    for victim in [0, n / 2, n - 1] {
        let preds = data.iter().enumerate().map(|(i, e)| {
            let gold = e.frame().clone();
            Some(if i == victim { flip(&gold) } else { gold })
        });
        let report = evaluate_predictions(&data, preds);
        assert_eq!(report.correct, n - 1);
        assert_eq!(report.exact_match, (n - 1) as f64 / n as f64);
    }
    let coarse = data.iter().enumerate().map(|(i, e)| {
        let mut f = e.frame().clone();
        if i == 3 {
            f.coarse_intent.push('X');
        }
        Some(f)
    });
    assert_eq!(evaluate_predictions(&data, coarse).correct, n - 1);
    let intent = data.iter().enumerate().map(|(i, e)| {
        let mut f = e.frame().clone();
        if i == 5 {
            f.intent_tags[0] = IntentTag::B { label: "FLIPPED".into(), nested: false };
        }
        Some(f)
    });
    assert_eq!(evaluate_predictions(&data, intent).correct, n - 1);
}

#[test]
fn failed_decodes_count_as_errors() {
    let data = corpus(&["event"], 20);
    let report = evaluate_predictions(&data, data.iter().enumerate().map(|(i, e)| (i % 2 == 0).then(|| e.frame().clone())));
    assert_eq!(report.failures, 10);
    assert_eq!(report.correct, 10);
}

/// Echoes the gold frames; exercises the protocol plumbing without training.
struct GoldEcho;

impl Learner for GoldEcho {
    type Model = ();

    fn name(&self) -> String {
        "oracle".into()
    }

    fn pretrain(&self, _: &Dataset, _: &Vocabs, _: u64) -> Result<(), HarnessError> {
        Ok(())
    }

    fn finetune(&self, _: &mut (), _: &Dataset, _: u64) -> Result<(), HarnessError> {
        Ok(())
    }

    fn evaluate(&self, _: &(), test: &Dataset) -> EvalReport {
        evaluate_predictions(test, test.iter().map(|e| Some(e.frame().clone())))
    }
}

#[test]
fn oracle_scores_one_at_every_fraction() {
    let data = corpus(&["event", "news", "recipes"], 200);
    let config = FewShotConfig::default();
    assert_eq!(config.fractions, vec![0.01, 0.03, 0.06, 0.10]);
    let report = run_few_shot_protocol(&data, "news", &[GoldEcho], &config, |_| {}).unwrap();
    assert!(report.is_complete());
    assert_eq!(report.rows[0].exact_match, vec![1.0; 4]);
    assert!(report.split_checks.iter().all(SplitCheck::passed));
    let sizes: Vec<usize> = report.split_checks.iter().filter(|c| c.seed == 0).map(|c| c.finetune).collect();
    assert_eq!(sizes, vec![1, 3, 6, 10]);
    let table = report.render_table();
    assert!(table.contains("oracle") && table.contains("10%"));
}

#[test]
fn real_families_run_through_the_protocol() {
    let data = corpus(&["event", "news"], 40);
    let tc = TrainConfig { epochs: 1, batch_size: 16, ..TrainConfig::desk() };
    let learners: Vec<ParserLearner<f32>> = ModelFamily::ALL
        .into_iter()
        .map(|f| ParserLearner::new(ModelConfig::desk(f), tc.clone(), tc.clone(), data.clone()))
        .collect();
    let config = FewShotConfig { fractions: vec![0.1, 0.5], seeds: vec![0] };
    let report = run_few_shot_protocol(&data, "event", &learners, &config, |_| {}).unwrap();
    assert!(report.is_complete());
    assert_eq!(report.rows.len(), 3);
    assert!(report.cells.iter().all(|c| (0.0..=1.0).contains(&c.exact_match)));
}

#[test]
fn training_rejects_bad_settings_and_handles_short_batches() {
    let data = corpus(&["event"], 5);
    let mut config = ModelConfig::desk(ModelFamily::X2Parser);
    config.fit_lengths(&data);
    let mut model: AnyParser<f32> = config.build(Vocabs::build(&data)).unwrap();
    let bad = TrainConfig { batch_size: 0, ..TrainConfig::desk() };
    assert!(train(&mut model, &data, None, &bad, 0, |_| {}).is_err());
    let big = TrainConfig { epochs: 2, batch_size: 64, ..TrainConfig::desk() };
    let report = train(&mut model, &data, None, &big, 0, |_| {}).unwrap();
    assert_eq!(report.optimizer_steps, 2);
    let none = TrainConfig { epochs: 0, ..TrainConfig::desk() };
    let before = model.clone();
    let report = train(&mut model, &data, Some(&data), &none, 0, |_| {}).unwrap();
    assert!(report.log.is_empty());
    assert_eq!(model, before);
}

#[test]
fn model_configs_serialize_with_a_family_tag() {
    for family in ModelFamily::ALL {
        let config = ModelConfig::desk(family);
        let json = serde_json::to_string(&config).unwrap();
        assert!(json.contains(&format!("\"family\":\"{family}\"")));
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
    }
}
