use x2parser_core::baselines::{linearize_tree, Nlm, NlmConfig, Seq2Seq, Seq2SeqConfig};
use x2parser_core::corpus::{generate_synthetic, Dataset, Example, GeneratorConfig, Vocabs};
use x2parser_core::decomposer::{fertility_of, flatten_slot_targets, is_nested};
use x2parser_core::harness::{evaluate, train, AnyParser, ModelConfig, TrainConfig};
use x2parser_core::model::*;
use x2parser_core::neural::*;
use x2parser_core::treebank::parse_top;

fn example(text: &str) -> Example {
    Example::new("ex", "en", "test", parse_top(text).unwrap()).unwrap()
}

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig { vocab_size: 0, dim: 8, heads: 2, layers: 1, ff_dim: 16, max_len: 8, dropout: 0.0, seed: 0 }
}

fn tiny_x2parser<F: Scalar>(vocabs: &Vocabs, seed: u64) -> X2Parser<F> {
    let config = X2ParserConfig {
        encoder: EncoderConfig { seed, ..tiny_encoder() },
        slot_encoder: SlotEncoderConfig { dim: 12, heads: 2, layers: 1, ff_dim: 8 },
        ..X2ParserConfig::default()
    };
    X2Parser::new(config, vocabs.clone()).unwrap()
}

fn tiny_nlm<F: Scalar>(vocabs: &Vocabs, seed: u64) -> Nlm<F> {
    let config = NlmConfig { encoder: EncoderConfig { seed, ..tiny_encoder() }, heads: 2, ff_dim: 8, ..NlmConfig::default() };
    Nlm::new(config, vocabs.clone()).unwrap()
}

fn tiny_seq2seq<F: Scalar>(vocabs: &Vocabs, seed: u64) -> Seq2Seq<F> {
    let config = Seq2SeqConfig {
        encoder: EncoderConfig { seed, ..tiny_encoder() },
        decoder_layers: 1,
        decoder_heads: 2,
        decoder_ff_dim: 8,
        max_decode_len: 12,
    };
    Seq2Seq::new(config, vocabs.clone()).unwrap()
}

const NESTED3: &str = "[IN:A x [SL:B y [SL:C z ] ] ]";

fn gold() -> (Example, Vocabs) {
    let ex = example(NESTED3);
    let vocabs = Vocabs::build(&Dataset::new(vec![ex.clone()]));
    (ex, vocabs)
}

fn unwrap<T>(r: Result<T, ModelError>) -> Result<T, NeuralError> {
    r.map_err(|e| match e {
        ModelError::Neural(n) => n,
        other => panic!("{other}"),
    })
}

fn check_double<P: Parser<f64> + Clone>(mut model: P, ex: &Example) -> f64 {
    let report = grad_check(
        &mut model,
        |m| {
            m.zero_grad();
            unwrap(m.accumulate(ex, None)).map(|p| p.total)
        },
        |m| unwrap(m.loss(ex)).map(|p| p.total),
        1e-6,
        1e-3,
        16,
        0,
    )
    .unwrap();
    report.max_rel_error
}

fn check_single<P: Parser<f32>, R: Parser<f64>>(mut model: P, mut reference: R, ex: &Example) -> f64 {
    let report = grad_check_mixed(
        &mut model,
        &mut reference,
        |m| {
            m.zero_grad();
            unwrap(m.accumulate(ex, None)).map(|p| p.total as f32)
        },
        |r| unwrap(r.loss(ex)).map(|p| p.total),
        1e-6,
        1e-3,
        16,
        0,
    )
    .unwrap();
    report.max_rel_error
}

#[test]
fn x2parser_full_loss_gradient_matches_finite_differences() {
    let (ex, vocabs) = gold();
    assert_eq!(ex.tree().len(), 3);
    for seed in 0..3 {
        let d = check_double(tiny_x2parser::<f64>(&vocabs, seed), &ex);
        let s = check_single(tiny_x2parser::<f32>(&vocabs, seed), tiny_x2parser::<f64>(&vocabs, seed), &ex);
        assert!(d < 1e-5, "seed {seed}: double precision error {d}");
        assert!(s < 1e-3, "seed {seed}: single precision error {s}");
    }
}

#[test]
fn baseline_losses_pass_gradient_checks() {
    let (ex, vocabs) = gold();
    let d = check_double(tiny_nlm::<f64>(&vocabs, 0), &ex);
    assert!(d < 1e-5, "layered model: {d}");
    let s = check_single(tiny_nlm::<f32>(&vocabs, 0), tiny_nlm::<f64>(&vocabs, 0), &ex);
    assert!(s < 1e-3, "layered model: {s}");
    let d = check_double(tiny_seq2seq::<f64>(&vocabs, 0), &ex);
    assert!(d < 1e-5, "seq2seq: {d}");
    let s = check_single(tiny_seq2seq::<f32>(&vocabs, 0), tiny_seq2seq::<f64>(&vocabs, 0), &ex);
    assert!(s < 1e-3, "seq2seq: {s}");
}

#[test]
fn copy_hiddens_follows_its_definition() {
    let h = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(copy_hiddens(&h, &[1, 1]).unwrap(), h);
    let c = copy_hiddens(&h, &[2, 1]).unwrap();
    assert_eq!(c.data(), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0]);
    assert!(copy_hiddens(&h, &[0, 1]).is_err());
    assert!(copy_hiddens(&h, &[4, 1]).is_err());
    assert!(copy_hiddens(&h, &[1]).is_err());
}

fn corpus(n: usize, seed: u64) -> Dataset {
    let config = GeneratorConfig {
        seed,
        domains: vec!["event".into()],
        examples_per_domain: n,
        ..GeneratorConfig::default()
    };
    generate_synthetic(&config).unwrap()
}

#[test]
fn output_shapes_follow_the_fertilities_used() {
    let data = corpus(60, 3);
    let vocabs = Vocabs::build(&data);
    let model = tiny_x2parser::<f32>(&vocabs, 0);
    let model = X2Parser::<f32>::new(
        X2ParserConfig { encoder: EncoderConfig { max_len: 64, ..model.config().encoder.clone() }, ..model.config().clone() },
        vocabs.clone(),
    )
    .unwrap();
    for ex in &data {
        let tokens = ex.tokens();
        let n = tokens.len();
        let fert = fertility_of(ex.frame());
        let out = model.forward(&tokens, Some(&fert)).unwrap();
        assert_eq!(out.coarse_logits.shape(), &[1, vocabs.coarse.len()]);
        assert_eq!(out.intent_logits.shape(), &[n, vocabs.intent_tags.len()]);
        assert_eq!(out.fertility_logits.shape(), &[n, 3]);
        assert_eq!(out.slot_logits.rows(), flatten_slot_targets(ex.frame()).len());
        let (h_cls, h) = model.encode(&tokens).unwrap();
        assert_eq!((h_cls.rows(), h.rows()), (1, n));
        let copied = copy_hiddens(&h, &fert).unwrap();
        assert_eq!(copied.rows(), fert.iter().sum::<usize>());
        assert_eq!(model.slot_filling(&copied).unwrap().rows(), copied.rows());
    }
}

#[test]
fn encoder_is_position_sensitive_and_deterministic() {
    let (_, vocabs) = gold();
    let a = tiny_x2parser::<f64>(&vocabs, 4);
    let b = tiny_x2parser::<f64>(&vocabs, 4);
    let (_, h1) = a.encode(&["x", "y", "z"]).unwrap();
    let (_, h2) = b.encode(&["x", "y", "z"]).unwrap();
    assert_eq!(h1, h2);
    let (_, h3) = a.encode(&["y", "x", "z"]).unwrap();
    assert_ne!(h1.row(0), h3.row(1));
}

#[test]
fn fixed_seed_gives_identical_loss_trajectories() {
    let data = corpus(40, 1);
    let vocabs = Vocabs::build(&data);
    let run = || {
        let mut config = ModelConfig::desk(ModelFamily::X2Parser);
        config.fit_lengths(&data);
        let mut model: AnyParser<f32> = config.build(vocabs.clone()).unwrap();
        let tc = TrainConfig { epochs: 10, batch_size: 4, ..TrainConfig::desk() };
        train(&mut model, &data, None, &tc, 7, |_| {}).unwrap().log
    };
    let first = run();
    assert_eq!(first.len(), 10);
    assert_eq!(first, run());
}

#[test]
fn sequential_steps_are_constant_for_non_autoregressive_models() {
    let data = corpus(200, 2);
    let vocabs = Vocabs::build(&data);
    for family in [ModelFamily::X2Parser, ModelFamily::Nlm] {
        let mut config = ModelConfig::desk(family);
        config.fit_lengths(&data);
        let model: AnyParser<f32> = config.build(vocabs.clone()).unwrap();
        let expected = if family == ModelFamily::X2Parser { 2 } else { 4 };
        for ex in &data {
            let p = model.predict(&ex.tokens(), None);
            assert_eq!(p.steps, expected, "{family}");
            let frame = p.frame.expect("non-autoregressive decoding is total");
            assert_eq!(frame.len(), ex.tree().len());
        }
    }
}

#[test]
fn untrained_seq2seq_never_panics_and_counts_its_steps() {
    let data = corpus(60, 5);
    let vocabs = Vocabs::build(&data);
    let mut config = ModelConfig::desk(ModelFamily::Seq2Seq);
    config.fit_lengths(&data);
    let ModelConfig::Seq2Seq(c) = &config else { unreachable!() };
    let limit = c.max_decode_len;
    let model: AnyParser<f32> = config.build(vocabs).unwrap();
    for ex in data.iter().take(20) {
        let p = model.predict(&ex.tokens(), None);
        assert!(p.steps >= 1 && p.steps <= limit + 1);
        if p.frame.is_none() {
            assert!(p.failure.is_some());
        }
        for len in [1, 10, 25] {
            assert_eq!(model.predict_forced(&ex.tokens(), len, None).steps, len);
        }
    }
}

#[test]
fn padding_to_a_fixed_shape_does_not_change_predictions() {
    let data = corpus(30, 6);
    let vocabs = Vocabs::build(&data);
    let longest = data.iter().map(|e| e.tree().len()).max().unwrap();
    let shape = InferenceShape { tokens: longest + 3, slots: 3 * (longest + 3) };
    for family in ModelFamily::ALL {
        let mut config = ModelConfig::desk(family);
        config.fit_lengths(&data);
        config.encoder_mut().max_len = longest + 8;
        let model: AnyParser<f64> = config.build(vocabs.clone()).unwrap();
        for ex in &data {
            let a = model.predict(&ex.tokens(), None);
            let b = model.predict(&ex.tokens(), Some(&shape));
            assert_eq!(a.frame, b.frame, "{family} on {}", ex.id);
            assert_eq!(a.steps, b.steps);
        }
    }
}

fn overfit(family: ModelFamily, data: &Dataset, epochs: usize) -> AnyParser<f32> {
    let vocabs = Vocabs::build(data);
    let mut config = ModelConfig::desk(family);
    config.fit_lengths(data);
    let mut model: AnyParser<f32> = config.build(vocabs).unwrap();
    let tc = TrainConfig { epochs, batch_size: 4, stop_at_em: Some(1.0), ..TrainConfig::desk() };
    train(&mut model, data, Some(data), &tc, 0, |_| {}).unwrap();
    model
}

#[test]
fn every_family_overfits_a_small_nested_set() {
    let data: Dataset = corpus(200, 8).iter().filter(|e| is_nested(e.tree())).take(8).cloned().collect();
    assert_eq!(data.len(), 8);
    for family in ModelFamily::ALL {
        let mut config = ModelConfig::desk(family);
        config.fit_lengths(&data);
        let untrained: AnyParser<f32> = config.build(Vocabs::build(&data)).unwrap();
        let model = overfit(family, &data, 200);
        let report = evaluate(&model, &data, None);
        assert_eq!(report.exact_match, 1.0, "{family}");
        for ex in &data {
            let p = model.predict(&ex.tokens(), None);
            match family {
                ModelFamily::Seq2Seq => {
                    assert_eq!(p.tree.as_ref(), Some(ex.tree()));
                    assert_eq!(p.steps, linearize_tree(ex.tree()).len() + 1);
                }
                _ => assert_eq!(fertility_of(p.frame.as_ref().unwrap()), fertility_of(ex.frame())),
            }
            assert!(model.loss(ex).unwrap().total < untrained.loss(ex).unwrap().total);
        }
    }
}

#[test]
fn x2parser_heads_reproduce_gold_after_overfitting() {
    let data: Dataset = corpus(100, 9).iter().take(6).cloned().collect();
    let AnyParser::X2Parser(model) = overfit(ModelFamily::X2Parser, &data, 200) else { unreachable!() };
    for ex in &data {
        assert_eq!(&model.greedy_decode(&ex.tokens()), ex.frame());
        let (h_cls, h) = model.encode(&ex.tokens()).unwrap();
        let fert: Vec<usize> = model.predict_fertility(&h).unwrap().argmax_rows().iter().map(|k| k + 1).collect();
        assert_eq!(fert, fertility_of(ex.frame()));
        let coarse = model.coarse_intent(&h_cls).unwrap().argmax_rows()[0];
        assert_eq!(model.vocabs().coarse.symbol(coarse), ex.frame().coarse_intent);
        let intents = model.fine_intent(&h).unwrap().argmax_rows();
        let gold: Vec<String> = ex.frame().intent_tags.iter().map(ToString::to_string).collect();
        let got: Vec<&str> = intents.iter().map(|&i| model.vocabs().intent_tags.symbol(i)).collect();
        assert_eq!(got, gold);
    }
}
