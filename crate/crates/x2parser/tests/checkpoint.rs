use x2parser::checkpoint::{load, save, Checkpoint, CheckpointError};
use x2parser_core::corpus::{generate_synthetic, GeneratorConfig, Vocabs};
use x2parser_core::harness::{train, AnyParser, ModelConfig, TrainConfig};
use x2parser_core::model::{ModelFamily, Parser};
use x2parser_core::neural::Module;

/// Every parameter's name, shape and bit pattern. Gradients are not saved.
fn values(model: &AnyParser<f32>) -> Vec<(String, Vec<usize>, Vec<u32>)> {
    let mut out = Vec::new();
    model.visit(&mut |p| out.push((p.name.clone(), p.value.shape().to_vec(), p.value.data().iter().map(|v| v.to_bits()).collect())));
    out
}

fn trained(family: ModelFamily) -> (AnyParser<f32>, x2parser_core::corpus::Dataset) {
    let data = generate_synthetic(&GeneratorConfig {
        seed: 2,
        domains: vec!["event".into()],
        examples_per_domain: 24,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let mut config = ModelConfig::desk(family);
    config.fit_lengths(&data);
    let mut model = config.build(Vocabs::build(&data)).unwrap();
    let tc = TrainConfig { epochs: 1, batch_size: 8, ..TrainConfig::desk() };
    train(&mut model, &data, None, &tc, 0, |_| {}).unwrap();
    (model, data)
}

#[test]
fn saved_models_reload_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    for family in ModelFamily::ALL {
        let (model, data) = trained(family);
        let path = dir.path().join(format!("{family}.json"));
        save(&model, &path).unwrap();
        let back: AnyParser<f32> = load(&path).unwrap();
        assert!(values(&back) == values(&model), "{family}");
        for e in data.iter().take(5) {
            let a = model.loss(e).unwrap();
            let b = back.loss(e).unwrap();
            assert_eq!(a.total.to_bits(), b.total.to_bits());
            assert_eq!(model.predict(&e.tokens(), None), back.predict(&e.tokens(), None));
        }
    }
}

#[test]
fn tampered_checkpoints_are_rejected() {
    let (model, _) = trained(ModelFamily::X2Parser);
    let good = Checkpoint::from_model(&model);

    let mut vocab = good.clone();
    vocab.vocabs.coarse = x2parser_core::corpus::Vocab::from_symbols(vec!["OTHER".into()]);
    assert!(matches!(vocab.into_model::<f32>(), Err(CheckpointError::VocabHash { .. })));

    let mut shape = good.clone();
    shape.params[0].shape.push(1);
    assert!(matches!(shape.into_model::<f32>(), Err(CheckpointError::Params { .. })));

    let mut missing = good.clone();
    missing.params.pop();
    assert!(matches!(missing.into_model::<f32>(), Err(CheckpointError::Params { .. })));

    let mut version = good;
    version.format_version = 99;
    assert!(matches!(version.into_model::<f32>(), Err(CheckpointError::Version(99))));
}
