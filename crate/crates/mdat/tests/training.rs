use mdat::config::ModelSettings;
use mdat::dataio::{self, Dataset, SynthSpec};
use mdat_core::train::{self, TrainConfig};
use mdat_core::ModelKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(dir: &std::path::Path, per_class: usize) -> Dataset {
    let spec = SynthSpec { per_class, ..Default::default() };
    let (samples, vocab) = dataio::synth_dataset(&spec, dir).unwrap();
    Dataset::from_samples("synthetic".into(), vocab, samples, spec.seq_len).unwrap()
}

#[test]
fn loss_falls_over_first_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 10);
    let cfg = TrainConfig { lr: 1e-3, epochs: 10, dropout: false, ..Default::default() };
    for kind in [ModelKind::Mdat, ModelKind::Baseline] {
        let model = ModelSettings::tiny().build(kind, data.dims).unwrap();
        let trained = train::train::<f32>(&model, &data.examples, &cfg).unwrap();
        let losses: Vec<f64> = trained.history.iter().map(|h| h.loss).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{kind}: {losses:?}");
    }
}

#[test]
fn zero_epochs_returns_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 3);
    let cfg = TrainConfig { epochs: 0, seed: 12, ..Default::default() };
    let model = ModelSettings::tiny().build(ModelKind::Mdat, data.dims).unwrap();
    let trained = train::train::<f32>(&model, &data.examples, &cfg).unwrap();
    let init = model.init_params::<f32>(&mut ChaCha8Rng::seed_from_u64(12)).unwrap();
    assert_eq!(trained.params, init);
    assert!(trained.history.is_empty());
}

#[test]
fn untrained_models_sit_at_chance() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 25);
    for kind in [ModelKind::Mdat, ModelKind::Baseline] {
        let model = ModelSettings::tiny().build(kind, data.dims).unwrap();
        let uas: Vec<f64> = (0..40)
            .map(|seed| {
                let params = model.init_params::<f32>(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                train::evaluate(&model, &params, &data.examples).unwrap().ua
            })
            .collect();
        let mean = uas.iter().sum::<f64>() / uas.len() as f64;
        assert!((mean - 0.25).abs() <= 0.1, "{kind}: {uas:?}");
    }
}
