use mdat::dataio::{self, align_length, Dataset, FeatureSequence, LabelVocabulary, Split, SynthSpec};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f32> {
    any::<u32>().prop_map(f32::from_bits).prop_filter("finite", |v| v.is_finite())
}

fn sequence() -> impl Strategy<Value = FeatureSequence> {
    (1usize..16, 1usize..16).prop_flat_map(|(r, c)| {
        proptest::collection::vec(finite(), r * c).prop_map(move |d| FeatureSequence::new(r, c, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn feature_round_trip(seq in sequence()) {
        let bytes = dataio::encode_feature(&seq);
        let back = dataio::decode_feature(&bytes).unwrap();
        prop_assert_eq!(back.len(), seq.len());
        prop_assert_eq!(back.dim(), seq.dim());
        let same = back.tensor().data().iter().zip(seq.tensor().data()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
        prop_assert_eq!(dataio::encode_feature(&back), bytes);
    }
}

proptest! {
    #[test]
    fn align_keeps_prefix(seq in sequence(), target in 1usize..24) {
        let t = align_length(&seq, target);
        prop_assert_eq!(t.len(), target);
        prop_assert_eq!(t.dim(), seq.dim());
        for r in 0..target {
            if r < seq.len() {
                prop_assert_eq!(t.row(r), seq.row(r));
            } else {
                prop_assert!(t.row(r).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn truncation_is_detected(seq in sequence(), cut in 1usize..64) {
        let bytes = dataio::encode_feature(&seq);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(dataio::decode_feature(&bytes[..keep]).is_err());
    }
}

#[test]
fn synthetic_corpus_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { per_class: 5, train_fraction: Some(0.6), language: "xx".into(), ..Default::default() };
    let (samples, vocab) = dataio::synth_dataset(&spec, dir.path()).unwrap();
    let manifest = dir.path().join(dataio::MANIFEST_NAME);
    let loaded = dataio::load_manifest(&manifest, &vocab).unwrap();
    assert_eq!(loaded, samples);
    assert_eq!(loaded[0].id, "xx-00000");
    assert_eq!(loaded.iter().filter(|s| s.split == Split::Train).count(), 12);

    let data = Dataset::load(&manifest, &LabelVocabulary::four_class(), 5).unwrap();
    assert_eq!(data.examples.len(), 20);
    assert_eq!(data.examples[0].input.speech.rows(), 5);
    assert_eq!((data.dims.d_speech, data.dims.d_text, data.dims.n_classes), (16, 12, 4));
}

#[test]
fn manifest_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    dataio::synth_dataset(&SynthSpec { per_class: 2, ..Default::default() }, dir.path()).unwrap();
    let manifest = dir.path().join(dataio::MANIFEST_NAME);
    let text = std::fs::read_to_string(&manifest).unwrap();
    let broken = text.replacen("\"angry\"", "\"bored\"", 1);
    std::fs::write(&manifest, broken).unwrap();
    let err = dataio::load_manifest(&manifest, &LabelVocabulary::four_class()).unwrap_err().to_string();
    assert!(err.contains("manifest.jsonl:1:") && err.contains("bored"), "{err}");
}
