//! Synthetic stand-in corpora.
//!
//! Every row of a class-`c` utterance is drawn from
//! `Normal(mu_c + shift * delta, noise^2 I)` in each modality. The class
//! anchors `mu_c` and the drift direction `delta` are unit vectors derived
//! from `anchor_seed`; the noise comes from `seed`. Two corpora with the same
//! anchor seed share their classes and differ only by the drift and the
//! noise draw, which is how the cross-language gap is emulated.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{stratified_split, write_feature_file, write_manifest, FeatureSequence, LabelVocabulary, Sample, Split};
use crate::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub per_class: usize,
    pub seq_len: usize,
    pub d_speech: usize,
    pub d_text: usize,
    pub shift: f64,
    pub noise: f64,
    pub seed: u64,
    pub anchor_seed: u64,
    pub language: String,
    /// When set, samples are tagged train/test by a stratified split with
    /// this training fraction; otherwise they are left unassigned.
    pub train_fraction: Option<f64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 4,
            per_class: 20,
            seq_len: 8,
            d_speech: 16,
            d_text: 12,
            shift: 0.0,
            noise: 0.1,
            seed: 0,
            anchor_seed: 0,
            language: "synthetic".into(),
            train_fraction: None,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// `n` unit vectors in `dim` dimensions, mutually orthogonal while
/// `n <= dim` (Gram-Schmidt on Gaussian draws).
fn anchors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = gaussian(rng, dim);
        if i < dim {
            for u in &out[..i] {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        normalize(&mut v);
        out.push(v);
    }
    out
}

struct Modality {
    means: Vec<Vec<f64>>,
    dim: usize,
}

impl Modality {
    fn new(rng: &mut ChaCha8Rng, spec: &SynthSpec, dim: usize) -> Self {
        let mut means = anchors(rng, spec.n_classes, dim);
        let mut delta = gaussian(rng, dim);
        normalize(&mut delta);
        for m in &mut means {
            m.iter_mut().zip(&delta).for_each(|(a, d)| *a += spec.shift * d);
        }
        Self { means, dim }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, class: usize, rows: usize, noise: f64) -> Result<FeatureSequence> {
        let mut data = Vec::with_capacity(rows * self.dim);
        for _ in 0..rows {
            for &mu in &self.means[class] {
                let z: f64 = rng.sample(StandardNormal);
                data.push((mu + noise * z) as f32);
            }
        }
        FeatureSequence::new(rows, self.dim, data)
    }
}

/// Writes `speech/*.mdf`, `text/*.mdf` and `manifest.jsonl` under `out_dir`
/// and returns the samples in manifest order (classes interleaved).
pub fn synth_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<(Vec<Sample>, LabelVocabulary)> {
    for (name, v) in [
        ("n_classes", spec.n_classes),
        ("per_class", spec.per_class),
        ("seq_len", spec.seq_len),
        ("d_speech", spec.d_speech),
        ("d_text", spec.d_text),
    ] {
        if v == 0 {
            return Err(Error::Config(format!("synth {name} must be positive")));
        }
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite() && spec.shift.is_finite()) {
        return Err(Error::Config("synth noise must be finite and non-negative, shift finite".into()));
    }
    let vocab = LabelVocabulary::for_classes(spec.n_classes)?;
    let mut anchor_rng = ChaCha8Rng::seed_from_u64(spec.anchor_seed);
    let speech = Modality::new(&mut anchor_rng, spec, spec.d_speech);
    let text = Modality::new(&mut anchor_rng, spec, spec.d_text);

    let n = spec.n_classes * spec.per_class;
    let labels: Vec<usize> = (0..n).map(|i| i % spec.n_classes).collect();
    let mut splits = vec![Split::Unassigned; n];
    if let Some(f) = spec.train_fraction {
        let (train, test) = stratified_split(&labels, f, spec.seed)?;
        train.into_iter().for_each(|i| splits[i] = Split::Train);
        test.into_iter().for_each(|i| splits[i] = Split::Test);
    }

    for sub in ["speech", "text"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(Error::io(&d))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        let id = format!("{}-{i:05}", spec.language);
        let s = speech.draw(&mut rng, label, spec.seq_len, spec.noise)?;
        let t = text.draw(&mut rng, label, spec.seq_len, spec.noise)?;
        let sp = out_dir.join("speech").join(format!("{id}.mdf"));
        let tp = out_dir.join("text").join(format!("{id}.mdf"));
        write_feature_file(&s, &sp)?;
        write_feature_file(&t, &tp)?;
        samples.push(Sample {
            id,
            language: spec.language.clone(),
            label,
            speech_features: sp,
            text_features: tp,
            split: splits[i],
        });
    }
    write_manifest(&out_dir.join(MANIFEST_NAME), &samples, &vocab)?;
    Ok((samples, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{load_manifest, read_feature_file};

    fn class_means(samples: &[Sample], classes: usize) -> Vec<Vec<f64>> {
        let mut sums = vec![Vec::new(); classes];
        let mut counts = vec![0usize; classes];
        for s in samples {
            let f = read_feature_file(&s.speech_features).unwrap();
            let acc = &mut sums[s.label];
            acc.resize(f.dim(), 0.0);
            for r in 0..f.len() {
                acc.iter_mut().zip(f.row(r)).for_each(|(a, &v)| *a += f64::from(v));
            }
            counts[s.label] += f.len();
        }
        sums.into_iter()
            .zip(counts)
            .map(|(s, n)| s.into_iter().map(|v| v / n as f64).collect())
            .collect()
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SynthSpec { per_class: 3, train_fraction: Some(0.5), ..Default::default() };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (sa, _) = synth_dataset(&spec, a.path()).unwrap();
        synth_dataset(&spec, b.path()).unwrap();
        for name in [MANIFEST_NAME.to_string(), "speech/synthetic-00005.mdf".into(), "text/synthetic-00011.mdf".into()] {
            assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
        }
        let loaded = load_manifest(&a.path().join(MANIFEST_NAME), &LabelVocabulary::four_class()).unwrap();
        assert_eq!(loaded, sa);
        assert_eq!(sa.iter().filter(|s| s.split == Split::Train).count(), 8);
    }

    #[test]
    fn noiseless_classes_are_constant() {
        let spec = SynthSpec { per_class: 3, noise: 0.0, ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        let (samples, _) = synth_dataset(&spec, dir.path()).unwrap();
        for c in 0..4 {
            let files: Vec<_> = samples
                .iter()
                .filter(|s| s.label == c)
                .map(|s| fs::read(&s.speech_features).unwrap())
                .collect();
            assert!(files.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn class_means_are_separated() {
        let spec = SynthSpec { per_class: 5, shift: 1.5, ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        let (samples, _) = synth_dataset(&spec, dir.path()).unwrap();
        let means = class_means(&samples, 4);
        for a in 0..4 {
            for b in 0..a {
                let d: f64 = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                // Orthonormal anchors sit sqrt(2) apart; the noise in the means is far smaller.
                assert!((d - 2f64.sqrt()).abs() < 0.1, "{a} {b} {d}");
            }
        }
    }

    #[test]
    fn anchors_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = anchors(&mut rng, 5, 8);
        for i in 0..5 {
            for j in 0..5 {
                let dot: f64 = a[i].iter().zip(&a[j]).map(|(x, y)| x * y).sum();
                assert!((dot - f64::from(u8::from(i == j))).abs() < 1e-12);
            }
        }
    }
}
