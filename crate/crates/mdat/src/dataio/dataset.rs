use std::path::Path;

use mdat_core::train::Example;
use mdat_core::ModelInput;

use super::{align_length, load_manifest, read_feature_file, LabelVocabulary, Sample, Split};
use crate::{Error, Result};

/// Model-facing sizes of a loaded dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub d_speech: usize,
    pub d_text: usize,
    pub seq_len: usize,
    pub n_classes: usize,
}

/// Samples with their features loaded and aligned to a common length.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub vocab: LabelVocabulary,
    pub samples: Vec<Sample>,
    pub examples: Vec<Example>,
    pub dims: Dims,
}

impl Dataset {
    pub fn load(manifest: &Path, vocab: &LabelVocabulary, seq_len: usize) -> Result<Self> {
        let samples = load_manifest(manifest, vocab)?;
        Self::from_samples(manifest.display().to_string(), vocab.clone(), samples, seq_len)
    }

    /// Reads every sample's feature files and aligns both modalities to
    /// `seq_len` rows. The real (unpadded) lengths are kept on the inputs
    /// for optional masking.
    pub fn from_samples(name: String, vocab: LabelVocabulary, samples: Vec<Sample>, seq_len: usize) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::Config("seq_len must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Dataset { name, message: "no samples".into() });
        }
        let mut examples = Vec::with_capacity(samples.len());
        let mut dims: Option<(usize, usize)> = None;
        for s in &samples {
            let speech = read_feature_file(&s.speech_features)?;
            let text = read_feature_file(&s.text_features)?;
            let d = (speech.dim(), text.dim());
            match dims {
                None => dims = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::Dataset {
                        name,
                        message: format!("sample {} has widths {d:?}, earlier samples {prev:?}", s.id),
                    })
                }
                Some(_) => {}
            }
            let (ls, lt) = (speech.len().min(seq_len), text.len().min(seq_len));
            let input = ModelInput::new(
                align_length(&speech, seq_len).into_tensor(),
                align_length(&text, seq_len).into_tensor(),
            )
            .with_lengths(ls, lt);
            examples.push(Example { input, label: s.label });
        }
        let (d_speech, d_text) = dims.expect("non-empty");
        let dims = Dims {
            d_speech,
            d_text,
            seq_len,
            n_classes: vocab.len(),
        };
        Ok(Self {
            name,
            vocab,
            samples,
            examples,
            dims,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Indices of samples whose split tag satisfies `keep`.
    pub fn indices_where(&self, keep: impl Fn(Split) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| keep(self.samples[i].split)).collect()
    }

    pub fn examples_at(&self, indices: &[usize]) -> Vec<Example> {
        indices.iter().map(|&i| self.examples[i].clone()).collect()
    }

    pub fn ids_at(&self, indices: &[usize]) -> Vec<&str> {
        indices.iter().map(|&i| self.samples[i].id.as_str()).collect()
    }
}
