//! Line-delimited JSON manifests: one utterance per line.
//!
//! ```json
//! {"id":"u1","language":"en","label":"sad","speech_features":"speech/u1.mdf","text_features":"text/u1.mdf","split":"train"}
//! ```
//!
//! Feature paths are relative to the manifest's directory.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::LabelVocabulary;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub language: String,
    /// Index into the vocabulary the manifest was loaded with.
    pub label: usize,
    /// Resolved path of the speech feature file.
    pub speech_features: PathBuf,
    /// Resolved path of the text feature file.
    pub text_features: PathBuf,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    language: String,
    label: String,
    speech_features: PathBuf,
    text_features: PathBuf,
    split: Split,
}

/// Reads and validates a manifest, preserving line order. Blank lines are
/// skipped.
pub fn load_manifest(path: &Path, vocab: &LabelVocabulary) -> Result<Vec<Sample>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Manifest {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let rec: Record = serde_json::from_str(line).map_err(|e| err(format!("malformed record: {e}")))?;
        if rec.id.is_empty() {
            return Err(err("empty id".into()));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(err(format!("duplicate id {:?}", rec.id)));
        }
        if rec.language.is_empty() {
            return Err(err("empty language tag".into()));
        }
        let label = vocab.index_of(&rec.label).ok_or_else(|| Error::UnknownLabel {
            path: path.to_path_buf(),
            line: line_no,
            label: rec.label.clone(),
            vocabulary: vocab.names().to_vec(),
        })?;
        let speech = base.join(&rec.speech_features);
        let text = base.join(&rec.text_features);
        for f in [&speech, &text] {
            if !f.is_file() {
                return Err(err(format!("missing feature file {}", f.display())));
            }
        }
        samples.push(Sample {
            id: rec.id,
            language: rec.language,
            label,
            speech_features: speech,
            text_features: text,
            split: rec.split,
        });
    }
    Ok(samples)
}

/// Writes samples as a manifest; feature paths under the manifest's
/// directory are stored relative to it.
pub fn write_manifest(path: &Path, samples: &[Sample], vocab: &LabelVocabulary) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).to_path_buf();
    let mut out = String::new();
    for s in samples {
        if s.label >= vocab.len() {
            return Err(Error::Config(format!("sample {} has label index {} outside the vocabulary", s.id, s.label)));
        }
        let rec = Record {
            id: s.id.clone(),
            language: s.language.clone(),
            label: vocab.name(s.label).to_string(),
            speech_features: rel(&s.speech_features),
            text_features: rel(&s.text_features),
            split: s.split,
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::Report(e.to_string()))?;
        writeln!(out, "{line}").unwrap();
    }
    fs::write(path, out).map_err(Error::io(path))
}
