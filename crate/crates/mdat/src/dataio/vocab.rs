use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Sample;
use crate::{Error, Result};

/// Ordered, duplicate-free class names; a label's index is its position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelVocabulary {
    names: Vec<String>,
}

impl LabelVocabulary {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(Error::Config("vocabulary contains an empty label".into()));
            }
            if names[..i].contains(n) {
                return Err(Error::Config(format!("vocabulary repeats label {n:?}")));
            }
        }
        Ok(Self { names })
    }

    /// The shared cross-language label set.
    pub fn four_class() -> Self {
        Self::new(["angry", "happy", "neutral", "sad"]).unwrap()
    }

    /// Within-corpus EMODB: the seven acted emotions.
    pub fn emodb7() -> Self {
        Self::new(["angry", "happy", "neutral", "sad", "boredom", "disgust", "fear"]).unwrap()
    }

    /// Within-corpus EMOVO: six classes (surprise is left out).
    pub fn emovo6() -> Self {
        Self::new(["angry", "happy", "neutral", "sad", "disgust", "fear"]).unwrap()
    }

    /// `class0`, `class1`, ... for synthetic data with other class counts.
    pub fn numbered(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| format!("class{i}")))
    }

    /// `four`, `emodb7`, `emovo6`, or a comma-separated list of names.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec {
            "four" | "four_class" => Ok(Self::four_class()),
            "emodb7" => Ok(Self::emodb7()),
            "emovo6" => Ok(Self::emovo6()),
            list => Self::new(list.split(',').map(str::trim)),
        }
    }

    /// Vocabulary matching `n` synthetic classes.
    pub fn for_classes(n: usize) -> Result<Self> {
        if n == 4 {
            Ok(Self::four_class())
        } else {
            Self::numbered(n)
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.names.iter().position(|n| n == label)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl TryFrom<Vec<String>> for LabelVocabulary {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<LabelVocabulary> for Vec<String> {
    fn from(v: LabelVocabulary) -> Self {
        v.names
    }
}

/// Corpora with published class counts, used to validate manifests built
/// from the real data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corpus {
    Iemocap,
    Emodb,
    Emovo,
    Urdu,
}

impl Corpus {
    /// Expected per-class counts in four-class order (angry, happy,
    /// neutral, sad). `None` when the corpus subset is not fixed.
    pub fn four_class_counts(self) -> Option<[usize; 4]> {
        match self {
            Corpus::Iemocap => None,
            Corpus::Emodb => Some([127, 71, 79, 143]),
            Corpus::Emovo => Some([84, 84, 84, 84]),
            Corpus::Urdu => Some([100, 100, 100, 100]),
        }
    }

    /// Checks a four-class manifest against the published counts. IEMOCAP
    /// only requires all four classes to be present, since the subset size
    /// varies between experiments.
    pub fn validate(self, samples: &[Sample], vocab: &LabelVocabulary) -> Result<()> {
        if vocab != &LabelVocabulary::four_class() {
            return Err(Error::Config(format!("{self} validation needs the four-class vocabulary")));
        }
        let mut counts = [0usize; 4];
        for s in samples {
            counts[s.label] += 1;
        }
        let ok = match self.four_class_counts() {
            Some(expected) => counts == expected,
            None => counts.iter().all(|&c| c > 0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dataset {
                name: self.to_string(),
                message: format!(
                    "class counts {counts:?} (angry, happy, neutral, sad) do not match {:?}",
                    self.four_class_counts()
                ),
            })
        }
    }
}

impl fmt::Display for Corpus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Corpus::Iemocap => "iemocap",
            Corpus::Emodb => "emodb",
            Corpus::Emovo => "emovo",
            Corpus::Urdu => "urdu",
        })
    }
}

impl FromStr for Corpus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iemocap" => Ok(Corpus::Iemocap),
            "emodb" => Ok(Corpus::Emodb),
            "emovo" => Ok(Corpus::Emovo),
            "urdu" => Ok(Corpus::Urdu),
            other => Err(Error::Config(format!("unknown corpus {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let v = LabelVocabulary::four_class();
        assert_eq!(v.index_of("neutral"), Some(2));
        assert_eq!(v.index_of("fear"), None);
        assert_eq!(LabelVocabulary::emodb7().len(), 7);
        assert_eq!(LabelVocabulary::emovo6().len(), 6);
        assert_eq!(LabelVocabulary::parse("a, b").unwrap().names(), ["a", "b"]);
        assert!(LabelVocabulary::new(["a", "a"]).is_err());
    }

    #[test]
    fn serde_keeps_order_and_validates() {
        let v = LabelVocabulary::emovo6();
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<LabelVocabulary>(&json).unwrap(), v);
        assert!(serde_json::from_str::<LabelVocabulary>(r#"["x","x"]"#).is_err());
    }
}
