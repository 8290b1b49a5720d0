//! TOML run configuration.
//!
//! ```toml
//! [model]
//! n_heads = 4
//! use_graph = true
//!
//! [train]
//! lr = 1e-4
//! epochs = 30
//!
//! [data]
//! seq_len = 128
//! vocabulary = "four"
//!
//! [experiment]
//! models = ["mdat", "baseline"]
//! sources = ["iemocap/manifest.jsonl"]
//! targets = ["emodb/manifest.jsonl"]
//! k = [0, 5, 10, 15]
//! seeds = 5
//! ```
//!
//! Every key is optional and unknown keys are rejected. Relative manifest
//! paths are resolved against the configuration file's directory. Command
//! line flags override file values.

use std::fs;
use std::path::{Path, PathBuf};

use mdat_core::baseline::BaselineConfig;
use mdat_core::mdat::{Ablation, CoAttentionMode, MdatConfig};
use mdat_core::train::TrainConfig;
use mdat_core::{Model, ModelKind};
use serde::{Deserialize, Serialize};

use crate::dataio::{Corpus, Dims, LabelVocabulary};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub data: DataSettings,
    pub experiment: ExperimentSettings,
}

/// Architecture settings. Input widths, sequence length and class count
/// come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    /// Graph attention width `U`; defaults to the speech width.
    pub graph_width: Option<usize>,
    pub n_heads: usize,
    /// Feed-forward width; defaults to four times the encoder width.
    pub d_ff: Option<usize>,
    pub leaky_slope: f64,
    pub dropout_p: f64,
    pub layer_norm_eps: f64,
    pub coatt_mode: CoAttentionMode,
    pub use_graph: bool,
    pub use_coatt: bool,
    pub use_transformer: bool,
    pub mask_padding: bool,
    /// Baseline LSTM hidden width per direction.
    pub hidden: usize,
    /// Baseline dense head width.
    pub dense: usize,
    /// Baseline L2 coefficient on the dense head.
    pub l2: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = MdatConfig::new(1, 1, 1, 1);
        let b = BaselineConfig::new(1, 1, 1);
        Self {
            graph_width: None,
            n_heads: m.n_heads,
            d_ff: None,
            leaky_slope: m.leaky_slope,
            dropout_p: m.dropout_p,
            layer_norm_eps: m.layer_norm_eps,
            coatt_mode: m.coatt_mode,
            use_graph: m.use_graph,
            use_coatt: m.use_coatt,
            use_transformer: m.use_transformer,
            mask_padding: m.mask_padding,
            hidden: b.hidden,
            dense: b.dense,
            l2: b.l2,
        }
    }
}

impl ModelSettings {
    /// Settings for the tiny synthetic runs: 2 heads, small baseline.
    pub fn tiny() -> Self {
        Self {
            n_heads: 2,
            hidden: 8,
            dense: 16,
            ..Self::default()
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        (self.use_graph, self.use_coatt, self.use_transformer) = ablation.flags();
        self
    }

    pub fn mdat_config(&self, dims: Dims) -> Result<MdatConfig> {
        let mut c = MdatConfig::new(dims.d_speech, dims.d_text, dims.seq_len, dims.n_classes);
        c.graph_width = self.graph_width.unwrap_or(dims.d_speech);
        c.n_heads = self.n_heads;
        c.leaky_slope = self.leaky_slope;
        c.dropout_p = self.dropout_p;
        c.layer_norm_eps = self.layer_norm_eps;
        c.coatt_mode = self.coatt_mode;
        c.use_graph = self.use_graph;
        c.use_coatt = self.use_coatt;
        c.use_transformer = self.use_transformer;
        c.mask_padding = self.mask_padding;
        c.d_ff = self.d_ff.unwrap_or(4 * c.encoder_width());
        c.validate()?;
        Ok(c)
    }

    pub fn baseline_config(&self, dims: Dims) -> Result<BaselineConfig> {
        let c = BaselineConfig {
            hidden: self.hidden,
            dense: self.dense,
            dropout_p: self.dropout_p,
            l2: self.l2,
            ..BaselineConfig::new(dims.d_speech, dims.d_text, dims.n_classes)
        };
        c.validate()?;
        Ok(c)
    }

    pub fn build(&self, kind: ModelKind, dims: Dims) -> Result<Model> {
        Ok(match kind {
            ModelKind::Mdat => Model::Mdat(self.mdat_config(dims)?),
            ModelKind::Baseline => Model::Baseline(self.baseline_config(dims)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSettings {
    /// Both modalities are padded or cropped to this many rows.
    pub seq_len: usize,
    /// `four`, `emodb7`, `emovo6`, or a comma-separated list of labels.
    pub vocabulary: String,
    /// Training fraction for within-corpus splits of untagged manifests.
    pub train_fraction: f64,
    /// Check manifests against a corpus's published class counts.
    pub corpus: Option<Corpus>,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self {
            seq_len: 128,
            vocabulary: "four".into(),
            train_fraction: 0.8,
            corpus: None,
        }
    }
}

impl DataSettings {
    pub fn vocab(&self) -> Result<LabelVocabulary> {
        LabelVocabulary::parse(&self.vocabulary)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Within,
    Cross,
    Kshot,
    Ablate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    /// If set, the file may only be used with the matching subcommand.
    pub kind: Option<ExperimentKind>,
    pub models: Vec<ModelKind>,
    pub sources: Vec<PathBuf>,
    pub targets: Vec<PathBuf>,
    /// Shots per class for k-shot adaptation.
    pub k: Vec<usize>,
    /// Number of seeds, counting up from the training seed.
    pub seeds: usize,
    /// Worker threads for independent runs.
    pub jobs: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            kind: None,
            models: vec![ModelKind::Mdat],
            sources: Vec::new(),
            targets: Vec::new(),
            k: vec![0, 5, 10, 15],
            seeds: 1,
            jobs: 1,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a file and resolves its relative manifest paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.experiment.sources.iter_mut().for_each(resolve);
        cfg.experiment.targets.iter_mut().for_each(resolve);
        Ok(cfg)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.experiment.seeds as u64).map(|i| self.train.seed + i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.data.vocab()?;
        if self.data.seq_len == 0 {
            return Err(Error::Config("data.seq_len must be positive".into()));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(Error::Config("data.train_fraction must lie in (0, 1)".into()));
        }
        if self.experiment.seeds == 0 || self.experiment.jobs == 0 {
            return Err(Error::Config("experiment.seeds and experiment.jobs must be positive".into()));
        }
        if self.experiment.models.is_empty() {
            return Err(Error::Config("experiment.models is empty".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[model]\nheads = 2\n").is_err());
        assert!(RunConfig::from_toml("[optimizer]\n").is_err());
        assert!(RunConfig::from_toml("[train]\nlearning_rate = 0.1\n").is_err());
    }

    #[test]
    fn sections_parse() {
        let cfg = RunConfig::from_toml(
            "[model]\nn_heads = 2\ncoatt_mode = \"gate\"\n[train]\nlr = 0.001\n\
             [data]\nseq_len = 8\nvocabulary = \"emodb7\"\n[experiment]\nmodels = [\"baseline\"]\nk = [0, 5]\n",
        )
        .unwrap();
        assert_eq!(cfg.model.n_heads, 2);
        assert_eq!(cfg.model.coatt_mode, CoAttentionMode::Gate);
        assert_eq!(cfg.train.lr, 0.001);
        assert_eq!(cfg.train.epochs, TrainConfig::default().epochs);
        assert_eq!(cfg.data.vocab().unwrap().len(), 7);
        assert_eq!(cfg.experiment.models, [ModelKind::Baseline]);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn model_defaults_follow_the_data() {
        let dims = Dims { d_speech: 16, d_text: 12, seq_len: 8, n_classes: 4 };
        let c = ModelSettings::tiny().mdat_config(dims).unwrap();
        assert_eq!((c.d_model, c.d_text, c.graph_width, c.seq_len), (16, 12, 16, 8));
        assert_eq!(c.d_ff, 4 * 32);
        let c = ModelSettings::tiny().with_ablation(Ablation::Model3).mdat_config(dims).unwrap();
        assert_eq!(c.d_ff, 4 * 16);
    }
}
