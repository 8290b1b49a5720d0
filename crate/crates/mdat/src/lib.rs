//! File formats, datasets, experiment protocols and the command line for
//! the MDAT speech emotion recognition models.
//!
//! The models, autodiff and training loop live in [`mdat_core`]; this crate
//! adds everything that touches the file system:
//!
//! * [`dataio`]: the `MDF1` feature-file format, JSONL manifests, label
//!   vocabularies, stratified splits and the synthetic corpus generator.
//! * [`checkpoint`]: the `MDM1` model checkpoint container.
//! * [`config`]: TOML run configuration.
//! * [`experiments`]: within-corpus, cross-language, k-shot and ablation
//!   protocols with JSON and CSV reports.
//! * [`cli`]: the `mdat` command.

#![forbid(unsafe_code)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataio;
mod error;
pub mod experiments;

pub use error::{Error, Result};
pub use mdat_core;
