//! Core of the multimodal dual attention transformer (MDAT) for
//! cross-language speech emotion recognition.
//!
//! The crate is `no_std` (with `alloc`) and contains everything that is pure
//! computation:
//!
//! * [`numerics`]: a small dense tensor type, a tape-based reverse-mode
//!   differentiation engine over a closed operation set, and a
//!   finite-difference gradient checker.
//! * [`mdat`]: the fusion model (input projection, joint graph attention,
//!   co-attention, per-modality transformer encoders, classifier) with the
//!   ablation switches.
//! * [`baseline`]: the BiLSTM comparison model.
//! * [`optim`], [`metrics`] and [`train`]: Adam, unweighted accuracy and the
//!   deterministic mini-batch training loop.
//!
//! File formats, datasets, experiment protocols and the command line live in
//! the companion `mdat` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

mod error;

pub mod baseline;
pub mod mdat;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod params;
pub mod train;

pub use error::{Error, Result};
pub use model::{GradientCheck, Model, ModelInput, ModelKind};
pub use numerics::{Graph, NodeId, Scalar, Tensor};
pub use params::ParamSet;
