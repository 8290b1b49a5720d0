//! Common surface over the fusion model and the baseline.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::baseline::{Baseline, BaselineConfig};
use crate::mdat::{Mdat, MdatConfig};
use crate::numerics::gradcheck::{self, GradCheckReport};
use crate::numerics::{DoubleF64, Dropout, Graph, NodeId, Scalar, Tensor};
use crate::{Error, ParamSet, Result};

/// Both modalities of one utterance, already aligned to the model length.
///
/// `speech_len` / `text_len` record how many leading rows are real data
/// (the rest is zero padding); they only matter when padding is masked.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput<S = f32> {
    pub speech: Tensor<S>,
    pub text: Tensor<S>,
    pub speech_len: usize,
    pub text_len: usize,
}

impl<S: Scalar> ModelInput<S> {
    pub fn new(speech: Tensor<S>, text: Tensor<S>) -> Self {
        let (speech_len, text_len) = (speech.rows(), text.rows());
        Self {
            speech,
            text,
            speech_len,
            text_len,
        }
    }

    pub fn with_lengths(mut self, speech_len: usize, text_len: usize) -> Self {
        self.speech_len = speech_len.clamp(1, self.speech.rows());
        self.text_len = text_len.clamp(1, self.text.rows());
        self
    }

    pub fn cast<T: Scalar>(&self) -> ModelInput<T> {
        ModelInput {
            speech: self.speech.cast(),
            text: self.text.cast(),
            speech_len: self.speech_len,
            text_len: self.text_len,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mdat,
    Baseline,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mdat => "mdat",
            ModelKind::Baseline => "baseline",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mdat" => Ok(ModelKind::Mdat),
            "baseline" => Ok(ModelKind::Baseline),
            other => Err(Error::Config(alloc::format!("unknown model kind {other:?}"))),
        }
    }
}

/// Gradient check results for the two working precisions.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    /// Analytic gradient computed in `f64`.
    pub double: GradCheckReport,
    /// Analytic gradient computed in `f32`.
    pub single: GradCheckReport,
}

/// A configured classifier of either kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "lowercase")]
pub enum Model {
    Mdat(MdatConfig),
    Baseline(BaselineConfig),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Mdat(_) => ModelKind::Mdat,
            Model::Baseline(_) => ModelKind::Baseline,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Model::Mdat(c) => c.n_classes,
            Model::Baseline(c) => c.n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Mdat(c) => c.validate(),
            Model::Baseline(c) => c.validate(),
        }
    }

    pub fn init_params<S: Scalar>(&self, rng: &mut dyn RngCore) -> Result<ParamSet<S>> {
        match self {
            Model::Mdat(c) => Ok(Mdat::new(c.clone())?.init_params(rng)),
            Model::Baseline(c) => Ok(Baseline::new(c.clone())?.init_params(rng)),
        }
    }

    /// Records the forward pass up to the pre-softmax class scores.
    pub fn logits<'a, S: Scalar>(
        &self,
        g: &mut Graph<'a, S>,
        params: &'a ParamSet<S>,
        input: &'a ModelInput<S>,
        dropout: &mut Dropout<'_>,
    ) -> Result<NodeId> {
        match self {
            Model::Mdat(c) => Mdat::new(c.clone())?.logits(g, params, input, dropout, None),
            Model::Baseline(c) => Baseline::new(c.clone())?.logits(g, params, input, dropout),
        }
    }

    /// Cross-entropy plus any weight penalty the model carries.
    pub fn loss<'a, S: Scalar>(
        &self,
        g: &mut Graph<'a, S>,
        params: &'a ParamSet<S>,
        input: &'a ModelInput<S>,
        label: usize,
        dropout: &mut Dropout<'_>,
    ) -> Result<NodeId> {
        let logits = self.logits(g, params, input, dropout)?;
        let ce = g.cross_entropy(logits, label)?;
        match self {
            Model::Mdat(_) => Ok(ce),
            Model::Baseline(c) => Baseline::new(c.clone())?.add_penalty(g, params, ce),
        }
    }

    /// Class probabilities with dropout off.
    pub fn predict_proba<S: Scalar>(&self, params: &ParamSet<S>, input: &ModelInput<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let logits = self.logits(&mut g, params, input, &mut Dropout::Off)?;
        let p = g.softmax_rows(logits)?;
        Ok(g.value(p).clone())
    }

    pub fn loss_and_grad<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        input: &ModelInput<S>,
        label: usize,
        dropout: &mut Dropout<'_>,
    ) -> Result<(S, Vec<Tensor<S>>)> {
        let mut g = Graph::new();
        let loss = self.loss(&mut g, params, input, label, dropout)?;
        let value = g.value(loss).data()[0];
        let grads = g.backward(loss)?.into_dense(params.shapes());
        Ok((value, grads))
    }

    pub fn loss_value<S: Scalar>(&self, params: &ParamSet<S>, input: &ModelInput<S>, label: usize) -> Result<S> {
        let mut g = Graph::new();
        let loss = self.loss(&mut g, params, input, label, &mut Dropout::Off)?;
        Ok(g.value(loss).data()[0])
    }

    /// Finite-difference check of the full model loss on one example with
    /// dropout disabled, for both working precisions.
    ///
    /// Parameters and input are first rounded to `f32`, so both analytic
    /// gradients (computed in `f32` and in `f64`) see exactly the same point.
    /// The central differences are taken once, in double-double arithmetic,
    /// which keeps their round-off far below the tolerances even for
    /// gradients near `1e-9`.
    pub fn check_gradients(
        &self,
        params: &ParamSet<f64>,
        input: &ModelInput<f64>,
        label: usize,
        eps: f64,
    ) -> Result<GradientCheck> {
        let p32: ParamSet<f32> = params.cast();
        let in32: ModelInput<f32> = input.cast();
        let p64: ParamSet<f64> = p32.cast();
        let in64: ModelInput<f64> = in32.cast();
        let (_, single) = self.loss_and_grad(&p32, &in32, label, &mut Dropout::Off)?;
        let (_, double) = self.loss_and_grad(&p64, &in64, label, &mut Dropout::Off)?;
        let pdd: ParamSet<DoubleF64> = p64.cast();
        let idd: ModelInput<DoubleF64> = in64.cast();
        let numeric = gradcheck::numeric_gradient(&pdd, eps, |p| self.loss_value(p, &idd, label))?;
        Ok(GradientCheck {
            double: gradcheck::report(&p64, &double, &numeric),
            single: gradcheck::report(&p64, &single, &numeric),
        })
    }

    pub fn describe(&self) -> String {
        match self {
            Model::Mdat(c) => alloc::format!(
                "mdat(graph={}, coatt={}, transformer={})",
                c.use_graph, c.use_coatt, c.use_transformer
            ),
            Model::Baseline(c) => alloc::format!("baseline(hidden={})", c.hidden),
        }
    }
}
