//! Deterministic mini-batch training.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::numerics::{Dropout, Scalar, Tensor};
use crate::optim::{Adam, AdamConfig};
use crate::{Error, Model, ModelInput, ParamSet, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Example<S = f32> {
    pub input: ModelInput<S>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub seed: u64,
    /// Apply the model's dropout during training.
    pub dropout: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 16,
            epochs: 30,
            finetune_epochs: 20,
            seed: 0,
            dropout: true,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if self.adam_eps <= 0.0 {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's samples, as seen by the optimiser.
    pub loss: f64,
    /// Unweighted accuracy on the training set after the epoch, dropout off.
    pub train_ua: f64,
}

pub type History = Vec<EpochStats>;

#[derive(Clone, Debug)]
pub struct Trained<S: Scalar = f32> {
    pub params: ParamSet<S>,
    pub history: History,
}

/// Initialises parameters from `config.seed` and trains for `config.epochs`.
pub fn train<S: Scalar>(model: &Model, data: &[Example<S>], config: &TrainConfig) -> Result<Trained<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = model.init_params(&mut rng)?;
    fit(model, params, data, config, config.epochs, &mut rng)
}

/// Continues training `params` for `epochs` epochs with a fresh optimiser.
///
/// Shuffling and dropout masks are drawn from `rng`, so a fixed seed gives
/// bit-identical results.
pub fn fit<S: Scalar>(
    model: &Model,
    mut params: ParamSet<S>,
    data: &[Example<S>],
    config: &TrainConfig,
    epochs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trained<S>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = model.n_classes();
    if let Some(e) = data.iter().find(|e| e.label >= classes) {
        return Err(Error::LabelOutOfRange { label: e.label, classes });
    }
    let mut adam = Adam::new(config.adam(), &params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc = params.zeros_like();
            for &i in batch {
                let ex = &data[i];
                let (loss, grads) = {
                    let mut dropout = if config.dropout { Dropout::On(rng) } else { Dropout::Off };
                    match model.loss_and_grad(&params, &ex.input, ex.label, &mut dropout) {
                        Err(Error::NonFinite { .. }) => return Err(Error::Divergence { epoch }),
                        other => other?,
                    }
                };
                total += loss.as_f64();
                for (a, g) in acc.iter_mut().zip(&grads) {
                    add_assign(a, g);
                }
            }
            let scale = S::from_f64(1.0 / batch.len() as f64);
            for a in &mut acc {
                a.data_mut().iter_mut().for_each(|v| *v = *v * scale);
            }
            adam.step(&mut params, &acc);
            if !params.is_finite() {
                return Err(Error::Divergence { epoch });
            }
        }
        let loss = total / data.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let train_ua = evaluate(model, &params, data)?.ua;
        history.push(EpochStats { epoch, loss, train_ua });
    }
    Ok(Trained { params, history })
}

fn add_assign<S: Scalar>(acc: &mut Tensor<S>, g: &Tensor<S>) {
    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a = *a + b;
    }
}

pub fn predict<S: Scalar>(model: &Model, params: &ParamSet<S>, input: &ModelInput<S>) -> Result<usize> {
    Ok(model.predict_proba(params, input)?.argmax())
}

/// Confusion matrix and unweighted accuracy over `data`, dropout off.
pub fn evaluate<S: Scalar>(model: &Model, params: &ParamSet<S>, data: &[Example<S>]) -> Result<MetricsReport> {
    let mut confusion = ConfusionMatrix::new(model.n_classes());
    for ex in data {
        confusion.record(ex.label, predict(model, params, &ex.input)?)?;
    }
    MetricsReport::from_confusion(confusion)
}
