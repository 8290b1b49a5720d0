use std::collections::HashSet;

use mdat_core::mdat::Ablation;
use mdat_core::metrics::MetricsReport;
use mdat_core::train::{self, Example, History, TrainConfig};
use mdat_core::{Model, ModelKind, ParamSet};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::gradcheck::{gradcheck_model, GradcheckRow};
use super::run_cells;
use crate::config::ModelSettings;
use crate::dataio::{stratified_split, Dataset, Split};
use crate::{Error, Result};

/// Gradient checks before an ablation run must reach this in `f64`.
const ABLATION_GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Within,
    Cross,
    Kshot,
    Ablation,
}

/// What every protocol shares: model settings, training settings, the
/// seeds to repeat each run with and the worker count.
#[derive(Debug, Clone)]
pub struct Plan {
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub fraction: f64,
    pub seeds: Vec<u64>,
    pub jobs: usize,
}

impl Plan {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub protocol: Protocol,
    pub model: ModelKind,
    pub ablation: Option<usize>,
    pub source: String,
    pub target: String,
    pub k: Option<usize>,
    pub seed: u64,
    pub model_config: Model,
    pub train_samples: usize,
    pub history: History,
    /// k-shot fine-tuning history.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adaptation: Option<History>,
    /// Ids of the target samples used for adaptation.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub shots: Vec<String>,
    pub metrics: MetricsReport,
}

/// A finished run and its trained parameters.
#[derive(Debug, Clone)]
pub struct Run {
    pub record: RunRecord,
    pub params: ParamSet<f32>,
}

/// Train/test indices for a within-corpus run. Samples tagged `test` form
/// the test part when there are any; otherwise a stratified split with
/// `fraction` and `seed` is drawn.
pub fn within_split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let test = data.indices_where(|s| s == Split::Test);
    if !test.is_empty() {
        let train = data.indices_where(|s| s != Split::Test);
        if train.is_empty() {
            return Err(dataset_error(data, "every sample is tagged test"));
        }
        return Ok((train, test));
    }
    stratified_split(&data.labels(), fraction, seed)
}

/// Target samples used for evaluation: everything not tagged `train`.
pub fn eval_pool(target: &Dataset) -> Result<Vec<usize>> {
    let pool = target.indices_where(|s| s != Split::Train);
    if pool.is_empty() {
        return Err(dataset_error(target, "no samples outside the train split to evaluate on"));
    }
    Ok(pool)
}

/// Target samples k-shot examples may be drawn from: those tagged `train`.
pub fn kshot_pool(target: &Dataset) -> Vec<usize> {
    target.indices_where(|s| s == Split::Train)
}

fn dataset_error(data: &Dataset, message: &str) -> Error {
    Error::Dataset {
        name: data.name.clone(),
        message: message.into(),
    }
}

fn check_compatible(source: &Dataset, target: &Dataset) -> Result<()> {
    if source.vocab != target.vocab {
        return Err(Error::VocabularyMismatch {
            model: source.vocab.names().to_vec(),
            data: target.vocab.names().to_vec(),
        });
    }
    if source.dims != target.dims {
        return Err(dataset_error(
            target,
            &format!("dimensions {:?} differ from the source's {:?}", target.dims, source.dims),
        ));
    }
    Ok(())
}

fn ensure_disjoint(data: &Dataset, a: &[usize], b: &[usize]) -> Result<()> {
    let ids: HashSet<&str> = data.ids_at(a).into_iter().collect();
    if let Some(id) = data.ids_at(b).into_iter().find(|id| ids.contains(id)) {
        return Err(dataset_error(data, &format!("sample {id} is in both the training and evaluation pools")));
    }
    Ok(())
}

fn grid<A: Copy, B: Copy>(a: &[A], b: &[B]) -> Vec<(A, B)> {
    a.iter().flat_map(|&x| b.iter().map(move |&y| (x, y))).collect()
}

struct Fitted {
    params: ParamSet<f32>,
    history: History,
}

fn fit_fresh(model: &Model, data: &[Example], cfg: &TrainConfig) -> Result<Fitted> {
    let t = train::train(model, data, cfg)?;
    Ok(Fitted {
        params: t.params,
        history: t.history,
    })
}

/// Trains each model kind on the training part of `data` and evaluates on
/// the held-out part, once per seed.
pub fn run_within(data: &Dataset, kinds: &[ModelKind], plan: &Plan) -> Result<Vec<Run>> {
    let cells = grid(kinds, &plan.seeds);
    run_cells(cells.len(), plan.jobs, |i| {
        let (kind, seed) = cells[i];
        let model = plan.model.build(kind, data.dims)?;
        let (train_idx, test_idx) = within_split(data, plan.fraction, seed)?;
        ensure_disjoint(data, &train_idx, &test_idx)?;
        let fitted = fit_fresh(&model, &data.examples_at(&train_idx), &plan.train_config(seed))?;
        let metrics = train::evaluate(&model, &fitted.params, &data.examples_at(&test_idx))?;
        Ok(Run {
            record: RunRecord {
                protocol: Protocol::Within,
                model: kind,
                ablation: None,
                source: data.name.clone(),
                target: data.name.clone(),
                k: None,
                seed,
                model_config: model,
                train_samples: train_idx.len(),
                history: fitted.history,
                adaptation: None,
                shots: Vec::new(),
                metrics,
            },
            params: fitted.params,
        })
    })
}

/// Trains on every source sample and evaluates on the target's evaluation
/// pool (see [`eval_pool`]).
pub fn run_cross_language(source: &Dataset, target: &Dataset, kinds: &[ModelKind], plan: &Plan) -> Result<Vec<Run>> {
    check_compatible(source, target)?;
    let eval = target.examples_at(&eval_pool(target)?);
    let cells = grid(kinds, &plan.seeds);
    run_cells(cells.len(), plan.jobs, |i| {
        let (kind, seed) = cells[i];
        let model = plan.model.build(kind, source.dims)?;
        let fitted = fit_fresh(&model, &source.examples, &plan.train_config(seed))?;
        let metrics = train::evaluate(&model, &fitted.params, &eval)?;
        Ok(Run {
            record: RunRecord {
                protocol: Protocol::Cross,
                model: kind,
                ablation: None,
                source: source.name.clone(),
                target: target.name.clone(),
                k: None,
                seed,
                model_config: model,
                train_samples: source.len(),
                history: fitted.history,
                adaptation: None,
                shots: Vec::new(),
                metrics,
            },
            params: fitted.params,
        })
    })
}

#[derive(Debug, Clone)]
pub struct Adapted {
    pub params: ParamSet<f32>,
    /// Positions in the pool of the examples used for fine-tuning.
    pub chosen: Vec<usize>,
    pub history: History,
}

/// Fine-tunes all parameters on `k` examples per class drawn from `pool`
/// for `config.finetune_epochs` epochs. `k = 0` returns the source
/// parameters unchanged.
pub fn kshot_adapt(
    model: &Model,
    source: &ParamSet<f32>,
    pool: &[Example],
    k: usize,
    config: &TrainConfig,
    seed: u64,
) -> Result<Adapted> {
    if k == 0 {
        return Ok(Adapted {
            params: source.clone(),
            chosen: Vec::new(),
            history: History::new(),
        });
    }
    let classes = model.n_classes();
    let mut by_class = vec![Vec::new(); classes];
    for (i, ex) in pool.iter().enumerate() {
        by_class
            .get_mut(ex.label)
            .ok_or(mdat_core::Error::LabelOutOfRange { label: ex.label, classes })?
            .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(k * classes);
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.len() < k {
            return Err(mdat_core::Error::InsufficientSamples {
                class,
                needed: k,
                available: members.len(),
            }
            .into());
        }
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..k]);
    }
    chosen.sort_unstable();
    let shots: Vec<Example> = chosen.iter().map(|&i| pool[i].clone()).collect();
    let t = train::fit(model, source.clone(), &shots, config, config.finetune_epochs, &mut rng)?;
    Ok(Adapted {
        params: t.params,
        chosen,
        history: t.history,
    })
}

/// Source training followed by adaptation with each `k` in `ks`. The
/// source model for `(kind, seed)` is shared by all `k`, so the `k = 0` row
/// equals the cross-language result for the same seed.
pub fn run_kshot(
    source: &Dataset,
    target: &Dataset,
    kinds: &[ModelKind],
    ks: &[usize],
    plan: &Plan,
) -> Result<Vec<RunRecord>> {
    check_compatible(source, target)?;
    let eval_idx = eval_pool(target)?;
    let pool_idx = kshot_pool(target);
    ensure_disjoint(target, &pool_idx, &eval_idx)?;
    if pool_idx.is_empty() && ks.iter().any(|&k| k > 0) {
        return Err(dataset_error(target, "no samples tagged train to draw k-shot examples from"));
    }
    let eval = target.examples_at(&eval_idx);
    let pool = target.examples_at(&pool_idx);
    let cells = grid(kinds, &plan.seeds);
    let per_cell = run_cells(cells.len(), plan.jobs, |i| {
        let (kind, seed) = cells[i];
        let cfg = plan.train_config(seed);
        let model = plan.model.build(kind, source.dims)?;
        let fitted = fit_fresh(&model, &source.examples, &cfg)?;
        let mut out = Vec::with_capacity(ks.len());
        for &k in ks {
            let adapted = kshot_adapt(&model, &fitted.params, &pool, k, &cfg, seed)?;
            let shot_idx: Vec<usize> = adapted.chosen.iter().map(|&j| pool_idx[j]).collect();
            ensure_disjoint(target, &shot_idx, &eval_idx)?;
            let metrics = train::evaluate(&model, &adapted.params, &eval)?;
            out.push(RunRecord {
                protocol: Protocol::Kshot,
                model: kind,
                ablation: None,
                source: source.name.clone(),
                target: target.name.clone(),
                k: Some(k),
                seed,
                model_config: model.clone(),
                train_samples: source.len(),
                history: fitted.history.clone(),
                adaptation: (k > 0).then_some(adapted.history),
                shots: target.ids_at(&shot_idx).into_iter().map(String::from).collect(),
                metrics,
            });
        }
        Ok(out)
    })?;
    Ok(per_cell.into_iter().flatten().collect())
}

/// The seven module combinations. Each variant is gradient-checked at the
/// tiny configuration first (same attention mode and masking); then it is
/// trained on the source and evaluated on every target, or on a held-out
/// split of the source when there are no targets.
pub fn run_ablation(
    source: &Dataset,
    targets: &[Dataset],
    plan: &Plan,
    gradcheck_seed: u64,
) -> Result<(Vec<GradcheckRow>, Vec<RunRecord>)> {
    for t in targets {
        check_compatible(source, t)?;
    }
    let tiny = {
        let mut c = mdat_core::mdat::MdatConfig::tiny();
        c.coatt_mode = plan.model.coatt_mode;
        c.mask_padding = plan.model.mask_padding;
        c
    };
    let mut rng = ChaCha8Rng::seed_from_u64(gradcheck_seed);
    let mut checks = Vec::with_capacity(7);
    for (i, a) in Ablation::ALL.into_iter().enumerate() {
        let model = Model::Mdat(tiny.clone().with_ablation(a));
        let row = gradcheck_model(format!("model{}", a.number()), &model, i, &mut rng)?;
        if !(row.double < ABLATION_GRADCHECK_TOLERANCE) {
            return Err(Error::GradientCheck {
                model: row.model,
                error: row.double,
                tolerance: ABLATION_GRADCHECK_TOLERANCE,
            });
        }
        checks.push(row);
    }

    let evals: Vec<(String, Vec<Example>)> = targets
        .iter()
        .map(|t| Ok((t.name.clone(), t.examples_at(&eval_pool(t)?))))
        .collect::<Result<_>>()?;
    let cells = grid(&Ablation::ALL, &plan.seeds);
    let per_cell = run_cells(cells.len(), plan.jobs, |i| {
        let (ablation, seed) = cells[i];
        let model = plan.model.clone().with_ablation(ablation).build(ModelKind::Mdat, source.dims)?;
        let cfg = plan.train_config(seed);
        let record = |target: String, train_samples, fitted: &Fitted, metrics| RunRecord {
            protocol: Protocol::Ablation,
            model: ModelKind::Mdat,
            ablation: Some(ablation.number()),
            source: source.name.clone(),
            target,
            k: None,
            seed,
            model_config: model.clone(),
            train_samples,
            history: fitted.history.clone(),
            adaptation: None,
            shots: Vec::new(),
            metrics,
        };
        if evals.is_empty() {
            let (train_idx, test_idx) = within_split(source, plan.fraction, seed)?;
            let fitted = fit_fresh(&model, &source.examples_at(&train_idx), &cfg)?;
            let metrics = train::evaluate(&model, &fitted.params, &source.examples_at(&test_idx))?;
            return Ok(vec![record(source.name.clone(), train_idx.len(), &fitted, metrics)]);
        }
        let fitted = fit_fresh(&model, &source.examples, &cfg)?;
        evals
            .iter()
            .map(|(name, eval)| {
                let metrics = train::evaluate(&model, &fitted.params, eval)?;
                Ok(record(name.clone(), source.len(), &fitted, metrics))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok((checks, per_cell.into_iter().flatten().collect()))
}
