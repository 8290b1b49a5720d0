use mdat_core::baseline::BaselineConfig;
use mdat_core::mdat::{Ablation, MdatConfig};
use mdat_core::{Model, ModelInput, ParamSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::Result;

pub const GRADCHECK_EPS: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckRow {
    pub model: String,
    /// Max relative error of the `f64` analytic gradient.
    pub double: f64,
    /// Max relative error of the `f32` analytic gradient.
    pub single: f64,
    /// Parameter entry with the largest `f64` error.
    pub worst: Option<String>,
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

/// Checks one model at a random input and initialisation drawn from `rng`.
pub fn gradcheck_model(name: String, model: &Model, label: usize, rng: &mut ChaCha8Rng) -> Result<GradcheckRow> {
    let input = match model {
        Model::Mdat(c) => {
            let input = ModelInput::new(
                random_matrix(c.seq_len, c.d_model, rng),
                random_matrix(c.seq_len, c.d_text, rng),
            );
            if c.mask_padding {
                input.with_lengths(c.seq_len.div_ceil(2), c.seq_len - 1)
            } else {
                input
            }
        }
        Model::Baseline(c) => {
            ModelInput::new(random_matrix(5, c.d_speech, rng), random_matrix(5, c.d_text, rng))
        }
    };
    let params: ParamSet<f64> = model.init_params(rng)?;
    let r = model.check_gradients(&params, &input, label % model.n_classes(), GRADCHECK_EPS)?;
    Ok(GradcheckRow {
        model: name,
        double: r.double.max_relative_error,
        single: r.single.max_relative_error,
        worst: r.double.worst.map(|(p, i)| format!("{p}[{i}]")),
    })
}

/// The seven ablation variants of `base` followed by the baseline.
pub fn gradcheck_suite(base: &MdatConfig, baseline: &BaselineConfig, seed: u64) -> Result<Vec<GradcheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(8);
    for (i, a) in Ablation::ALL.into_iter().enumerate() {
        let model = Model::Mdat(base.clone().with_ablation(a));
        rows.push(gradcheck_model(format!("model{}", a.number()), &model, i, &mut rng)?);
    }
    rows.push(gradcheck_model("baseline".into(), &Model::Baseline(baseline.clone()), 7, &mut rng)?);
    Ok(rows)
}
