//! BiLSTM comparison model: one bidirectional LSTM per modality, mean
//! pooling, concatenation, a regularised dense layer with dropout and a
//! softmax output.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::model::ModelInput;
use crate::numerics::{Dropout, Graph, NodeId, Scalar, Tensor};
use crate::params::{xavier_uniform, zeros_vector};
use crate::{Error, ParamSet, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub d_speech: usize,
    pub d_text: usize,
    /// LSTM hidden width per direction.
    pub hidden: usize,
    /// Width of the dense layer in the head.
    pub dense: usize,
    pub n_classes: usize,
    pub dropout_p: f64,
    /// L2 coefficient on the dense head weights.
    pub l2: f64,
}

impl BaselineConfig {
    pub fn new(d_speech: usize, d_text: usize, n_classes: usize) -> Self {
        Self {
            d_speech,
            d_text,
            hidden: 128,
            dense: 128,
            n_classes,
            dropout_p: 0.1,
            l2: 1e-4,
        }
    }

    /// `D = 6`, `h = 4`, 4 classes, dropout off.
    pub fn tiny() -> Self {
        Self {
            hidden: 4,
            dense: 8,
            dropout_p: 0.0,
            ..Self::new(6, 5, 4)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_speech", self.d_speech),
            ("d_text", self.d_text),
            ("hidden", self.hidden),
            ("dense", self.dense),
            ("n_classes", self.n_classes),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Baseline {
    config: BaselineConfig,
}

const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

impl Baseline {
    pub fn new(config: BaselineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    pub fn init_params<S: Scalar>(&self, rng: &mut dyn RngCore) -> ParamSet<S> {
        let c = &self.config;
        let (d, h) = (c.d_speech, c.hidden);
        let mut p = ParamSet::new();
        // Text goes through the same kernel-1 projection as the fusion model.
        p.push("proj.weight", xavier_uniform(c.d_text, d, rng));
        p.push("proj.bias", zeros_vector(d));
        for m in ["speech", "text"] {
            for dir in DIRECTIONS {
                p.push(&format!("lstm.{m}.{dir}.w_x"), xavier_uniform(d, 4 * h, rng));
                p.push(&format!("lstm.{m}.{dir}.w_h"), xavier_uniform(h, 4 * h, rng));
                p.push(&format!("lstm.{m}.{dir}.bias"), zeros_vector(4 * h));
            }
        }
        p.push("head.weight", xavier_uniform(4 * h, c.dense, rng));
        p.push("head.bias", zeros_vector(c.dense));
        p.push("out.weight", xavier_uniform(c.dense, c.n_classes, rng));
        p.push("out.bias", zeros_vector(c.n_classes));
        p
    }

    fn param<'a, S: Scalar>(&self, g: &mut Graph<'a, S>, params: &'a ParamSet<S>, name: &str) -> Result<NodeId> {
        let idx = params.index_of(name).ok_or_else(|| Error::Param {
            name: String::from(name),
            reason: String::from("missing"),
        })?;
        Ok(g.param(idx, params.get(idx)))
    }

    /// One LSTM direction. Gate columns are ordered input, forget,
    /// candidate, output. Returns the per-step hidden states in time order.
    fn lstm_direction<'a, S: Scalar>(
        &self,
        g: &mut Graph<'a, S>,
        params: &'a ParamSet<S>,
        prefix: &str,
        x: NodeId,
        reverse: bool,
    ) -> Result<Vec<NodeId>> {
        let h = self.config.hidden;
        let t_len = g.value(x).rows();
        let w_x = self.param(g, params, &format!("{prefix}.w_x"))?;
        let w_h = self.param(g, params, &format!("{prefix}.w_h"))?;
        let bias = self.param(g, params, &format!("{prefix}.bias"))?;
        // Input contributions for all steps at once.
        let xz = g.affine(x, w_x, bias)?;

        let mut state: Option<(NodeId, NodeId)> = None;
        let mut outputs = alloc::vec![None; t_len];
        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        for t in order {
            let mut z = g.slice_rows(xz, t, 1)?;
            if let Some((h_prev, _)) = state {
                let rec = g.matmul(h_prev, w_h)?;
                z = g.add(z, rec)?;
            }
            let i = g.slice_cols(z, 0, h)?;
            let i = g.sigmoid(i)?;
            let f = g.slice_cols(z, h, h)?;
            let f = g.sigmoid(f)?;
            let cand = g.slice_cols(z, 2 * h, h)?;
            let cand = g.tanh(cand)?;
            let o = g.slice_cols(z, 3 * h, h)?;
            let o = g.sigmoid(o)?;
            let ig = g.mul(i, cand)?;
            let c = match state {
                Some((_, c_prev)) => {
                    let keep = g.mul(f, c_prev)?;
                    g.add(keep, ig)?
                }
                None => ig,
            };
            let tc = g.tanh(c)?;
            let h_new = g.mul(o, tc)?;
            outputs[t] = Some(h_new);
            state = Some((h_new, c));
        }
        Ok(outputs.into_iter().map(|o| o.expect("every step visited")).collect())
    }

    /// Forward and backward LSTM over `x`, outputs concatenated per step:
    /// `T x 2h`.
    pub fn bilstm_encode<'a, S: Scalar>(
        &self,
        g: &mut Graph<'a, S>,
        params: &'a ParamSet<S>,
        modality: &str,
        x: NodeId,
    ) -> Result<NodeId> {
        let fwd = self.lstm_direction(g, params, &format!("lstm.{modality}.fwd"), x, false)?;
        let bwd = self.lstm_direction(g, params, &format!("lstm.{modality}.bwd"), x, true)?;
        let fwd = g.concat_rows(&fwd)?;
        let bwd = g.concat_rows(&bwd)?;
        g.concat_cols(&[fwd, bwd])
    }

    pub fn logits<'a, S: Scalar>(
        &self,
        g: &mut Graph<'a, S>,
        params: &'a ParamSet<S>,
        input: &'a ModelInput<S>,
        dropout: &mut Dropout<'_>,
    ) -> Result<NodeId> {
        let c = &self.config;
        if input.speech.cols() != c.d_speech || input.text.cols() != c.d_text {
            return Err(Error::Shape {
                op: "baseline input",
                left: alloc::vec![input.speech.cols(), input.text.cols()],
                right: alloc::vec![c.d_speech, c.d_text],
            });
        }
        let speech = g.input(&input.speech);
        let text = g.input(&input.text);
        let pw = self.param(g, params, "proj.weight")?;
        let pb = self.param(g, params, "proj.bias")?;
        let text = g.affine(text, pw, pb)?;

        let es = self.bilstm_encode(g, params, "speech", speech)?;
        let et = self.bilstm_encode(g, params, "text", text)?;
        let ps = g.mean_rows(es)?;
        let pt = g.mean_rows(et)?;
        let cat = g.concat_cols(&[ps, pt])?;

        let hw = self.param(g, params, "head.weight")?;
        let hb = self.param(g, params, "head.bias")?;
        let hidden = g.affine(cat, hw, hb)?;
        let hidden = g.relu(hidden)?;
        let hidden = g.dropout(hidden, S::from_f64(c.dropout_p), dropout)?;
        let ow = self.param(g, params, "out.weight")?;
        let ob = self.param(g, params, "out.bias")?;
        g.affine(hidden, ow, ob)
    }

    /// Adds `l2 * ||W_head||^2` to `loss`.
    pub fn add_penalty<'a, S: Scalar>(
        &self,
        g: &mut Graph<'a, S>,
        params: &'a ParamSet<S>,
        loss: NodeId,
    ) -> Result<NodeId> {
        if self.config.l2 == 0.0 {
            return Ok(loss);
        }
        let w = self.param(g, params, "head.weight")?;
        let sq = g.mul(w, w)?;
        let s = g.sum(sq)?;
        let pen = g.scale(s, S::from_f64(self.config.l2))?;
        g.add(loss, pen)
    }

    pub fn forward<S: Scalar>(&self, params: &ParamSet<S>, input: &ModelInput<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let l = self.logits(&mut g, params, input, &mut Dropout::Off)?;
        let p = g.softmax_rows(l)?;
        Ok(g.value(p).clone())
    }
}
