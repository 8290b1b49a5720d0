//! Multimodal dual attention transformer.
//!
//! Pipeline for one utterance with speech `T x D` and text `T x D_t`:
//!
//! 1. text is mapped to width `D` by a position-wise affine map (a kernel-1
//!    convolution over time);
//! 2. graph attention over one complete graph whose `2T` nodes are the rows
//!    of both modalities, GAT-style scoring with a split attention vector;
//! 3. co-attention between the two modalities, concatenated with its input;
//! 4. one post-norm transformer encoder layer per modality;
//! 5. mean pooling over time, concatenation, affine, softmax.
//!
//! Stages 2-4 can be switched off independently for ablations.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::model::ModelInput;
use crate::numerics::{Dropout, Graph, NodeId, Scalar, Tensor};
use crate::params::{ones_vector, xavier_uniform, zeros_vector};
use crate::{Error, ParamSet, Result};

/// Additive score for masked keys; large enough that `exp` underflows to 0.
const MASK_SCORE: f64 = -1e9;

/// How co-attention weights are turned into attended features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CoAttentionMode {
    /// `x'_s = alpha_s * in_t`: each speech step gathers text context.
    #[default]
    Context,
    /// `x'_s = in_s` scaled per row by the mean attention each speech step
    /// receives from the text side.
    Gate,
}

/// The seven module combinations of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    Model1,
    Model2,
    Model3,
    Model4,
    Model5,
    Model6,
    Model7,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::Model1,
        Ablation::Model2,
        Ablation::Model3,
        Ablation::Model4,
        Ablation::Model5,
        Ablation::Model6,
        Ablation::Model7,
    ];

    pub fn number(self) -> usize {
        self as usize + 1
    }

    pub fn from_number(n: usize) -> Option<Self> {
        Self::ALL.get(n.wrapping_sub(1)).copied()
    }

    /// `(graph attention, co-attention, transformer encoder)`.
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            Ablation::Model1 => (true, true, true),
            Ablation::Model2 => (true, true, false),
            Ablation::Model3 => (true, false, false),
            Ablation::Model4 => (false, true, false),
            Ablation::Model5 => (false, false, true),
            Ablation::Model6 => (false, true, true),
            Ablation::Model7 => (true, false, true),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdatConfig {
    /// Shared width after projection; equals the speech feature width.
    pub d_model: usize,
    /// Text feature width before projection.
    pub d_text: usize,
    /// Graph attention output width `U`.
    pub graph_width: usize,
    /// Aligned sequence length `T` for both modalities.
    pub seq_len: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_classes: usize,
    pub leaky_slope: f64,
    pub dropout_p: f64,
    pub layer_norm_eps: f64,
    pub coatt_mode: CoAttentionMode,
    pub use_graph: bool,
    pub use_coatt: bool,
    pub use_transformer: bool,
    pub mask_padding: bool,
}

impl MdatConfig {
    /// Full model with the default hyperparameters: `U = D`, 4 heads,
    /// `d_ff = 4 * d_enc`, slope 0.2, dropout 0.1.
    pub fn new(d_model: usize, d_text: usize, seq_len: usize, n_classes: usize) -> Self {
        let mut c = Self {
            d_model,
            d_text,
            graph_width: d_model,
            seq_len,
            n_heads: 4,
            d_ff: 0,
            n_classes,
            leaky_slope: 0.2,
            dropout_p: 0.1,
            layer_norm_eps: 1e-5,
            coatt_mode: CoAttentionMode::Context,
            use_graph: true,
            use_coatt: true,
            use_transformer: true,
            mask_padding: false,
        };
        c.d_ff = 4 * c.encoder_width();
        c
    }

    /// The small configuration used for gradient checks: `D = U = 8`,
    /// `T = 6`, 2 heads, `d_ff = 16`, 4 classes, dropout off.
    pub fn tiny() -> Self {
        Self {
            n_heads: 2,
            d_ff: 16,
            dropout_p: 0.0,
            ..Self::new(8, 6, 6, 4)
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        let (g, c, t) = ablation.flags();
        self.use_graph = g;
        self.use_coatt = c;
        self.use_transformer = t;
        self
    }

    /// The ablation row matching the current flags, if any.
    pub fn ablation(&self) -> Option<Ablation> {
        let flags = (self.use_graph, self.use_coatt, self.use_transformer);
        Ablation::ALL.into_iter().find(|a| a.flags() == flags)
    }

    /// Width of the features entering co-attention.
    pub fn fusion_width(&self) -> usize {
        if self.use_graph {
            self.graph_width
        } else {
            self.d_model
        }
    }

    /// Width of the features entering the encoders (and the pooled width).
    pub fn encoder_width(&self) -> usize {
        if self.use_coatt {
            2 * self.fusion_width()
        } else {
            self.fusion_width()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("d_text", self.d_text),
            ("graph_width", self.graph_width),
            ("seq_len", self.seq_len),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("n_classes", self.n_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.use_transformer && self.encoder_width() % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "encoder width {} is not divisible by n_heads {}",
                self.encoder_width(),
                self.n_heads
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope <= 1.0) {
            return Err(Error::Config(format!("leaky_slope {} outside (0, 1]", self.leaky_slope)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Which modality an encoder belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Speech,
    Text,
}

impl Modality {
    fn prefix(self) -> &'static str {
        match self {
            Modality::Speech => "speech",
            Modality::Text => "text",
        }
    }
}

/// Optional capture of attention intermediates for inspection and tests.
#[derive(Clone, Debug, Default)]
pub struct AttentionTrace<S: Scalar> {
    /// Stacked node features `[x_s; x_t]`, `2T x D`.
    pub z: Option<Tensor<S>>,
    /// Transformed nodes `Z W_g`, `2T x U`.
    pub h: Option<Tensor<S>>,
    /// Raw graph scores after LeakyReLU, `2T x 2T`.
    pub graph_scores: Option<Tensor<S>>,
    /// Graph attention weights, `2T x 2T`.
    pub graph_alpha: Option<Tensor<S>>,
    pub h_s: Option<Tensor<S>>,
    pub h_t: Option<Tensor<S>>,
    /// Co-attention matrix `H_s H_t^T`, `T x T`.
    pub coattention: Option<Tensor<S>>,
    pub alpha_s: Option<Tensor<S>>,
    pub alpha_t: Option<Tensor<S>>,
    pub attended_s: Option<Tensor<S>>,
    pub attended_t: Option<Tensor<S>>,
    /// Self-attention weights of every encoder head.
    pub encoder_heads: Vec<(Modality, usize, Tensor<S>)>,
}

impl<S: Scalar> AttentionTrace<S> {
    /// Every captured matrix whose rows should be probability vectors.
    pub fn attention_matrices(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        for (name, t) in [
            ("graph_alpha", &self.graph_alpha),
            ("alpha_s", &self.alpha_s),
            ("alpha_t", &self.alpha_t),
        ] {
            if let Some(t) = t {
                out.push((String::from(name), t));
            }
        }
        for (m, h, t) in &self.encoder_heads {
            out.push((format!("{}.head{}", m.prefix(), h), t));
        }
        out
    }
}

/// A validated MDAT configuration with its forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Mdat {
    config: MdatConfig,
}

/// Binds parameters by name onto a graph.
struct Binder<'a, S: Scalar> {
    params: &'a ParamSet<S>,
}

impl<'a, S: Scalar> Binder<'a, S> {
    fn new(params: &'a ParamSet<S>) -> Self {
        Self { params }
    }

    fn get(&self, g: &mut Graph<'a, S>, name: &str) -> Result<NodeId> {
        let idx = self.params.index_of(name).ok_or_else(|| Error::Param {
            name: String::from(name),
            reason: String::from("missing"),
        })?;
        Ok(g.param(idx, self.params.get(idx)))
    }
}

impl Mdat {
    pub fn new(config: MdatConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &MdatConfig {
        &self.config
    }

    /// Fresh parameters: Xavier-uniform weights, zero biases and layer-norm
    /// shifts, unit layer-norm scales.
    pub fn init_params<S: Scalar>(&self, rng: &mut dyn RngCore) -> ParamSet<S> {
        let c = &self.config;
        let mut p = ParamSet::new();
        let d = c.d_model;
        p.push("proj.weight", xavier_uniform(c.d_text, d, rng));
        p.push("proj.bias", zeros_vector(d));
        if c.use_graph {
            let u = c.graph_width;
            p.push("graph.weight", xavier_uniform(d, u, rng));
            let att = xavier_uniform::<S, _>(2 * u, 1, rng)
                .reshape(vec![2 * u])
                .expect("same length");
            p.push("graph.att", att);
        }
        let w = c.fusion_width();
        if c.use_coatt {
            p.push("coatt.speech.weight", xavier_uniform(w, w, rng));
            p.push("coatt.speech.bias", zeros_vector(w));
            p.push("coatt.text.weight", xavier_uniform(w, w, rng));
            p.push("coatt.text.bias", zeros_vector(w));
        }
        let e = c.encoder_width();
        if c.use_transformer {
            for m in [Modality::Speech, Modality::Text] {
                let pre = format!("enc.{}", m.prefix());
                for proj in ["wq", "wk", "wv", "wo"] {
                    p.push(&format!("{pre}.{proj}"), xavier_uniform(e, e, rng));
                }
                p.push(&format!("{pre}.ln1.gamma"), ones_vector(e));
                p.push(&format!("{pre}.ln1.beta"), zeros_vector(e));
                p.push(&format!("{pre}.ff1.weight"), xavier_uniform(e, c.d_ff, rng));
                p.push(&format!("{pre}.ff1.bias"), zeros_vector(c.d_ff));
                p.push(&format!("{pre}.ff2.weight"), xavier_uniform(c.d_ff, e, rng));
                p.push(&format!("{pre}.ff2.bias"), zeros_vector(e));
                p.push(&format!("{pre}.ln2.gamma"), ones_vector(e));
                p.push(&format!("{pre}.ln2.beta"), zeros_vector(e));
            }
        }
        p.push("cls.weight", xavier_uniform(2 * e, c.n_classes, rng));
        p.push("cls.bias", zeros_vector(c.n_classes));
        p
    }

    fn check_input<S: Scalar>(&self, input: &ModelInput<S>) -> Result<()> {
        let c = &self.config;
        let (s, t) = (&input.speech, &input.text);
        if s.rows() != c.seq_len || s.cols() != c.d_model {
            return Err(Error::Shape {
                op: "mdat speech input",
                left: s.shape().to_vec(),
                right: vec![c.seq_len, c.d_model],
            });
        }
        if t.rows() != c.seq_len || t.cols() != c.d_text {
            return Err(Error::Shape {
                op: "mdat text input",
                left: t.shape().to_vec(),
                right: vec![c.seq_len, c.d_text],
            });
        }
        Ok(())
    }

    /// Key mask for `queries x keys`, or `None` when masking is off or every
    /// key is valid.
    fn key_mask<S: Scalar>(&self, queries: usize, valid: &[bool]) -> Option<Tensor<S>> {
        if !self.config.mask_padding || valid.iter().all(|&v| v) {
            return None;
        }
        let row: Vec<S> = valid
            .iter()
            .map(|&v| if v { S::zero() } else { S::from_f64(MASK_SCORE) })
            .collect();
        let mut data = Vec::with_capacity(queries * row.len());
        for _ in 0..queries {
            data.extend_from_slice(&row);
        }
        Some(Tensor::matrix(queries, valid.len(), data).expect("mask shape"))
    }

    fn valid(&self, len: usize) -> Vec<bool> {
        (0..self.config.seq_len).map(|i| i < len).collect()
    }

    fn masked_softmax<S: Scalar>(
        &self,
        g: &mut Graph<'_, S>,
        scores: NodeId,
        valid: &[bool],
    ) -> Result<NodeId> {
        let rows = g.value(scores).rows();
        let scores = match self.key_mask(rows, valid) {
            Some(mask) => {
                let m = g.constant(mask);
                g.add(scores, m)?
            }
            None => scores,
        };
        g.softmax_rows(scores)
    }

    /// Speech passes through unchanged; text is mapped to width `D` by the
    /// position-wise affine map.
    pub fn project_inputs<'a, S: Scalar>(
        &self,
        g: &mut Graph<'a, S>,
        params: &'a ParamSet<S>,
        input: &'a ModelInput<S>,
    ) -> Result<(NodeId, NodeId)> {
        self.check_input(input)?;
        let b = Binder::new(params);
        let speech = g.input(&input.speech);
        let text = g.input(&input.text);
        let w = b.get(g, "proj.weight")?;
        let bias = b.get(g, "proj.bias")?;
        let text = g.affine(text, w, bias)?;
        Ok((speech, text))
    }

    /// Joint graph attention over the `2T` rows of both modalities.
    ///
    /// `A[i][j] = LeakyReLU(a_src . h_i + a_dst . h_j)` over the complete
    /// graph with self-loops, `alpha = softmax_rows(A)`, output `alpha H`
    /// split back into the speech and text halves.
    pub fn graph_attention<'a, S: Scalar>(
        &self,
        g: &mut Graph<'a, S>,
        params: &'a ParamSet<S>,
        speech: NodeId,
        text: NodeId,
        lengths: (usize, usize),
        mut trace: Option<&mut AttentionTrace<S>>,
    ) -> Result<(NodeId, NodeId)> {
        let c = &self.config;
        let b = Binder::new(params);
        let (ts, tt) = (g.value(speech).rows(), g.value(text).rows());
        if ts != tt || g.value(speech).cols() != g.value(text).cols() {
            return Err(Error::Shape {
                op: "graph_attention",
                left: g.value(speech).shape().to_vec(),
                right: g.value(text).shape().to_vec(),
            });
        }
        let n = ts + tt;
        let u = c.graph_width;
        let z = g.concat_rows(&[speech, text])?;
        let w = b.get(g, "graph.weight")?;
        let h = g.matmul(z, w)?;

        let att = b.get(g, "graph.att")?;
        let a_src = g.slice_cols(att, 0, u)?;
        let a_src = g.transpose(a_src)?;
        let a_dst = g.slice_cols(att, u, u)?;
        let a_dst = g.transpose(a_dst)?;
        let s_src = g.matmul(h, a_src)?; // n x 1
        let s_dst = g.matmul(h, a_dst)?; // n x 1

        // Broadcast to s_src[i] + s_dst[j] with rank-one products.
        let ones_row = g.constant(Tensor::full(&[1, n], S::one()));
        let ones_col = g.constant(Tensor::full(&[n, 1], S::one()));
        let src = g.matmul(s_src, ones_row)?;
        let dst_t = g.transpose(s_dst)?;
        let dst = g.matmul(ones_col, dst_t)?;
        let pre = g.add(src, dst)?;
        let scores = g.leaky_relu(pre, S::from_f64(c.leaky_slope))?;

        let mut valid = self.valid(lengths.0);
        valid.extend(self.valid(lengths.1));
        let alpha = self.masked_softmax(g, scores, &valid)?;
        let out = g.matmul(alpha, h)?;
        let gs = g.slice_rows(out, 0, ts)?;
        let gt = g.slice_rows(out, ts, tt)?;

        if let Some(tr) = trace.as_deref_mut() {
            tr.z = Some(g.value(z).clone());
            tr.h = Some(g.value(h).clone());
            tr.graph_scores = Some(g.value(scores).clone());
            tr.graph_alpha = Some(g.value(alpha).clone());
        }
        Ok((gs, gt))
    }

    /// Co-attention between the modalities; returns `[in ; attended]` for
    /// each side (width doubles).
    pub fn co_attention<'a, S: Scalar>(
        &self,
        g: &mut Graph<'a, S>,
        params: &'a ParamSet<S>,
        in_s: NodeId,
        in_t: NodeId,
        lengths: (usize, usize),
        mut trace: Option<&mut AttentionTrace<S>>,
    ) -> Result<(NodeId, NodeId)> {
        let (vs, vt) = (g.value(in_s), g.value(in_t));
        if vs.cols() != vt.cols() || vs.rows() != vt.rows() {
            return Err(Error::Shape {
                op: "co_attention",
                left: vs.shape().to_vec(),
                right: vt.shape().to_vec(),
            });
        }
        let (t, width) = (vs.rows(), vs.cols());
        let b = Binder::new(params);
        let ws = b.get(g, "coatt.speech.weight")?;
        let bs = b.get(g, "coatt.speech.bias")?;
        let wt = b.get(g, "coatt.text.weight")?;
        let bt = b.get(g, "coatt.text.bias")?;
        let h_s = g.affine(in_s, ws, bs)?;
        let h_t = g.affine(in_t, wt, bt)?;
        let h_t_tr = g.transpose(h_t)?;
        let cmat = g.matmul(h_s, h_t_tr)?; // speech x text
        let cmat_tr = g.transpose(cmat)?;
        let alpha_s = self.masked_softmax(g, cmat, &self.valid(lengths.1))?;
        let alpha_t = self.masked_softmax(g, cmat_tr, &self.valid(lengths.0))?;

        let (att_s, att_t) = match self.config.coatt_mode {
            CoAttentionMode::Context => (g.matmul(alpha_s, in_t)?, g.matmul(alpha_t, in_s)?),
            CoAttentionMode::Gate => {
                let ones = g.constant(Tensor::full(&[1, width], S::one()));
                // Mean attention received per position, as a T x 1 column.
                let recv_s = g.mean_rows(alpha_t)?;
                let recv_s = g.transpose(recv_s)?;
                let gate_s = g.matmul(recv_s, ones)?;
                let recv_t = g.mean_rows(alpha_s)?;
                let recv_t = g.transpose(recv_t)?;
                let gate_t = g.matmul(recv_t, ones)?;
                debug_assert_eq!(g.value(gate_s).rows(), t);
                (g.mul(in_s, gate_s)?, g.mul(in_t, gate_t)?)
            }
        };
        let out_s = g.concat_cols(&[in_s, att_s])?;
        let out_t = g.concat_cols(&[in_t, att_t])?;

        if let Some(tr) = trace.as_deref_mut() {
            tr.h_s = Some(g.value(h_s).clone());
            tr.h_t = Some(g.value(h_t).clone());
            tr.coattention = Some(g.value(cmat).clone());
            tr.alpha_s = Some(g.value(alpha_s).clone());
            tr.alpha_t = Some(g.value(alpha_t).clone());
            tr.attended_s = Some(g.value(att_s).clone());
            tr.attended_t = Some(g.value(att_t).clone());
        }
        Ok((out_s, out_t))
    }

    /// One post-norm encoder layer: multi-head self-attention, residual,
    /// layer norm, ReLU feed-forward, residual, layer norm.
    #[allow(clippy::too_many_arguments)]
    pub fn transformer_encode<'a, S: Scalar>(
        &self,
        g: &mut Graph<'a, S>,
        params: &'a ParamSet<S>,
        modality: Modality,
        x: NodeId,
        len: usize,
        dropout: &mut Dropout<'_>,
        mut trace: Option<&mut AttentionTrace<S>>,
    ) -> Result<NodeId> {
        let c = &self.config;
        let d = g.value(x).cols();
        if d % c.n_heads != 0 {
            return Err(Error::Config(format!(
                "encoder width {d} is not divisible by n_heads {}",
                c.n_heads
            )));
        }
        let b = Binder::new(params);
        let pre = format!("enc.{}", modality.prefix());
        let p = |g: &mut Graph<'a, S>, name: &str| b.get(g, &format!("{pre}.{name}"));
        let drop_p = S::from_f64(c.dropout_p);
        let eps = S::from_f64(c.layer_norm_eps);

        let (wq, wk, wv, wo) = (p(g, "wq")?, p(g, "wk")?, p(g, "wv")?, p(g, "wo")?);
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let dh = d / c.n_heads;
        let scale = S::one() / S::from_f64(dh as f64).sqrt();
        let valid = self.valid(len);
        let mut heads = Vec::with_capacity(c.n_heads);
        for head in 0..c.n_heads {
            let qh = g.slice_cols(q, head * dh, dh)?;
            let kh = g.slice_cols(k, head * dh, dh)?;
            let vh = g.slice_cols(v, head * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale)?;
            let alpha = self.masked_softmax(g, scores, &valid)?;
            if let Some(tr) = trace.as_deref_mut() {
                tr.encoder_heads.push((modality, head, g.value(alpha).clone()));
            }
            heads.push(g.matmul(alpha, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        let attn = g.matmul(cat, wo)?;
        let attn = g.dropout(attn, drop_p, dropout)?;
        let r1 = g.add(x, attn)?;
        let (g1, b1) = (p(g, "ln1.gamma")?, p(g, "ln1.beta")?);
        let n1 = g.layer_norm(r1, g1, b1, eps)?;

        let (w1, bb1) = (p(g, "ff1.weight")?, p(g, "ff1.bias")?);
        let (w2, bb2) = (p(g, "ff2.weight")?, p(g, "ff2.bias")?);
        let f = g.affine(n1, w1, bb1)?;
        let f = g.relu(f)?;
        let f = g.affine(f, w2, bb2)?;
        let f = g.dropout(f, drop_p, dropout)?;
        let r2 = g.add(n1, f)?;
        let (g2, b2) = (p(g, "ln2.gamma")?, p(g, "ln2.beta")?);
        g.layer_norm(r2, g2, b2, eps)
    }

    fn pool<S: Scalar>(&self, g: &mut Graph<'_, S>, x: NodeId, len: usize) -> Result<NodeId> {
        let t = g.value(x).rows();
        if !self.config.mask_padding || len >= t {
            return g.mean_rows(x);
        }
        let w = S::one() / S::from_f64(len as f64);
        let data = (0..t).map(|i| if i < len { w } else { S::zero() }).collect();
        let weights = g.constant(Tensor::matrix(1, t, data)?);
        g.matmul(weights, x)
    }

    /// Mean-pools both encodings over time, concatenates them and applies
    /// the output affine map. Returns logits; apply softmax for probabilities.
    pub fn classify<'a, S: Scalar>(
        &self,
        g: &mut Graph<'a, S>,
        params: &'a ParamSet<S>,
        enc_s: NodeId,
        enc_t: NodeId,
        lengths: (usize, usize),
    ) -> Result<NodeId> {
        let b = Binder::new(params);
        let ps = self.pool(g, enc_s, lengths.0)?;
        let pt = self.pool(g, enc_t, lengths.1)?;
        let cat = g.concat_cols(&[ps, pt])?;
        let w = b.get(g, "cls.weight")?;
        let bias = b.get(g, "cls.bias")?;
        g.affine(cat, w, bias)
    }

    /// Full forward pass to logits, wired according to the ablation flags.
    pub fn logits<'a, S: Scalar>(
        &self,
        g: &mut Graph<'a, S>,
        params: &'a ParamSet<S>,
        input: &'a ModelInput<S>,
        dropout: &mut Dropout<'_>,
        mut trace: Option<&mut AttentionTrace<S>>,
    ) -> Result<NodeId> {
        let c = &self.config;
        let lengths = (input.speech_len, input.text_len);
        let (mut s, mut t) = self.project_inputs(g, params, input)?;
        if c.use_graph {
            (s, t) = self.graph_attention(g, params, s, t, lengths, trace.as_deref_mut())?;
        }
        if c.use_coatt {
            (s, t) = self.co_attention(g, params, s, t, lengths, trace.as_deref_mut())?;
        }
        if c.use_transformer {
            s = self.transformer_encode(g, params, Modality::Speech, s, lengths.0, dropout, trace.as_deref_mut())?;
            t = self.transformer_encode(g, params, Modality::Text, t, lengths.1, dropout, trace.as_deref_mut())?;
        }
        self.classify(g, params, s, t, lengths)
    }

    /// Class probabilities (dropout off), optionally with a trace.
    pub fn forward<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        input: &ModelInput<S>,
        trace: Option<&mut AttentionTrace<S>>,
    ) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let logits = self.logits(&mut g, params, input, &mut Dropout::Off, trace)?;
        let p = g.softmax_rows(logits)?;
        Ok(g.value(p).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(c: &MdatConfig, rng: &mut ChaCha8Rng) -> ModelInput<f64> {
        let mut m = |r: usize, k: usize| {
            let data = (0..r * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::matrix(r, k, data).unwrap()
        };
        let s = m(c.seq_len, c.d_model);
        let t = m(c.seq_len, c.d_text);
        ModelInput::new(s, t)
    }

    fn set(p: &mut ParamSet<f64>, name: &str, t: Tensor<f64>) {
        let i = p.index_of(name).unwrap();
        *p.get_mut(i) = t;
    }

    #[test]
    fn ablation_numbering() {
        for (i, a) in Ablation::ALL.iter().enumerate() {
            assert_eq!(a.number(), i + 1);
            assert_eq!(Ablation::from_number(i + 1), Some(*a));
        }
        assert_eq!(Ablation::from_number(0), None);
        assert_eq!(Ablation::from_number(8), None);
        assert_eq!(MdatConfig::tiny().ablation(), Some(Ablation::Model1));
    }

    #[test]
    fn head_divisibility_is_validated() {
        let mut c = MdatConfig::tiny();
        c.n_heads = 3;
        assert!(matches!(Mdat::new(c.clone()), Err(Error::Config(_))));
        // Without the encoder the head count does not matter.
        c.use_transformer = false;
        assert!(Mdat::new(c).is_ok());
    }

    #[test]
    fn projection_zero_and_identity() {
        let mut c = MdatConfig::tiny();
        c.d_text = c.d_model;
        let m = Mdat::new(c.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p: ParamSet<f64> = m.init_params(&mut rng);
        let input = random_input(&c, &mut rng);

        set(&mut p, "proj.weight", Tensor::zeros(&[c.d_text, c.d_model]));
        let mut g = Graph::new();
        let (_, t) = m.project_inputs(&mut g, &p, &input).unwrap();
        assert!(g.value(t).data().iter().all(|&v| v == 0.0));

        set(&mut p, "proj.weight", Tensor::identity(c.d_model));
        let mut g = Graph::new();
        let (s, t) = m.project_inputs(&mut g, &p, &input).unwrap();
        assert_eq!(g.value(t), &input.text);
        assert_eq!(g.value(s), &input.speech);
    }

    #[test]
    fn projection_matches_per_row_affine() {
        let c = MdatConfig {
            d_model: 2,
            d_text: 3,
            seq_len: 4,
            graph_width: 2,
            n_heads: 1,
            ..MdatConfig::tiny()
        };
        let m = Mdat::new(c.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: ParamSet<f64> = m.init_params(&mut rng);
        let input = random_input(&c, &mut rng);
        let (w, b) = (p.by_name("proj.weight").unwrap(), p.by_name("proj.bias").unwrap());
        let mut g = Graph::new();
        let (_, t) = m.project_inputs(&mut g, &p, &input).unwrap();
        for r in 0..4 {
            for j in 0..2 {
                let mut acc = b.data()[j];
                for k in 0..3 {
                    acc += input.text.get(r, k) * w.get(k, j);
                }
                assert!((g.value(t).get(r, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_node_graph_with_zero_attention_is_uniform() {
        let c = MdatConfig {
            d_model: 1,
            d_text: 1,
            graph_width: 1,
            seq_len: 1,
            n_heads: 1,
            ..MdatConfig::tiny()
        };
        let m = Mdat::new(c.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p: ParamSet<f64> = m.init_params(&mut rng);
        set(&mut p, "graph.att", Tensor::zeros(&[2]));
        let input = ModelInput::new(Tensor::from_rows(&[[0.7]]), Tensor::from_rows(&[[-0.3]]));
        let mut g = Graph::new();
        let (s, t) = m.project_inputs(&mut g, &p, &input).unwrap();
        let mut tr = AttentionTrace::default();
        let (gs, gt) = m.graph_attention(&mut g, &p, s, t, (1, 1), Some(&mut tr)).unwrap();
        let alpha = tr.graph_alpha.unwrap();
        assert!(alpha.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let h = tr.h.unwrap();
        let mean = (h.data()[0] + h.data()[1]) / 2.0;
        assert!((g.value(gs).data()[0] - mean).abs() < 1e-15);
        assert!((g.value(gt).data()[0] - mean).abs() < 1e-15);
    }

    #[test]
    fn co_attention_single_step_swaps_content() {
        let c = MdatConfig {
            seq_len: 1,
            use_graph: false,
            ..MdatConfig::tiny()
        };
        let m = Mdat::new(c.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p: ParamSet<f64> = m.init_params(&mut rng);
        let input = random_input(&c, &mut rng);
        let mut g = Graph::new();
        let (s, t) = m.project_inputs(&mut g, &p, &input).unwrap();
        let mut tr = AttentionTrace::default();
        let (os, ot) = m.co_attention(&mut g, &p, s, t, (1, 1), Some(&mut tr)).unwrap();
        assert_eq!(tr.alpha_s.as_ref().unwrap().data(), &[1.0]);
        assert_eq!(tr.attended_s.as_ref().unwrap(), g.value(t));
        assert_eq!(tr.attended_t.as_ref().unwrap(), g.value(s));
        let d = c.d_model;
        assert_eq!(&g.value(os).data()[..d], g.value(s).data());
        assert_eq!(&g.value(os).data()[d..], g.value(t).data());
        assert_eq!(&g.value(ot).data()[d..], g.value(s).data());
    }

    #[test]
    fn identical_speech_rows_give_identical_attention_rows() {
        let c = MdatConfig {
            use_graph: false,
            ..MdatConfig::tiny()
        };
        let m = Mdat::new(c.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: ParamSet<f64> = m.init_params(&mut rng);
        let mut input = random_input(&c, &mut rng);
        let row: Vec<f64> = input.speech.row(0).to_vec();
        let mut data = Vec::new();
        for _ in 0..c.seq_len {
            data.extend_from_slice(&row);
        }
        input.speech = Tensor::matrix(c.seq_len, c.d_model, data).unwrap();
        let mut tr = AttentionTrace::default();
        m.forward(&p, &input, Some(&mut tr)).unwrap();
        let a = tr.alpha_s.unwrap();
        for r in 1..c.seq_len {
            assert_eq!(a.row(r), a.row(0));
        }
    }

    #[test]
    fn gate_mode_scales_rows() {
        let c = MdatConfig {
            use_graph: false,
            coatt_mode: CoAttentionMode::Gate,
            ..MdatConfig::tiny()
        };
        let m = Mdat::new(c.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p: ParamSet<f64> = m.init_params(&mut rng);
        let input = random_input(&c, &mut rng);
        let mut g = Graph::new();
        let (s, t) = m.project_inputs(&mut g, &p, &input).unwrap();
        let mut tr = AttentionTrace::default();
        m.co_attention(&mut g, &p, s, t, (c.seq_len, c.seq_len), Some(&mut tr)).unwrap();
        let alpha_t = tr.alpha_t.unwrap();
        let att = tr.attended_s.unwrap();
        let n = c.seq_len;
        for i in 0..n {
            let gate: f64 = (0..n).map(|j| alpha_t.get(j, i)).sum::<f64>() / n as f64;
            for k in 0..c.d_model {
                let expect = g.value(s).get(i, k) * gate;
                assert!((att.get(i, k) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_key_projection_gives_uniform_self_attention() {
        let c = MdatConfig::tiny();
        let m = Mdat::new(c.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p: ParamSet<f64> = m.init_params(&mut rng);
        let e = c.encoder_width();
        set(&mut p, "enc.speech.wk", Tensor::zeros(&[e, e]));
        let input = random_input(&c, &mut rng);
        let mut tr = AttentionTrace::default();
        m.forward(&p, &input, Some(&mut tr)).unwrap();
        let speech_heads: Vec<_> = tr.encoder_heads.iter().filter(|h| h.0 == Modality::Speech).collect();
        assert_eq!(speech_heads.len(), c.n_heads);
        let u = 1.0 / c.seq_len as f64;
        for (_, _, a) in speech_heads {
            assert!(a.data().iter().all(|&v| (v - u).abs() < 1e-15));
        }
    }

    #[test]
    fn zero_classifier_gives_uniform_probabilities() {
        let c = MdatConfig::tiny();
        let m = Mdat::new(c.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p: ParamSet<f64> = m.init_params(&mut rng);
        set(&mut p, "cls.weight", Tensor::zeros(&[2 * c.encoder_width(), c.n_classes]));
        let input = random_input(&c, &mut rng);
        let probs = m.forward(&p, &input, None).unwrap();
        assert!(probs.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn constant_encodings_pool_to_the_constant_row() {
        let c = MdatConfig::tiny();
        let m = Mdat::new(c.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p: ParamSet<f64> = m.init_params(&mut rng);
        let e = c.encoder_width();
        let row_s: Vec<f64> = (0..e).map(|i| 0.1 * i as f64).collect();
        let row_t: Vec<f64> = (0..e).map(|i| -0.05 * i as f64 + 0.3).collect();
        let rep = |row: &[f64]| {
            let mut d = Vec::new();
            for _ in 0..c.seq_len {
                d.extend_from_slice(row);
            }
            Tensor::matrix(c.seq_len, e, d).unwrap()
        };
        let (es, et) = (rep(&row_s), rep(&row_t));
        let mut g = Graph::new();
        let (ns, nt) = (g.input(&es), g.input(&et));
        let logits = m.classify(&mut g, &p, ns, nt, (c.seq_len, c.seq_len)).unwrap();
        let w = p.by_name("cls.weight").unwrap();
        let b = p.by_name("cls.bias").unwrap();
        let cat: Vec<f64> = row_s.iter().chain(&row_t).copied().collect();
        for k in 0..c.n_classes {
            let expect: f64 = b.data()[k] + cat.iter().enumerate().map(|(i, v)| v * w.get(i, k)).sum::<f64>();
            assert!((g.value(logits).data()[k] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn all_modules_off_is_classify_over_projected_inputs() {
        let c = MdatConfig {
            use_graph: false,
            use_coatt: false,
            use_transformer: false,
            ..MdatConfig::tiny()
        };
        let m = Mdat::new(c.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p: ParamSet<f64> = m.init_params(&mut rng);
        let input = random_input(&c, &mut rng);
        let probs = m.forward(&p, &input, None).unwrap();

        let mut g = Graph::new();
        let (s, t) = m.project_inputs(&mut g, &p, &input).unwrap();
        let l = m.classify(&mut g, &p, s, t, (c.seq_len, c.seq_len)).unwrap();
        let sm = g.softmax_rows(l).unwrap();
        assert_eq!(g.value(sm), &probs);
    }

    #[test]
    fn every_ablation_emits_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for a in Ablation::ALL {
            let c = MdatConfig::tiny().with_ablation(a);
            let m = Mdat::new(c.clone()).unwrap();
            let p: ParamSet<f32> = m.init_params(&mut rng);
            let input = random_input(&c, &mut rng).cast();
            let probs = m.forward(&p, &input, None).unwrap();
            assert_eq!(probs.cols(), 4);
            assert!((probs.sum() - 1.0).abs() < 1e-6);
            assert!(probs.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn masking_ignores_padded_keys() {
        let c = MdatConfig {
            mask_padding: true,
            ..MdatConfig::tiny()
        };
        let m = Mdat::new(c.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p: ParamSet<f64> = m.init_params(&mut rng);
        let input = random_input(&c, &mut rng).with_lengths(4, 3);
        let mut tr = AttentionTrace::default();
        m.forward(&p, &input, Some(&mut tr)).unwrap();
        let ga = tr.graph_alpha.unwrap();
        let t = c.seq_len;
        for r in 0..2 * t {
            for j in 4..t {
                assert_eq!(ga.get(r, j), 0.0);
            }
            for j in t + 3..2 * t {
                assert_eq!(ga.get(r, j), 0.0);
            }
        }
        let a_s = tr.alpha_s.unwrap();
        for r in 0..t {
            for j in 3..t {
                assert_eq!(a_s.get(r, j), 0.0);
            }
        }
        for (m, _, a) in &tr.encoder_heads {
            let len = if *m == Modality::Speech { 4 } else { 3 };
            for r in 0..t {
                for j in len..t {
                    assert_eq!(a.get(r, j), 0.0);
                }
            }
        }

        // Changing padded rows does not change the prediction.
        let mut other = input.clone();
        for j in 0..c.d_model {
            other.speech.data_mut()[5 * c.d_model + j] = 9.0;
        }
        for j in 0..c.d_text {
            other.text.data_mut()[4 * c.d_text + j] = -7.0;
        }
        let a = m.forward(&p, &input, None).unwrap();
        let b = m.forward(&p, &other, None).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn input_shape_is_checked() {
        let c = MdatConfig::tiny();
        let m = Mdat::new(c.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p: ParamSet<f64> = m.init_params(&mut rng);
        let bad = ModelInput::new(Tensor::zeros(&[c.seq_len, c.d_model + 1]), Tensor::zeros(&[c.seq_len, c.d_text]));
        assert!(matches!(m.forward(&p, &bad, None), Err(Error::Shape { .. })));
    }
}
