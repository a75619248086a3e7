//! Acoustic model: causal CNN feature encoder, pre-norm transformer encoder
//! with optional attention masking, and a linear prediction layer, plus the
//! teacher/student parameter-sharing rules and checkpointing.
//!
//! The forward pass is expressed entirely in autodiff primitives so the same
//! code serves inference and training. Convolutions become matmuls: each
//! kernel tap selects a strided set of input rows through a constant 0/1
//! matrix, and the tap contributions are summed. Streaming reuses the same
//! building blocks chunk by chunk (see the chunk module).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, VarId};

/// Additive pre-softmax penalty for masked attention entries; large enough
/// that exp underflows to exactly 0.0 after max-subtraction.
pub const MASK_NEG: f64 = -1e9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("waveform of {samples} samples is shorter than one frame ({required} samples)")]
    WaveformTooShort { samples: usize, required: usize },
    #[error("attention mask is {got}x{got} but the utterance has {expected} frames")]
    MaskShape { expected: usize, got: usize },
    #[error("prediction dims differ: teacher m={teacher}, student m={student}")]
    PredictionDimMismatch { teacher: usize, student: usize },
    #[error("cannot share parameter {0}: shapes differ")]
    ShareShape(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Boolean attention mask; `allow[t*n + j]` says whether query frame `t` may
/// attend to key frame `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    n: usize,
    allow: Vec<bool>,
}

impl Mask {
    pub fn new(n: usize, allow: Vec<bool>) -> Self {
        assert_eq!(allow.len(), n * n);
        Mask { n, allow }
    }

    pub fn all_true(n: usize) -> Self {
        Mask { n, allow: vec![true; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn allowed(&self, t: usize, j: usize) -> bool {
        self.allow[t * self.n + j]
    }

    pub fn set(&mut self, t: usize, j: usize, v: bool) {
        self.allow[t * self.n + j] = v;
    }
}

/// Either the full-context sentinel or an explicit frame-level mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttentionMask {
    Full,
    Explicit(Mask),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channel width inside the first two CNN layers (layer 1's output and
    /// layer 2's input); everything from layer 2's output onward uses
    /// `cnn_channels_rest`, which keeps layers 3+ shape-independent of this
    /// field and therefore shareable across the model ladder.
    pub cnn_channels_first_two: usize,
    pub cnn_channels_rest: usize,
    pub cnn_kernels: Vec<usize>,
    pub cnn_strides: Vec<usize>,
    pub encoder_dim: usize,
    pub ffn_dim: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Prediction-layer width m; column 0 is the unused epsilon pdf.
    pub num_pdfs: usize,
    pub group_norm: bool,
    pub causal_cnn: bool,
    pub sample_rate: usize,
    pub frame_duration_ms: f64,
}

impl ModelConfig {
    pub fn cnn_layers(&self) -> usize {
        self.cnn_kernels.len()
    }

    pub fn total_stride(&self) -> usize {
        self.cnn_strides.iter().product()
    }

    pub fn cnn_in_channels(&self, layer: usize) -> usize {
        match layer {
            0 => 1,
            1 => self.cnn_channels_first_two,
            _ => self.cnn_channels_rest,
        }
    }

    pub fn cnn_out_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            self.cnn_channels_first_two
        } else {
            self.cnn_channels_rest
        }
    }

    pub fn frames_for_samples(&self, samples: usize) -> usize {
        samples / self.total_stride()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cnn_kernels.is_empty() || self.cnn_kernels.len() != self.cnn_strides.len() {
            return Err(ModelError::BadConfig("kernel/stride lists must be equal and non-empty".into()));
        }
        if self.cnn_layers() < 3 {
            return Err(ModelError::BadConfig("need at least 3 CNN layers for the sharing rule".into()));
        }
        for (&k, &s) in self.cnn_kernels.iter().zip(&self.cnn_strides) {
            if s == 0 || k < s {
                return Err(ModelError::BadConfig(format!("kernel {k} must be >= stride {s} >= 1")));
            }
        }
        if self.encoder_dim == 0 || self.heads == 0 || self.encoder_dim % self.heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "heads {} must divide encoder_dim {}",
                self.heads, self.encoder_dim
            )));
        }
        if self.num_pdfs < 2 {
            return Err(ModelError::BadConfig("num_pdfs must cover epsilon plus one pdf".into()));
        }
        let ms = self.total_stride() as f64 * 1000.0 / self.sample_rate as f64;
        if (ms - self.frame_duration_ms).abs() > 1e-9 {
            return Err(ModelError::BadConfig(format!(
                "total stride {} at {} Hz gives {ms} ms frames, config says {}",
                self.total_stride(),
                self.sample_rate,
                self.frame_duration_ms
            )));
        }
        Ok(())
    }
}

/// The desk-scale model ladder: one full-context teacher and five students of
/// shrinking width/depth, preserving the compression ratios of the original
/// ladder. S4 and S5 drop one nominal transformer block (the skip set),
/// and S5 additionally narrows the first two CNN layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeskModel {
    Teacher,
    S1,
    S2,
    S3,
    S4,
    S5,
}

impl DeskModel {
    pub const ALL: [DeskModel; 6] =
        [DeskModel::Teacher, DeskModel::S1, DeskModel::S2, DeskModel::S3, DeskModel::S4, DeskModel::S5];

    pub fn name(self) -> &'static str {
        match self {
            DeskModel::Teacher => "t",
            DeskModel::S1 => "s1",
            DeskModel::S2 => "s2",
            DeskModel::S3 => "s3",
            DeskModel::S4 => "s4",
            DeskModel::S5 => "s5",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s == "teacher" {
            return Some(DeskModel::Teacher);
        }
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Nominal transformer depth before skips, used by the layer map.
    pub fn nominal_blocks(self) -> usize {
        match self {
            DeskModel::Teacher => 8,
            _ => 4,
        }
    }

    /// Nominal student layers omitted from the model (and the layer map).
    pub fn skip_layers(self) -> &'static [usize] {
        match self {
            DeskModel::S4 | DeskModel::S5 => &[2],
            _ => &[],
        }
    }

    pub fn config(self, num_pdfs: usize) -> ModelConfig {
        let (c12, d, ffn) = match self {
            DeskModel::Teacher => (32, 64, 256),
            DeskModel::S1 => (32, 48, 192),
            DeskModel::S2 => (32, 32, 128),
            DeskModel::S3 => (32, 24, 96),
            DeskModel::S4 => (32, 24, 96),
            DeskModel::S5 => (16, 24, 96),
        };
        ModelConfig {
            cnn_channels_first_two: c12,
            cnn_channels_rest: 32,
            cnn_kernels: vec![16, 8, 4, 4],
            cnn_strides: vec![16, 5, 2, 1],
            encoder_dim: d,
            ffn_dim: ffn,
            blocks: self.nominal_blocks() - self.skip_layers().len(),
            heads: 4,
            num_pdfs,
            group_norm: true,
            causal_cnn: true,
            sample_rate: 8000,
            frame_duration_ms: 20.0,
        }
    }
}

fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut specs = Vec::new();
    for l in 0..cfg.cnn_layers() {
        let (cin, cout) = (cfg.cnn_in_channels(l), cfg.cnn_out_channels(l));
        specs.push((format!("cnn{l}.weight"), vec![cfg.cnn_kernels[l] * cin, cout]));
        specs.push((format!("cnn{l}.bias"), vec![1, cout]));
        if cfg.group_norm {
            specs.push((format!("cnn{l}.norm_gain"), vec![1, cout]));
            specs.push((format!("cnn{l}.norm_bias"), vec![1, cout]));
        }
    }
    let (d, f, m) = (cfg.encoder_dim, cfg.ffn_dim, cfg.num_pdfs);
    specs.push(("proj.weight".into(), vec![cfg.cnn_channels_rest, d]));
    specs.push(("proj.bias".into(), vec![1, d]));
    for b in 0..cfg.blocks {
        specs.push((format!("block{b}.ln1_gain"), vec![1, d]));
        specs.push((format!("block{b}.ln1_bias"), vec![1, d]));
        for w in ["wq", "wk", "wv", "wo"] {
            specs.push((format!("block{b}.{w}"), vec![d, d]));
        }
        for bn in ["bq", "bk", "bv", "bo"] {
            specs.push((format!("block{b}.{bn}"), vec![1, d]));
        }
        specs.push((format!("block{b}.ln2_gain"), vec![1, d]));
        specs.push((format!("block{b}.ln2_bias"), vec![1, d]));
        specs.push((format!("block{b}.ffn1.weight"), vec![d, f]));
        specs.push((format!("block{b}.ffn1.bias"), vec![1, f]));
        specs.push((format!("block{b}.ffn2.weight"), vec![f, d]));
        specs.push((format!("block{b}.ffn2.bias"), vec![1, d]));
    }
    specs.push(("pred.weight".into(), vec![d, m]));
    specs.push(("pred.bias".into(), vec![1, m]));
    specs
}

/// Analytic parameter count; must agree with summing the actual tensors.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let mut n = 0;
    for l in 0..cfg.cnn_layers() {
        let (cin, cout) = (cfg.cnn_in_channels(l), cfg.cnn_out_channels(l));
        n += cfg.cnn_kernels[l] * cin * cout + cout;
        if cfg.group_norm {
            n += 2 * cout;
        }
    }
    let (d, f, m) = (cfg.encoder_dim, cfg.ffn_dim, cfg.num_pdfs);
    n += cfg.cnn_channels_rest * d + d;
    n += cfg.blocks * (2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d));
    n += d * m + m;
    n
}

/// Tape bindings for a model's parameters.
pub struct ParamVars {
    map: BTreeMap<String, VarId>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> VarId {
        *self.map.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, VarId)> {
        self.map.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

#[derive(Debug, Clone)]
pub struct AcousticModel {
    config: ModelConfig,
    params: BTreeMap<String, Tensor>,
}

impl AcousticModel {
    /// Fresh model with fan-in scaled uniform weights, zero biases, and unit
    /// norm gains, drawn in a fixed parameter order from one seeded stream.
    pub fn new_seeded(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for (name, shape) in param_specs(&config) {
            let n = shape[0] * shape[1];
            let t = if name.ends_with("gain") {
                Tensor::new(shape, vec![1.0; n])
            } else if name.ends_with("bias") {
                Tensor::new(shape, vec![0.0; n])
            } else {
                let bound = (1.0 / shape[0] as f64).sqrt();
                Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..bound)).collect())
            };
            params.insert(name, t);
        }
        Ok(AcousticModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param(&self, name: &str) -> &Tensor {
        self.params.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn set_param(&mut self, name: &str, t: Tensor) {
        let old = self.params.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(old.shape(), t.shape(), "shape change for {name}");
        *old = t;
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(|t| t.data().len()).sum()
    }

    /// Register every parameter on the tape, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let map = self
            .params
            .iter()
            .map(|(name, t)| {
                let v = if trainable { tape.leaf(t.clone(), true) } else { tape.constant(t.clone()) };
                (name.clone(), v)
            })
            .collect();
        ParamVars { map }
    }

    fn bias_add(&self, tape: &mut Tape, x: VarId, bias: VarId) -> Result<VarId> {
        let rows = tape.value(x).rows();
        let ones = tape.constant(Tensor::new(vec![rows, 1], vec![1.0; rows]));
        let b = tape.matmul(ones, bias)?;
        Ok(tape.add(x, b)?)
    }

    /// One CNN layer over a pre-padded input (windows start at row offsets
    /// 0, s, 2s, ...): tap-selection matmuls, bias, optional per-frame norm,
    /// GELU. Shared by the full and streaming paths.
    pub(crate) fn conv_layer_on(&self, tape: &mut Tape, vars: &ParamVars, layer: usize, x: VarId) -> Result<VarId> {
        let cfg = &self.config;
        let (k, s) = (cfg.cnn_kernels[layer], cfg.cnn_strides[layer]);
        let cin = cfg.cnn_in_channels(layer);
        let l_in = tape.value(x).rows();
        assert!(l_in >= k, "conv input must cover one kernel window");
        let l_out = (l_in - k) / s + 1;
        let weight = vars.get(&format!("cnn{layer}.weight"));
        let mut acc: Option<VarId> = None;
        for j in 0..k {
            let mut sel = Tensor::zeros(l_out, l_in);
            for t in 0..l_out {
                sel.data_mut()[t * l_in + t * s + j] = 1.0;
            }
            let sel = tape.constant(sel);
            let xj = tape.matmul(sel, x)?;
            let wj = tape.slice(weight, j * cin, (j + 1) * cin, 0, cfg.cnn_out_channels(layer))?;
            let term = tape.matmul(xj, wj)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
        let mut h = self.bias_add(tape, acc.unwrap(), vars.get(&format!("cnn{layer}.bias")))?;
        if cfg.group_norm {
            let g = vars.get(&format!("cnn{layer}.norm_gain"));
            let b = vars.get(&format!("cnn{layer}.norm_bias"));
            h = tape.layer_norm(h, g, b)?;
        }
        Ok(tape.gelu(h)?)
    }

    /// First CNN layer straight from samples: the im2col matrix is built
    /// outside the tape since the waveform is never differentiated.
    /// `padded` must already carry the layer's left padding.
    pub(crate) fn conv_first_on(&self, tape: &mut Tape, vars: &ParamVars, padded: &[f64]) -> Result<VarId> {
        let cfg = &self.config;
        let (k, s) = (cfg.cnn_kernels[0], cfg.cnn_strides[0]);
        assert!(padded.len() >= k);
        let l_out = (padded.len() - k) / s + 1;
        let mut im2col = Tensor::zeros(l_out, k);
        for t in 0..l_out {
            im2col.data_mut()[t * k..(t + 1) * k].copy_from_slice(&padded[t * s..t * s + k]);
        }
        let x = tape.constant(im2col);
        let w = vars.get("cnn0.weight");
        let conv = tape.matmul(x, w)?;
        let mut h = self.bias_add(tape, conv, vars.get("cnn0.bias"))?;
        if cfg.group_norm {
            let g = vars.get("cnn0.norm_gain");
            let b = vars.get("cnn0.norm_bias");
            h = tape.layer_norm(h, g, b)?;
        }
        Ok(tape.gelu(h)?)
    }

    pub(crate) fn pad_left(&self, layer: usize) -> usize {
        let (k, s) = (self.config.cnn_kernels[layer], self.config.cnn_strides[layer]);
        if self.config.causal_cnn {
            k - s
        } else {
            (k - s) / 2
        }
    }

    /// CNN feature encoder: `l x cnn_channels_rest` features for a waveform,
    /// with l = floor(samples / total stride) under causal padding.
    pub fn cnn_encode_on(&self, tape: &mut Tape, vars: &ParamVars, waveform: &[f64]) -> Result<VarId> {
        let stride = self.config.total_stride();
        if waveform.len() < stride {
            return Err(ModelError::WaveformTooShort { samples: waveform.len(), required: stride });
        }
        let mut padded = vec![0.0; self.pad_left(0)];
        padded.extend_from_slice(waveform);
        if !self.config.causal_cnn {
            let extra = (self.config.cnn_kernels[0] - self.config.cnn_strides[0]) - self.pad_left(0);
            padded.extend(std::iter::repeat(0.0).take(extra));
        }
        let mut h = self.conv_first_on(tape, vars, &padded)?;
        for layer in 1..self.config.cnn_layers() {
            let pad = self.config.cnn_kernels[layer] - self.config.cnn_strides[layer];
            if pad > 0 {
                let cin = self.config.cnn_in_channels(layer);
                let z = tape.constant(Tensor::zeros(pad, cin));
                h = tape.concat_rows(&[z, h])?;
            }
            h = self.conv_layer_on(tape, vars, layer, h)?;
        }
        Ok(h)
    }

    pub fn cnn_encode(&self, waveform: &[f64]) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let vars = self.bind(&mut tape, false);
        let h = self.cnn_encode_on(&mut tape, &vars, waveform)?;
        Ok(tape.value(h).clone())
    }

    /// One pre-norm transformer block applied to the current frames, with
    /// optional cached history rows (streaming) prepended to keys/values and
    /// an optional additive attention bias (`cur x kv`).
    pub(crate) fn block_on(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        b: usize,
        x_cur: VarId,
        hist: Option<VarId>,
        attn_bias: Option<&Tensor>,
    ) -> Result<VarId> {
        let d = self.config.encoder_dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let g1 = vars.get(&format!("block{b}.ln1_gain"));
        let b1 = vars.get(&format!("block{b}.ln1_bias"));
        let q_in = tape.layer_norm(x_cur, g1, b1)?;
        let kv_in = match hist {
            Some(h) => {
                let cat = tape.concat_rows(&[h, x_cur])?;
                tape.layer_norm(cat, g1, b1)?
            }
            None => q_in,
        };
        let q = {
            let m = tape.matmul(q_in, vars.get(&format!("block{b}.wq")))?;
            self.bias_add(tape, m, vars.get(&format!("block{b}.bq")))?
        };
        let k = {
            let m = tape.matmul(kv_in, vars.get(&format!("block{b}.wk")))?;
            self.bias_add(tape, m, vars.get(&format!("block{b}.bk")))?
        };
        let v = {
            let m = tape.matmul(kv_in, vars.get(&format!("block{b}.wv")))?;
            self.bias_add(tape, m, vars.get(&format!("block{b}.bv")))?
        };
        let n_cur = tape.value(q).rows();
        let n_kv = tape.value(k).rows();
        let mut head_outs = Vec::with_capacity(heads);
        let bias_const = attn_bias.map(|t| {
            assert_eq!(t.shape(), [n_cur, n_kv]);
            tape.constant(t.clone())
        });
        for h in 0..heads {
            let qh = tape.slice(q, 0, n_cur, h * dh, (h + 1) * dh)?;
            let kh = tape.slice(k, 0, n_kv, h * dh, (h + 1) * dh)?;
            let vh = tape.slice(v, 0, n_kv, h * dh, (h + 1) * dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let mut scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
            if let Some(bc) = bias_const {
                scaled = tape.add(scaled, bc)?;
            }
            let a = tape.softmax_rows(scaled)?;
            head_outs.push(tape.matmul(a, vh)?);
        }
        let ctx = tape.concat_cols(&head_outs)?;
        let proj = tape.matmul(ctx, vars.get(&format!("block{b}.wo")))?;
        let attn_out = self.bias_add(tape, proj, vars.get(&format!("block{b}.bo")))?;
        let x1 = tape.add(x_cur, attn_out)?;
        let g2 = vars.get(&format!("block{b}.ln2_gain"));
        let b2 = vars.get(&format!("block{b}.ln2_bias"));
        let f_in = tape.layer_norm(x1, g2, b2)?;
        let f1 = {
            let m = tape.matmul(f_in, vars.get(&format!("block{b}.ffn1.weight")))?;
            self.bias_add(tape, m, vars.get(&format!("block{b}.ffn1.bias")))?
        };
        let act = tape.gelu(f1)?;
        let f2 = {
            let m = tape.matmul(act, vars.get(&format!("block{b}.ffn2.weight")))?;
            self.bias_add(tape, m, vars.get(&format!("block{b}.ffn2.bias")))?
        };
        Ok(tape.add(x1, f2)?)
    }

    pub(crate) fn input_proj_on(&self, tape: &mut Tape, vars: &ParamVars, feats: VarId) -> Result<VarId> {
        let m = tape.matmul(feats, vars.get("proj.weight"))?;
        self.bias_add(tape, m, vars.get("proj.bias"))
    }

    pub(crate) fn predict_on(&self, tape: &mut Tape, vars: &ParamVars, h: VarId) -> Result<VarId> {
        let m = tape.matmul(h, vars.get("pred.weight"))?;
        self.bias_add(tape, m, vars.get("pred.bias"))
    }

    /// Transformer + prediction layer over CNN features. The full-context
    /// sentinel takes the same code path as an all-true mask, so the two are
    /// bitwise identical by construction.
    pub fn transformer_on(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        feats: VarId,
        mask: &AttentionMask,
    ) -> Result<(Vec<VarId>, VarId)> {
        let l = tape.value(feats).rows();
        let mask = match mask {
            AttentionMask::Full => Mask::all_true(l),
            AttentionMask::Explicit(m) => {
                if m.n() != l {
                    return Err(ModelError::MaskShape { expected: l, got: m.n() });
                }
                m.clone()
            }
        };
        let mut bias = Tensor::zeros(l, l);
        for t in 0..l {
            for j in 0..l {
                if !mask.allowed(t, j) {
                    bias.data_mut()[t * l + j] = MASK_NEG;
                }
            }
        }
        let mut x = self.input_proj_on(tape, vars, feats)?;
        let mut hiddens = Vec::with_capacity(self.config.blocks);
        for b in 0..self.config.blocks {
            x = self.block_on(tape, vars, b, x, None, Some(&bias))?;
            hiddens.push(x);
        }
        let out = self.predict_on(tape, vars, x)?;
        Ok((hiddens, out))
    }

    pub fn forward_on(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        waveform: &[f64],
        mask: &AttentionMask,
    ) -> Result<(Vec<VarId>, VarId)> {
        let feats = self.cnn_encode_on(tape, vars, waveform)?;
        self.transformer_on(tape, vars, feats, mask)
    }

    /// Inference-mode forward: per-block hidden states (`l x d` each) and the
    /// prediction-layer output (`l x m`).
    pub fn forward(&self, waveform: &[f64], mask: &AttentionMask) -> Result<(Vec<Tensor>, Tensor)> {
        let mut tape = Tape::inference();
        let vars = self.bind(&mut tape, false);
        let (hiddens, out) = self.forward_on(&mut tape, &vars, waveform, mask)?;
        Ok((
            hiddens.into_iter().map(|h| tape.value(h).clone()).collect(),
            tape.value(out).clone(),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"SKDMODL1");
        let cfg = serde_json::to_vec(&self.config)?;
        buf.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        buf.extend_from_slice(&cfg);
        buf.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in &self.params {
            buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            buf.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for &x in t.data() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > buf.len() {
                return Err(ModelError::BadCheckpoint("truncated".into()));
            }
            let s = &buf[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let read_u64 = |pos: &mut usize| -> Result<u64> {
            Ok(u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
        };
        if take(&mut pos, 8)? != b"SKDMODL1" {
            return Err(ModelError::BadCheckpoint("bad magic".into()));
        }
        let cfg_len = read_u64(&mut pos)? as usize;
        let config: ModelConfig = serde_json::from_slice(take(&mut pos, cfg_len)?)?;
        config.validate()?;
        let n_params = read_u64(&mut pos)? as usize;
        let mut params = BTreeMap::new();
        for _ in 0..n_params {
            let name_len = read_u64(&mut pos)? as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| ModelError::BadCheckpoint("non-utf8 name".into()))?;
            let rows = read_u64(&mut pos)? as usize;
            let cols = read_u64(&mut pos)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            params.insert(name, Tensor::new(vec![rows, cols], data));
        }
        if pos != buf.len() {
            return Err(ModelError::BadCheckpoint("trailing bytes".into()));
        }
        let expected: Vec<String> = param_specs(&config).into_iter().map(|(n, _)| n).collect();
        let got: Vec<String> = params.keys().cloned().collect();
        let mut sorted = expected.clone();
        sorted.sort();
        if got != sorted {
            return Err(ModelError::BadCheckpoint("parameter set does not match config".into()));
        }
        Ok(AcousticModel { config, params })
    }
}

/// Step-1 initialization: fresh student, then copy from the teacher the CNN
/// layers beyond the first two (always), the first two CNN layers when the
/// channel widths match, and the prediction layer when the encoder dims
/// match. Transformer blocks and the input projection stay fresh.
pub fn share_teacher_params(
    teacher: &AcousticModel,
    student_config: &ModelConfig,
    seed: u64,
) -> Result<AcousticModel> {
    let tc = &teacher.config;
    if tc.num_pdfs != student_config.num_pdfs {
        return Err(ModelError::PredictionDimMismatch {
            teacher: tc.num_pdfs,
            student: student_config.num_pdfs,
        });
    }
    let mut student = AcousticModel::new_seeded(student_config.clone(), seed)?;
    let mut copy = |names: &[String]| -> Result<()> {
        for name in names {
            let src = teacher.param(name);
            if student.param(name).shape() != src.shape() {
                return Err(ModelError::ShareShape(name.clone()));
            }
            student.set_param(name, src.clone());
        }
        Ok(())
    };
    let norm_names = |l: usize, cfg: &ModelConfig| -> Vec<String> {
        let mut v = vec![format!("cnn{l}.weight"), format!("cnn{l}.bias")];
        if cfg.group_norm {
            v.push(format!("cnn{l}.norm_gain"));
            v.push(format!("cnn{l}.norm_bias"));
        }
        v
    };
    for l in 2..student_config.cnn_layers().min(tc.cnn_layers()) {
        copy(&norm_names(l, student_config))?;
    }
    if student_config.cnn_channels_first_two == tc.cnn_channels_first_two
        && student_config.cnn_kernels[..2] == tc.cnn_kernels[..2]
        && student_config.cnn_strides[..2] == tc.cnn_strides[..2]
    {
        copy(&norm_names(0, student_config))?;
        copy(&norm_names(1, student_config))?;
    }
    if student_config.encoder_dim == tc.encoder_dim {
        copy(&["pred.weight".into(), "pred.bias".into()])?;
    }
    Ok(student)
}

/// Step-2 initialization: the streaming student starts as an exact parameter
/// copy; streaming behavior comes only from the mask used at forward time.
pub fn init_streaming_from(sn: &AcousticModel) -> AcousticModel {
    sn.clone()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_config(blocks: usize) -> ModelConfig {
        ModelConfig {
            cnn_channels_first_two: 4,
            cnn_channels_rest: 6,
            cnn_kernels: vec![4, 3, 2],
            cnn_strides: vec![4, 2, 1],
            encoder_dim: 8,
            ffn_dim: 16,
            blocks,
            heads: 2,
            num_pdfs: 5,
            group_norm: true,
            causal_cnn: true,
            sample_rate: 8000,
            frame_duration_ms: 1.0,
        }
    }

    fn seeded_wave(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn params_equal(a: &AcousticModel, b: &AcousticModel, name: &str) -> bool {
        a.param(name).data() == b.param(name).data()
    }

    #[test]
    fn frame_count_is_floor_of_samples_over_stride() {
        let m = AcousticModel::new_seeded(DeskModel::Teacher.config(5), 0).unwrap();
        assert_eq!(m.config().total_stride(), 160);
        let feats = m.cnn_encode(&seeded_wave(8000, 1)).unwrap();
        assert_eq!(feats.rows(), 50);
        assert_eq!(feats.cols(), 32);
        // Short tail samples are dropped.
        let feats = m.cnn_encode(&seeded_wave(8159, 1)).unwrap();
        assert_eq!(feats.rows(), 50);
    }

    #[test]
    fn waveform_shorter_than_one_frame_is_an_error() {
        let m = AcousticModel::new_seeded(tiny_config(1), 0).unwrap();
        assert!(matches!(
            m.cnn_encode(&seeded_wave(7, 1)),
            Err(ModelError::WaveformTooShort { samples: 7, required: 8 })
        ));
    }

    #[test]
    fn causal_cnn_ignores_future_samples() {
        let m = AcousticModel::new_seeded(tiny_config(1), 3).unwrap();
        let wave = seeded_wave(80, 4);
        let full = m.cnn_encode(&wave).unwrap();
        // Frame t only sees samples < (t+1) * 8; perturb everything after
        // frame 4's receptive field.
        let mut perturbed = wave.clone();
        for x in perturbed[40..].iter_mut() {
            *x += 0.5;
        }
        let other = m.cnn_encode(&perturbed).unwrap();
        for t in 0..=4 {
            for c in 0..full.cols() {
                assert!((full.at(t, c) - other.at(t, c)).abs() <= 1e-12);
            }
        }
        let mut changed = false;
        for c in 0..full.cols() {
            changed |= full.at(9, c) != other.at(9, c);
        }
        assert!(changed);
    }

    #[test]
    fn zero_waveform_stays_finite() {
        let m = AcousticModel::new_seeded(tiny_config(2), 5).unwrap();
        let (hiddens, out) = m.forward(&vec![0.0; 64], &AttentionMask::Full).unwrap();
        assert!(out.is_finite());
        assert!(hiddens.iter().all(|h| h.is_finite()));
    }

    #[test]
    fn full_sentinel_equals_all_true_mask() {
        let m = AcousticModel::new_seeded(tiny_config(2), 6).unwrap();
        let wave = seeded_wave(64, 7);
        let (_, full) = m.forward(&wave, &AttentionMask::Full).unwrap();
        let l = m.config().frames_for_samples(64);
        let (_, masked) = m.forward(&wave, &AttentionMask::Explicit(Mask::all_true(l))).unwrap();
        assert_eq!(full.data(), masked.data());
    }

    #[test]
    fn mask_shape_mismatch_is_an_error() {
        let m = AcousticModel::new_seeded(tiny_config(1), 6).unwrap();
        let wave = seeded_wave(64, 7);
        assert!(matches!(
            m.forward(&wave, &AttentionMask::Explicit(Mask::all_true(3))),
            Err(ModelError::MaskShape { expected: 8, got: 3 })
        ));
    }

    #[test]
    fn zero_blocks_reduces_to_projected_prediction() {
        let m = AcousticModel::new_seeded(tiny_config(0), 8).unwrap();
        let wave = seeded_wave(64, 9);
        let (hiddens, out) = m.forward(&wave, &AttentionMask::Full).unwrap();
        assert!(hiddens.is_empty());
        let mut tape = Tape::inference();
        let vars = m.bind(&mut tape, false);
        let feats = m.cnn_encode_on(&mut tape, &vars, &wave).unwrap();
        let proj = m.input_proj_on(&mut tape, &vars, feats).unwrap();
        let pred = m.predict_on(&mut tape, &vars, proj).unwrap();
        assert_eq!(out.data(), tape.value(pred).data());
    }

    #[test]
    fn seeded_forward_is_bitwise_reproducible() {
        let wave = seeded_wave(64, 10);
        let m1 = AcousticModel::new_seeded(tiny_config(2), 11).unwrap();
        let m2 = AcousticModel::new_seeded(tiny_config(2), 11).unwrap();
        let (_, o1) = m1.forward(&wave, &AttentionMask::Full).unwrap();
        let (_, o2) = m2.forward(&wave, &AttentionMask::Full).unwrap();
        assert_eq!(o1.data(), o2.data());
    }

    #[test]
    fn masked_out_frames_cannot_influence_others() {
        let m = AcousticModel::new_seeded(tiny_config(2), 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let l = 6;
        let feats = Tensor::new(
            vec![l, 6],
            (0..l * 6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        // Nobody may attend to frame 2.
        let mut mask = Mask::all_true(l);
        for t in 0..l {
            mask.set(t, 2, false);
        }
        let run = |feats: &Tensor| {
            let mut tape = Tape::inference();
            let vars = m.bind(&mut tape, false);
            let fv = tape.constant(feats.clone());
            let (_, out) = m
                .transformer_on(&mut tape, &vars, fv, &AttentionMask::Explicit(mask.clone()))
                .unwrap();
            tape.value(out).clone()
        };
        let base = run(&feats);
        let mut zeroed = feats.clone();
        for c in 0..6 {
            zeroed.data_mut()[2 * 6 + c] = 0.0;
        }
        let other = run(&zeroed);
        for t in (0..l).filter(|&t| t != 2) {
            for c in 0..base.cols() {
                assert!((base.at(t, c) - other.at(t, c)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn param_count_formula_matches_tensors() {
        for cfg in [tiny_config(0), tiny_config(3), DeskModel::Teacher.config(9), DeskModel::S5.config(9)] {
            let m = AcousticModel::new_seeded(cfg.clone(), 0).unwrap();
            assert_eq!(m.num_params(), param_count(&cfg), "config {cfg:?}");
        }
    }

    #[test]
    fn desk_ladder_is_strictly_shrinking() {
        let counts: Vec<usize> = DeskModel::ALL.iter().map(|d| param_count(&d.config(9))).collect();
        for w in counts.windows(2) {
            assert!(w[0] > w[1], "ladder counts {counts:?}");
        }
    }

    #[test]
    fn share_with_identical_config_copies_cnn_and_prediction() {
        let cfg = tiny_config(2);
        let teacher = AcousticModel::new_seeded(cfg.clone(), 20).unwrap();
        let student = share_teacher_params(&teacher, &cfg, 21).unwrap();
        for l in 0..3 {
            assert!(params_equal(&teacher, &student, &format!("cnn{l}.weight")));
        }
        assert!(params_equal(&teacher, &student, "pred.weight"));
        assert!(params_equal(&teacher, &student, "pred.bias"));
        assert!(!params_equal(&teacher, &student, "block0.wq"));
        assert!(!params_equal(&teacher, &student, "proj.weight"));
    }

    #[test]
    fn share_with_narrow_first_two_keeps_later_layers() {
        let cfg = tiny_config(2);
        let teacher = AcousticModel::new_seeded(cfg.clone(), 22).unwrap();
        let mut narrow = cfg.clone();
        narrow.cnn_channels_first_two = 3;
        let student = share_teacher_params(&teacher, &narrow, 23).unwrap();
        assert_ne!(student.param("cnn0.weight").shape(), teacher.param("cnn0.weight").shape());
        assert!(params_equal(&teacher, &student, "cnn2.weight"));
        assert!(params_equal(&teacher, &student, "cnn2.bias"));
    }

    #[test]
    fn share_rejects_pdf_mismatch_and_skips_pred_on_dim_change() {
        let cfg = tiny_config(1);
        let teacher = AcousticModel::new_seeded(cfg.clone(), 24).unwrap();
        let mut bad = cfg.clone();
        bad.num_pdfs = 7;
        assert!(matches!(
            share_teacher_params(&teacher, &bad, 0),
            Err(ModelError::PredictionDimMismatch { teacher: 5, student: 7 })
        ));
        let mut thin = cfg.clone();
        thin.encoder_dim = 4;
        thin.ffn_dim = 8;
        let student = share_teacher_params(&teacher, &thin, 25).unwrap();
        assert_ne!(student.param("pred.weight").shape(), teacher.param("pred.weight").shape());
    }

    #[test]
    fn full_copy_reproduces_teacher_outputs() {
        let cfg = tiny_config(2);
        let teacher = AcousticModel::new_seeded(cfg.clone(), 26).unwrap();
        let mut student = share_teacher_params(&teacher, &cfg, 27).unwrap();
        let names: Vec<String> = teacher.params().map(|(n, _)| n.to_string()).collect();
        for n in names {
            student.set_param(&n, teacher.param(&n).clone());
        }
        let wave = seeded_wave(64, 28);
        let (_, ot) = teacher.forward(&wave, &AttentionMask::Full).unwrap();
        let (_, os) = student.forward(&wave, &AttentionMask::Full).unwrap();
        assert_eq!(ot.data(), os.data());
    }

    #[test]
    fn streaming_init_is_an_exact_copy_and_masks_change_outputs() {
        let sn = AcousticModel::new_seeded(tiny_config(2), 30).unwrap();
        let ss = init_streaming_from(&sn);
        for (name, t) in sn.params() {
            assert_eq!(t.data(), ss.param(name).data());
        }
        let wave = seeded_wave(64, 31);
        let (_, a) = sn.forward(&wave, &AttentionMask::Full).unwrap();
        let (_, b) = ss.forward(&wave, &AttentionMask::Full).unwrap();
        assert_eq!(a.data(), b.data());
        // A causal mask must change at least one output.
        let l = 8;
        let mut mask = Mask::all_true(l);
        for t in 0..l {
            for j in t + 1..l {
                mask.set(t, j, false);
            }
        }
        let (_, c) = ss.forward(&wave, &AttentionMask::Explicit(mask)).unwrap();
        assert!(a.data().iter().zip(c.data()).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = AcousticModel::new_seeded(tiny_config(2), 40).unwrap();
        m.save(&path).unwrap();
        let loaded = AcousticModel::load(&path).unwrap();
        assert_eq!(m.config(), loaded.config());
        for (name, t) in m.params() {
            assert_eq!(t.data(), loaded.param(name).data(), "param {name}");
        }
        let wave = seeded_wave(64, 41);
        let (_, a) = m.forward(&wave, &AttentionMask::Full).unwrap();
        let (_, b) = loaded.forward(&wave, &AttentionMask::Full).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(AcousticModel::load(&path), Err(ModelError::BadCheckpoint(_))));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = tiny_config(1);
        cfg.heads = 3; // does not divide 8
        assert!(matches!(AcousticModel::new_seeded(cfg, 0), Err(ModelError::BadConfig(_))));
        let mut cfg = tiny_config(1);
        cfg.frame_duration_ms = 2.0; // inconsistent with stride 8 at 8 kHz
        assert!(matches!(AcousticModel::new_seeded(cfg, 0), Err(ModelError::BadConfig(_))));
    }
}
