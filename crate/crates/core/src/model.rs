//! Fixed-window neural language model: the previous `context_window` tokens
//! are embedded, concatenated, passed through one tanh layer, and projected to
//! a softmax over the vocabulary.
//!
//! Parameters live in one flat `Vec<f64>` in this order (row-major):
//!
//! ```text
//! embedding   [vocab_size × embed_dim]
//! w_in        [hidden_dim × (context_window · embed_dim)]
//! b_in        [hidden_dim]
//! w_out       [vocab_size × hidden_dim]
//! b_out       [vocab_size]
//! ```
//!
//! Gradients use the same layout.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QAPair, Token, TokenSequence, PAD};
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Lower bound applied to every token probability before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_window: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.context_window == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::param(format!("invalid model dimensions {self:?}")));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.context_window * self.embed_dim
    }

    fn layout(&self) -> Layout {
        let v = self.vocab_size;
        let h = self.hidden_dim;
        let embed = 0..v * self.embed_dim;
        let w_in = embed.end..embed.end + h * self.input_dim();
        let b_in = w_in.end..w_in.end + h;
        let w_out = b_in.end..b_in.end + v * h;
        let b_out = w_out.end..w_out.end + v;
        Layout {
            embed,
            w_in,
            b_in,
            w_out,
            b_out,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().b_out.end
    }
}

#[derive(Debug, Clone)]
struct Layout {
    embed: Range<usize>,
    w_in: Range<usize>,
    b_in: Range<usize>,
    w_out: Range<usize>,
    b_out: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    config: ModelConfig,
    params: Vec<f64>,
}

/// Gradient with the same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        GradientVector(vec![0.0; len])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn add_scaled(&mut self, other: &GradientVector, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|g| *g *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.is_finite())
    }
}

/// Everything recorded for one answer position.
#[derive(Debug, Clone)]
pub struct PositionTrace {
    pub context: Vec<Token>,
    pub target: Token,
    /// Hidden activation used to predict `target`.
    pub hidden: Vec<f64>,
    /// Full next-token distribution.
    pub probs: Vec<f64>,
    /// Floored log-probability of `target`.
    pub log_prob: f64,
}

/// Result of scoring an answer given its prompt.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub positions: Vec<PositionTrace>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        self.positions.iter().map(|p| p.log_prob).collect()
    }

    /// Per-token probabilities `p_k`.
    pub fn probs(&self) -> Vec<f64> {
        self.positions.iter().map(|p| p.log_prob.exp().max(PROB_FLOOR)).collect()
    }

    /// Sequence log-likelihood `Σ_k log p_k`.
    pub fn seq_log_prob(&self) -> f64 {
        self.positions.iter().map(|p| p.log_prob).sum()
    }

    pub fn nll(&self) -> Vec<f64> {
        self.positions.iter().map(|p| -p.log_prob).collect()
    }
}

fn log_floor() -> f64 {
    PROB_FLOOR.ln()
}

impl ToyModel {
    /// All parameters zero: every prediction is uniform.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(ToyModel {
            config,
            params: vec![0.0; config.param_count()],
        })
    }

    /// Uniform fan-in scaled initialization, biases zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let layout = config.layout();
        let mut rng = rng_for(seed, 0x1417);
        let unit = Uniform::new(-1.0f64, 1.0);
        let fill = |range: Range<usize>, scale: f64, params: &mut [f64], rng: &mut _| {
            for p in &mut params[range] {
                *p = scale * unit.sample(rng);
            }
        };
        fill(layout.embed, 0.5, &mut model.params, &mut rng);
        fill(
            layout.w_in,
            1.0 / (config.input_dim() as f64).sqrt(),
            &mut model.params,
            &mut rng,
        );
        fill(
            layout.w_out,
            1.0 / (config.hidden_dim as f64).sqrt(),
            &mut model.params,
            &mut rng,
        );
        Ok(model)
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::Shape {
                expected: config.param_count(),
                actual: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Input("non-finite parameter".into()));
        }
        Ok(ToyModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access, used by optimizers and gradient checks.
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Input(format!(
                "token {t} out of range for vocab size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn context_at(&self, text: &[Token], pos: usize) -> Vec<Token> {
        let w = self.config.context_window;
        (0..w)
            .map(|i| {
                let back = w - i;
                if pos >= back {
                    text[pos - back]
                } else {
                    PAD
                }
            })
            .collect()
    }

    fn input_vector(&self, context: &[Token]) -> Vec<f64> {
        let d = self.config.embed_dim;
        let embed = &self.params[self.config.layout().embed];
        let mut x = Vec::with_capacity(context.len() * d);
        for &t in context {
            let row = t as usize * d;
            x.extend_from_slice(&embed[row..row + d]);
        }
        x
    }

    /// Hidden activation and log-softmax for one context.
    fn step(&self, context: &[Token]) -> (Vec<f64>, Vec<f64>) {
        let c = &self.config;
        let layout = c.layout();
        let x = self.input_vector(context);
        let w_in = &self.params[layout.w_in];
        let b_in = &self.params[layout.b_in];
        let hidden: Vec<f64> = (0..c.hidden_dim)
            .map(|h| {
                let row = &w_in[h * x.len()..(h + 1) * x.len()];
                let pre: f64 = row.iter().zip(&x).map(|(w, xi)| w * xi).sum::<f64>() + b_in[h];
                pre.tanh()
            })
            .collect();
        let w_out = &self.params[layout.w_out];
        let b_out = &self.params[layout.b_out];
        let logits: Vec<f64> = (0..c.vocab_size)
            .map(|v| {
                let row = &w_out[v * c.hidden_dim..(v + 1) * c.hidden_dim];
                row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>() + b_out[v]
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let log_probs = logits.into_iter().map(|z| z - lse).collect();
        (hidden, log_probs)
    }

    /// Next-token log distribution after `text`.
    pub fn next_log_probs(&self, text: &[Token]) -> Result<Vec<f64>> {
        self.check_tokens(text)?;
        let ctx = self.context_at(text, text.len());
        Ok(self.step(&ctx).1)
    }

    /// Scores `target` as a continuation of `prompt`.
    pub fn forward_sequence(&self, prompt: &[Token], target: &[Token]) -> Result<ForwardTrace> {
        self.check_tokens(prompt)?;
        self.check_tokens(target)?;
        let mut text = prompt.to_vec();
        text.extend_from_slice(target);
        let floor = log_floor();
        let positions = (0..target.len())
            .map(|k| {
                let pos = prompt.len() + k;
                let context = self.context_at(&text, pos);
                let (hidden, log_probs) = self.step(&context);
                let t = target[k];
                PositionTrace {
                    log_prob: log_probs[t as usize].max(floor),
                    probs: log_probs.iter().map(|l| l.exp()).collect(),
                    context,
                    target: t,
                    hidden,
                }
            })
            .collect();
        Ok(ForwardTrace { positions })
    }

    pub fn forward(&self, pair: &QAPair) -> Result<ForwardTrace> {
        self.forward_sequence(&pair.question, &pair.answer)
    }

    /// Gradient of `Σ_k coeffs[k]·log p_k + Σ_k ⟨hidden_grads[k], φ_k⟩`.
    pub fn backward_general(
        &self,
        trace: &ForwardTrace,
        logp_coeffs: &[f64],
        hidden_grads: Option<&[Vec<f64>]>,
    ) -> Result<GradientVector> {
        if logp_coeffs.len() != trace.len() {
            return Err(Error::Shape {
                expected: trace.len(),
                actual: logp_coeffs.len(),
            });
        }
        if let Some(hg) = hidden_grads {
            if hg.len() != trace.len() {
                return Err(Error::Shape {
                    expected: trace.len(),
                    actual: hg.len(),
                });
            }
        }
        let c = &self.config;
        let layout = c.layout();
        let (d, h_dim, v_dim, in_dim) = (c.embed_dim, c.hidden_dim, c.vocab_size, c.input_dim());
        let mut grad = vec![0.0; self.params.len()];
        let w_in = &self.params[layout.w_in.clone()];
        let w_out = &self.params[layout.w_out.clone()];

        for (k, pos) in trace.positions.iter().enumerate() {
            let coeff = logp_coeffs[k];
            let extra = hidden_grads.map(|hg| &hg[k]);
            if coeff == 0.0 && extra.is_none() {
                continue;
            }
            let mut da = vec![0.0; h_dim];
            if coeff != 0.0 {
                // d log p_t / d z = onehot(t) - probs
                for v in 0..v_dim {
                    let onehot = if v == pos.target as usize { 1.0 } else { 0.0 };
                    let dz = coeff * (onehot - pos.probs[v]);
                    grad[layout.b_out.start + v] += dz;
                    let g_row = layout.w_out.start + v * h_dim;
                    let w_row = &w_out[v * h_dim..(v + 1) * h_dim];
                    for h in 0..h_dim {
                        grad[g_row + h] += dz * pos.hidden[h];
                        da[h] += dz * w_row[h];
                    }
                }
            }
            if let Some(e) = extra {
                for (a, g) in da.iter_mut().zip(e) {
                    *a += g;
                }
            }
            let x = self.input_vector(&pos.context);
            let mut dx = vec![0.0; in_dim];
            for h in 0..h_dim {
                let a = pos.hidden[h];
                let dpre = da[h] * (1.0 - a * a);
                grad[layout.b_in.start + h] += dpre;
                let g_row = layout.w_in.start + h * in_dim;
                let w_row = &w_in[h * in_dim..(h + 1) * in_dim];
                for i in 0..in_dim {
                    grad[g_row + i] += dpre * x[i];
                    dx[i] += dpre * w_row[i];
                }
            }
            for (j, &t) in pos.context.iter().enumerate() {
                let row = layout.embed.start + t as usize * d;
                for e in 0..d {
                    grad[row + e] += dx[j * d + e];
                }
            }
        }
        Ok(GradientVector(grad))
    }

    /// Gradient of `sign · Σ_k w_k log p_k` with the weights held constant.
    pub fn backward_weighted(&self, trace: &ForwardTrace, weights: &[f64], sign: f64) -> Result<GradientVector> {
        if weights.len() != trace.len() {
            return Err(Error::Shape {
                expected: trace.len(),
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Input("weights must be finite and nonnegative".into()));
        }
        if sign != 1.0 && sign != -1.0 {
            return Err(Error::param("sign must be +1 or -1"));
        }
        let coeffs: Vec<f64> = weights.iter().map(|w| sign * w).collect();
        self.backward_general(trace, &coeffs, None)
    }

    /// Greedy continuation; ties go to the lowest token id.
    pub fn greedy_decode(&self, prompt: &[Token], max_len: usize) -> Result<TokenSequence> {
        if max_len == 0 {
            return Err(Error::param("max_len must be >= 1"));
        }
        self.check_tokens(prompt)?;
        let mut text = prompt.to_vec();
        let mut out = Vec::with_capacity(max_len);
        for _ in 0..max_len {
            let ctx = self.context_at(&text, text.len());
            let (_, log_probs) = self.step(&ctx);
            let mut best = 0;
            for (v, &lp) in log_probs.iter().enumerate() {
                if lp > log_probs[best] {
                    best = v;
                }
            }
            out.push(best as Token);
            text.push(best as Token);
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CHECKPOINT_HEADER_LEN + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for dim in [
            self.config.vocab_size,
            self.config.context_window,
            self.config.embed_dim,
            self.config.hidden_dim,
        ] {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_HEADER_LEN || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let dim = |i: usize| {
            let at = 12 + 8 * i;
            u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize
        };
        let config = ModelConfig {
            vocab_size: dim(0),
            context_window: dim(1),
            embed_dim: dim(2),
            hidden_dim: dim(3),
        };
        config.validate()?;
        let body = &bytes[CHECKPOINT_HEADER_LEN..];
        if body.len() != 8 * config.param_count() {
            return Err(Error::Format(format!(
                "checkpoint body has {} bytes, expected {}",
                body.len(),
                8 * config.param_count()
            )));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_params(config, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"TOYLMCKP";
const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_HEADER_LEN: usize = 8 + 4 + 4 * 8;

/// Frozen copy of a model, e.g. the reference model of preference losses.
#[derive(Debug, Clone)]
pub struct ModelSnapshot {
    tag: String,
    model: ToyModel,
}

impl ModelSnapshot {
    pub fn new(tag: impl Into<String>, model: &ToyModel) -> Self {
        ModelSnapshot {
            tag: tag.into(),
            model: model.clone(),
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn model(&self) -> &ToyModel {
        &self.model
    }

    pub fn forward(&self, pair: &QAPair) -> Result<ForwardTrace> {
        self.model.forward(pair)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::param(format!("unknown optimizer `{s}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, param_count: usize) -> Self {
        OptimizerState {
            kind,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }
}

pub fn optimizer_step(model: &mut ToyModel, grad: &GradientVector, state: &mut OptimizerState, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::param(format!("learning rate must be positive, got {lr}")));
    }
    if grad.0.len() != model.params.len() {
        return Err(Error::Shape {
            expected: model.params.len(),
            actual: grad.0.len(),
        });
    }
    if let Some(i) = grad.0.iter().position(|g| !g.is_finite()) {
        return Err(Error::Training(format!(
            "non-finite gradient at parameter {i} (step {})",
            state.step
        )));
    }
    state.step += 1;
    match state.kind {
        OptimizerKind::Sgd => {
            for (p, g) in model.params.iter_mut().zip(&grad.0) {
                *p -= lr * g;
            }
        }
        OptimizerKind::Adam => {
            let t = state.step as i32;
            let bc1 = 1.0 - state.beta1.powi(t);
            let bc2 = 1.0 - state.beta2.powi(t);
            for i in 0..model.params.len() {
                let g = grad.0[i];
                state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
                state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                model.params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
            }
        }
    }
    Ok(())
}

/// Linear warm-up followed by linear decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        let warmup_steps = ((warmup_fraction * total_steps as f64).round() as usize).min(total_steps);
        LrSchedule {
            base_lr,
            warmup_steps,
            total_steps,
        }
    }

    pub fn constant(base_lr: f64) -> Self {
        LrSchedule {
            base_lr,
            warmup_steps: 0,
            total_steps: 0,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return self.base_lr;
        }
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let decay = self.total_steps - self.warmup_steps;
        let remaining = self.total_steps.saturating_sub(step).max(1);
        self.base_lr * remaining as f64 / decay.max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    /// Mean per-token NLL before training, then after each epoch.
    pub epoch_nll: Vec<f64>,
    /// Every pair index that contributed a gradient.
    pub trained_pairs: BTreeSet<usize>,
}

/// Mean per-token negative log-likelihood over the given pairs.
pub fn mean_nll(model: &ToyModel, pairs: &[&QAPair]) -> Result<f64> {
    let per_pair: Vec<(f64, usize)> = pairs
        .par_iter()
        .map(|p| model.forward(p).map(|t| (-t.seq_log_prob(), t.len())))
        .collect::<Result<_>>()?;
    let (sum, count) = per_pair
        .iter()
        .fold((0.0, 0usize), |(s, c), (l, n)| (s + l, c + n));
    Ok(sum / count.max(1) as f64)
}

/// Averages per-item gradients in input order.
pub(crate) fn mean_gradient(grads: Vec<GradientVector>, len: usize) -> GradientVector {
    let n = grads.len().max(1) as f64;
    let mut total = GradientVector::zeros(len);
    for g in &grads {
        total.add_scaled(g, 1.0);
    }
    total.scale(1.0 / n);
    total
}

/// Maximum-likelihood training with Adam on `indices` of the corpus.
pub fn finetune(
    model: &mut ToyModel,
    corpus: &Corpus,
    indices: &[usize],
    config: &FinetuneConfig,
) -> Result<FinetuneReport> {
    if indices.is_empty() {
        return Err(Error::Input("finetune subset is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::param("batch_size must be >= 1"));
    }
    let pairs = corpus.pairs_of(indices);
    let mut report = FinetuneReport {
        epoch_nll: vec![mean_nll(model, &pairs)?],
        trained_pairs: BTreeSet::new(),
    };
    if config.epochs == 0 {
        return Ok(report);
    }
    let steps_per_epoch = indices.len().div_ceil(config.batch_size);
    let schedule = LrSchedule::new(config.lr, config.warmup_fraction, steps_per_epoch * config.epochs);
    let mut state = OptimizerState::new(OptimizerKind::Adam, model.params.len());
    let mut order = indices.to_vec();
    let mut rng = rng_for(config.seed, 0xf1e7);
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let grads: Vec<GradientVector> = batch
                .par_iter()
                .map(|&i| {
                    let pair = &corpus.pairs[i];
                    let trace = model.forward(pair)?;
                    model.backward_weighted(&trace, &vec![1.0; trace.len()], -1.0)
                })
                .collect::<Result<_>>()?;
            report.trained_pairs.extend(batch.iter().copied());
            let grad = mean_gradient(grads, model.params.len());
            optimizer_step(model, &grad, &mut state, schedule.lr(step))
                .map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
            step += 1;
        }
        let nll = mean_nll(model, &pairs)?;
        if !nll.is_finite() {
            return Err(Error::Training(format!("NLL diverged at epoch {epoch}")));
        }
        report.epoch_nll.push(nll);
    }
    Ok(report)
}
