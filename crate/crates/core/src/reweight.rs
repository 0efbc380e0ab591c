//! Token weight criteria, hard sampling masks, granularity aggregation and the
//! loss/weight trace used for diagnostics.
//!
//! Every criterion maps current likelihoods (and, for importance, the key-token
//! annotation) to nonnegative weights. Weights are always treated as constants
//! by the backward pass.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PROB_FLOOR;
use crate::rng::rng_for;

/// Per-token weights for one answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn constant(value: f64, len: usize) -> Self {
        WeightVector(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            0.0
        } else {
            self.0.iter().sum::<f64>() / self.0.len() as f64
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(Error::param("probabilities must lie in (0,1]"));
    }
    Ok(())
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::param(format!("{name} must be a finite value >= 0, got {v}")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::param(format!("{name} must be > 0, got {v}")));
    }
    Ok(())
}

/// `1 - p` on key positions, `p` elsewhere.
pub fn weight_importance(key_positions: &[usize], answer_len: usize, p: f64) -> Result<WeightVector> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::param(format!("p must lie in (0,1), got {p}")));
    }
    let mut w = vec![p; answer_len];
    for &k in key_positions {
        if k >= answer_len {
            return Err(Error::Input(format!("key position {k} outside answer of length {answer_len}")));
        }
        w[k] = 1.0 - p;
    }
    Ok(WeightVector(w))
}

/// `p_k / (p_k + τ)`.
pub fn weight_saturation(probs: &[f64], tau: f64) -> Result<WeightVector> {
    check_positive("tau", tau)?;
    check_probs(probs)?;
    Ok(WeightVector(probs.iter().map(|p| p / (p + tau)).collect()))
}

/// `p_k^β`.
pub fn weight_wga(probs: &[f64], beta: f64) -> Result<WeightVector> {
    check_nonneg("beta", beta)?;
    check_probs(probs)?;
    Ok(WeightVector(probs.iter().map(|p| p.powf(beta)).collect()))
}

/// Same law as WGA.
pub fn weight_simsat(probs: &[f64], beta: f64) -> Result<WeightVector> {
    weight_wga(probs, beta)
}

/// `(1 - p_k)^β`.
pub fn weight_simimp(probs: &[f64], beta: f64) -> Result<WeightVector> {
    check_nonneg("beta", beta)?;
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::param("probabilities must lie in [0,1]"));
    }
    Ok(WeightVector(probs.iter().map(|p| (1.0 - p).powf(beta)).collect()))
}

/// `p_k^β₁ (1 - p_k)^β₂`, peaked at `β₁/(β₁+β₂)`.
pub fn weight_satimp(probs: &[f64], beta1: f64, beta2: f64) -> Result<WeightVector> {
    check_nonneg("beta1", beta1)?;
    check_nonneg("beta2", beta2)?;
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::param("probabilities must lie in [0,1]"));
    }
    Ok(WeightVector(
        probs.iter().map(|p| p.powf(beta1) * (1.0 - p).powf(beta2)).collect(),
    ))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// NPO instance weight `2σ(β(log p − log p_ref))` from sequence log-likelihoods.
pub fn npo_weight_from_logs(log_p: f64, log_p_ref: f64, beta: f64) -> f64 {
    2.0 * sigmoid(beta * (log_p - log_p_ref))
}

/// `2p^β / (p^β + p_ref^β)`. Probabilities are floored before use.
pub fn weight_npo(seq_prob: f64, seq_prob_ref: f64, beta: f64) -> Result<f64> {
    check_positive("beta", beta)?;
    for p in [seq_prob, seq_prob_ref] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::param(format!("sequence probability {p} outside [0,1]")));
        }
    }
    Ok(npo_weight_from_logs(
        seq_prob.max(PROB_FLOOR).ln(),
        seq_prob_ref.max(PROB_FLOOR).ln(),
        beta,
    ))
}

/// SimNPO weight from the sequence log-likelihood.
pub fn simnpo_weight_from_log(log_p: f64, beta: f64, answer_len: usize) -> f64 {
    let n = answer_len as f64;
    2.0 * sigmoid(beta / n * log_p) / n
}

/// `[2p^{β/|y|} / (p^{β/|y|} + 1)] / |y|`.
pub fn weight_simnpo(seq_prob: f64, beta: f64, answer_len: usize) -> Result<f64> {
    check_positive("beta", beta)?;
    if answer_len == 0 {
        return Err(Error::param("answer_len must be >= 1"));
    }
    if !(seq_prob > 0.0 && seq_prob <= 1.0) {
        return Err(Error::param(format!("sequence probability {seq_prob} outside (0,1]")));
    }
    Ok(simnpo_weight_from_log(seq_prob.ln(), beta, answer_len))
}

/// Elementwise product.
pub fn combine_weights(a: &WeightVector, b: &WeightVector) -> Result<WeightVector> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(WeightVector(a.0.iter().zip(&b.0).map(|(x, y)| x * y).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriterionKind {
    Uniform,
    Importance,
    Saturation,
    Wga,
    SimSat,
    SimImp,
    SatImp,
    Npo,
    SimNpo,
}

impl CriterionKind {
    pub fn name(&self) -> &'static str {
        match self {
            CriterionKind::Uniform => "uniform",
            CriterionKind::Importance => "importance",
            CriterionKind::Saturation => "saturation",
            CriterionKind::Wga => "wga",
            CriterionKind::SimSat => "simsat",
            CriterionKind::SimImp => "simimp",
            CriterionKind::SatImp => "satimp",
            CriterionKind::Npo => "npo",
            CriterionKind::SimNpo => "simnpo",
        }
    }
}

impl FromStr for CriterionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "uniform" => CriterionKind::Uniform,
            "importance" => CriterionKind::Importance,
            "saturation" => CriterionKind::Saturation,
            "wga" => CriterionKind::Wga,
            "simsat" => CriterionKind::SimSat,
            "simimp" => CriterionKind::SimImp,
            "satimp" => CriterionKind::SatImp,
            "npo" => CriterionKind::Npo,
            "simnpo" => CriterionKind::SimNpo,
            other => return Err(Error::param(format!("unknown criterion `{other}`"))),
        })
    }
}

/// A weighting criterion with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionSpec {
    pub kind: CriterionKind,
    pub p: f64,
    pub tau: f64,
    pub beta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: f64,
}

impl CriterionSpec {
    /// Defaults: p = 0.3, τ = 1, β = 2 (WGA), β₁ = 5, β₂ = 1; the NPO and
    /// SimNPO kinds take β = 0.1 and β = 2.5 respectively.
    pub fn new(kind: CriterionKind) -> Self {
        let beta = match kind {
            CriterionKind::Npo => 0.1,
            CriterionKind::SimNpo => 2.5,
            _ => 2.0,
        };
        CriterionSpec {
            kind,
            p: 0.3,
            tau: 1.0,
            beta,
            beta1: 5.0,
            beta2: 1.0,
            gamma: 0.0,
        }
    }

    pub fn needs_reference(&self) -> bool {
        self.kind == CriterionKind::Npo
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            CriterionKind::Uniform => Ok(()),
            CriterionKind::Importance if !(self.p > 0.0 && self.p < 1.0) => {
                Err(Error::param(format!("importance p must lie in (0,1), got {}", self.p)))
            }
            CriterionKind::Importance => Ok(()),
            CriterionKind::Saturation => check_positive("tau", self.tau),
            CriterionKind::Wga | CriterionKind::SimSat | CriterionKind::SimImp => check_nonneg("beta", self.beta),
            CriterionKind::SatImp => {
                check_nonneg("beta1", self.beta1)?;
                check_nonneg("beta2", self.beta2)
            }
            CriterionKind::Npo | CriterionKind::SimNpo => check_positive("beta", self.beta),
        }
    }

    /// Evaluates the criterion for one answer.
    pub fn weights(&self, input: &WeightInput<'_>) -> Result<WeightVector> {
        let n = input.probs.len();
        match self.kind {
            CriterionKind::Uniform => Ok(WeightVector::constant(1.0, n)),
            CriterionKind::Importance => weight_importance(input.key_positions, n, self.p),
            CriterionKind::Saturation => weight_saturation(input.probs, self.tau),
            CriterionKind::Wga => weight_wga(input.probs, self.beta),
            CriterionKind::SimSat => weight_simsat(input.probs, self.beta),
            CriterionKind::SimImp => weight_simimp(input.probs, self.beta),
            CriterionKind::SatImp => weight_satimp(input.probs, self.beta1, self.beta2),
            CriterionKind::Npo => {
                let log_ref = input
                    .ref_seq_log_prob
                    .ok_or_else(|| Error::Config("npo criterion requires a reference model".into()))?;
                let w = npo_weight_from_logs(input.seq_log_prob(), log_ref, self.beta);
                Ok(WeightVector::constant(w, n))
            }
            CriterionKind::SimNpo => {
                let w = simnpo_weight_from_log(input.seq_log_prob(), self.beta, n);
                Ok(WeightVector::constant(w, n))
            }
        }
    }
}

/// Inputs available to a criterion for one answer.
#[derive(Debug, Clone, Copy)]
pub struct WeightInput<'a> {
    pub probs: &'a [f64],
    pub log_probs: &'a [f64],
    pub key_positions: &'a [usize],
    pub ref_seq_log_prob: Option<f64>,
}

impl WeightInput<'_> {
    fn seq_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

/// Product of several criteria.
pub fn combined_weights(criteria: &[CriterionSpec], input: &WeightInput<'_>) -> Result<WeightVector> {
    let mut w = WeightVector::constant(1.0, input.probs.len());
    for c in criteria {
        w = combine_weights(&w, &c.weights(input)?)?;
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingStrategy {
    /// Lowest-likelihood tokens.
    TopK,
    /// Highest-likelihood tokens.
    BottomK,
    Random,
}

impl SamplingStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            SamplingStrategy::TopK => "topk",
            SamplingStrategy::BottomK => "bottomk",
            SamplingStrategy::Random => "random",
        }
    }
}

impl FromStr for SamplingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topk" => Ok(SamplingStrategy::TopK),
            "bottomk" => Ok(SamplingStrategy::BottomK),
            "random" => Ok(SamplingStrategy::Random),
            _ => Err(Error::param(format!("unknown sampling strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub strategy: SamplingStrategy,
    pub beta: f64,
    pub seed: u64,
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::param(format!("sampling beta must lie in (0,1], got {}", self.beta)));
        }
        Ok(())
    }
}

/// `max(1, ⌊β·len⌋)`.
pub fn sampling_size(beta: f64, len: usize) -> usize {
    ((beta * len as f64).floor() as usize).clamp(1, len.max(1))
}

/// Positions ordered by ascending likelihood, ties by position.
fn ascending_order(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    order
}

/// Binary token selection. `stream` separates the random draws of different
/// answers sharing one spec.
pub fn hard_sample_mask(probs: &[f64], spec: &SamplingSpec, stream: u64) -> Result<WeightVector> {
    spec.validate()?;
    let n = probs.len();
    let mut mask = vec![0.0; n];
    if n == 0 {
        return Ok(WeightVector(mask));
    }
    let s = sampling_size(spec.beta, n);
    let chosen: Vec<usize> = match spec.strategy {
        SamplingStrategy::TopK => ascending_order(probs).into_iter().take(s).collect(),
        SamplingStrategy::BottomK => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
            order.into_iter().take(s).collect()
        }
        SamplingStrategy::Random => {
            let mut rng = rng_for(spec.seed, stream);
            index::sample(&mut rng, n, s).into_vec()
        }
    };
    for i in chosen {
        mask[i] = 1.0;
    }
    Ok(WeightVector(mask))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Granularity {
    Token,
    Group,
    Instance,
    Batch,
}

impl Granularity {
    pub fn name(&self) -> &'static str {
        match self {
            Granularity::Token => "token",
            Granularity::Group => "group",
            Granularity::Instance => "instance",
            Granularity::Batch => "batch",
        }
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" => Ok(Granularity::Token),
            "group" => Ok(Granularity::Group),
            "instance" => Ok(Granularity::Instance),
            "batch" => Ok(Granularity::Batch),
            _ => Err(Error::param(format!("unknown granularity `{s}`"))),
        }
    }
}

pub const DEFAULT_GROUP_COUNT: usize = 4;

/// Re-expresses `weights` at a coarser unit. `batch_peers` is the whole
/// mini-batch (including `weights` itself) and is only read at batch level.
pub fn aggregate_granularity(
    weights: &WeightVector,
    level: Granularity,
    group_count: usize,
    batch_peers: &[WeightVector],
) -> Result<WeightVector> {
    let n = weights.len();
    match level {
        Granularity::Token => Ok(weights.clone()),
        Granularity::Instance => Ok(WeightVector::constant(weights.mean(), n)),
        Granularity::Group => {
            if group_count == 0 || group_count > n {
                return Err(Error::param(format!(
                    "group_count must lie in [1, {n}], got {group_count}"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| weights.0[b].total_cmp(&weights.0[a]));
            let (base, extra) = (n / group_count, n % group_count);
            let mut out = vec![0.0; n];
            let mut start = 0;
            for g in 0..group_count {
                let size = base + usize::from(g < extra);
                let block = &order[start..start + size];
                let mean = block.iter().map(|&i| weights.0[i]).sum::<f64>() / size as f64;
                for &i in block {
                    out[i] = mean;
                }
                start += size;
            }
            Ok(WeightVector(out))
        }
        Granularity::Batch => {
            if batch_peers.is_empty() {
                return Err(Error::param("batch granularity needs the batch weights"));
            }
            let mean = batch_peers.iter().map(WeightVector::mean).sum::<f64>() / batch_peers.len() as f64;
            Ok(WeightVector::constant(mean, n))
        }
    }
}

/// Key-token labeling index: for each key token, its 1-based descending
/// likelihood rank divided by the answer length.
pub fn ktl_index(probs: &[f64], key_positions: &[usize]) -> Result<Vec<f64>> {
    if key_positions.is_empty() {
        return Err(Error::Metric("KTL index needs at least one key token".into()));
    }
    let n = probs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut rank = vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    key_positions
        .iter()
        .map(|&k| {
            if k >= n {
                Err(Error::Input(format!("key position {k} outside answer of length {n}")))
            } else {
                Ok(rank[k] as f64 / n as f64)
            }
        })
        .collect()
}

/// One optimized token at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub pair_id: usize,
    pub token_pos: usize,
    pub nll: f64,
    pub weight: f64,
    pub is_key: bool,
}

/// Append-only loss/weight log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossWeightTrace {
    pub records: Vec<TraceRecord>,
}

impl LossWeightTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, step: usize, pair_id: usize, nll: &[f64], weights: &[f64], key_flags: &[bool]) -> Result<()> {
        if weights.len() != nll.len() || key_flags.len() != nll.len() {
            return Err(Error::Shape {
                expected: nll.len(),
                actual: weights.len().min(key_flags.len()),
            });
        }
        for (k, ((&l, &w), &key)) in nll.iter().zip(weights).zip(key_flags).enumerate() {
            self.records.push(TraceRecord {
                step,
                pair_id,
                token_pos: k,
                nll: l,
                weight: w,
                is_key: key,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Pearson correlation between token NLL and weight.
    pub fn nll_weight_correlation(&self) -> Option<f64> {
        let x: Vec<f64> = self.records.iter().map(|r| r.nll).collect();
        let y: Vec<f64> = self.records.iter().map(|r| r.weight).collect();
        pearson(&x, &y)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
        let records = r.deserialize().collect::<std::result::Result<Vec<TraceRecord>, _>>()?;
        Ok(LossWeightTrace { records })
    }
}

/// Sample Pearson correlation; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn importance_examples() {
        assert!(close(&weight_importance(&[1], 3, 0.3).unwrap().0, &[0.3, 0.7, 0.3]));
        assert!(close(&weight_importance(&[0, 2], 3, 0.5).unwrap().0, &[0.5; 3]));
        assert!(close(&weight_importance(&[], 4, 0.2).unwrap().0, &[0.2; 4]));
        assert!(weight_importance(&[0], 2, 0.0).is_err());
        assert!(weight_importance(&[0], 2, 1.0).is_err());
    }

    #[test]
    fn saturation_examples() {
        assert_eq!(weight_saturation(&[1.0], 1.0).unwrap().0, vec![0.5]);
        assert!((weight_saturation(&[0.5], 1.0).unwrap().0[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!(weight_saturation(&[1e-200], 1.0).unwrap().0[0] < 1e-199);
        assert!(weight_saturation(&[0.5], 0.0).is_err());
        assert!(weight_saturation(&[0.5], -1.0).is_err());
    }

    #[test]
    fn power_law_examples() {
        assert_eq!(weight_wga(&[0.5], 2.0).unwrap().0, vec![0.25]);
        assert_eq!(weight_wga(&[0.1, 0.7], 0.0).unwrap().0, vec![1.0, 1.0]);
        assert_eq!(weight_simimp(&[0.0, 1.0], 2.0).unwrap().0, vec![1.0, 0.0]);
        let s = weight_simsat(&[0.25], 1.0).unwrap().0[0];
        let i = weight_simimp(&[0.25], 1.0).unwrap().0[0];
        assert_eq!((s, i, s + i), (0.25, 0.75, 1.0));
        assert_eq!(weight_satimp(&[0.5], 1.0, 1.0).unwrap().0, vec![0.25]);
        assert!(weight_wga(&[0.5], -1.0).is_err());
    }

    #[test]
    fn npo_examples() {
        for beta in [0.05, 0.1, 1.0, 7.0] {
            assert!((weight_npo(0.3, 0.3, beta).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!((weight_npo(0.2, 0.8, 1.0).unwrap() - 0.4).abs() < 1e-12);
        let w = weight_npo(0.2, 0.0, 1.0).unwrap();
        assert!(w.is_finite() && w > 1.9 && w <= 2.0);
        assert!(weight_npo(0.2, 0.5, 0.0).is_err());
    }

    #[test]
    fn simnpo_examples() {
        assert!((weight_simnpo(1.0, 2.5, 4).unwrap() - 0.25).abs() < 1e-15);
        assert!((weight_simnpo(0.25, 1.0, 1).unwrap() - 0.4).abs() < 1e-15);
        assert!(weight_simnpo(0.5, 1.0, 0).is_err());
    }

    #[test]
    fn combination_examples() {
        let w = WeightVector(vec![0.2, 0.9, 0.4]);
        assert_eq!(combine_weights(&w, &WeightVector::constant(1.0, 3)).unwrap(), w);
        assert_eq!(
            combine_weights(&w, &WeightVector::constant(0.0, 3)).unwrap().0,
            vec![0.0; 3]
        );
        assert!(combine_weights(&w, &WeightVector::constant(1.0, 2)).is_err());

        let probs = [0.9, 0.2, 0.5, 0.05];
        let imp = weight_importance(&[1, 3], 4, 0.4).unwrap();
        let sat = weight_saturation(&probs, 1.0).unwrap();
        let hand = [0.4 * 0.9 / 1.9, 0.6 * 0.2 / 1.2, 0.4 * 0.5 / 1.5, 0.6 * 0.05 / 1.05];
        assert!(close(&combine_weights(&imp, &sat).unwrap().0, &hand));
    }

    #[test]
    fn sampling_examples() {
        let probs: Vec<f64> = (0..10).map(|i| 0.05 + 0.09 * i as f64).collect();
        for strategy in [SamplingStrategy::TopK, SamplingStrategy::BottomK, SamplingStrategy::Random] {
            let spec = SamplingSpec { strategy, beta: 0.3, seed: 1 };
            let m = hard_sample_mask(&probs, &spec, 0).unwrap();
            assert_eq!(m.0.iter().sum::<f64>(), 3.0);
            let full = SamplingSpec { strategy, beta: 1.0, seed: 1 };
            assert_eq!(hard_sample_mask(&probs, &full, 0).unwrap().0, vec![1.0; 10]);
        }
        let spec = SamplingSpec {
            strategy: SamplingStrategy::TopK,
            beta: 1.0 / 3.0,
            seed: 0,
        };
        assert_eq!(hard_sample_mask(&[0.1, 0.9, 0.5], &spec, 0).unwrap().0, vec![1.0, 0.0, 0.0]);
        let bottom = SamplingSpec {
            strategy: SamplingStrategy::BottomK,
            ..spec
        };
        assert_eq!(hard_sample_mask(&[0.1, 0.9, 0.5], &bottom, 0).unwrap().0, vec![0.0, 1.0, 0.0]);
        let bad = SamplingSpec { beta: 0.0, ..spec };
        assert!(hard_sample_mask(&[0.5], &bad, 0).is_err());
    }

    #[test]
    fn sampling_ties_prefer_lower_positions() {
        let probs = [0.5; 4];
        for strategy in [SamplingStrategy::TopK, SamplingStrategy::BottomK] {
            let spec = SamplingSpec { strategy, beta: 0.5, seed: 0 };
            assert_eq!(hard_sample_mask(&probs, &spec, 0).unwrap().0, vec![1.0, 1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn granularity_examples() {
        let w = WeightVector(vec![0.9, 0.1, 0.5, 0.3]);
        let g = aggregate_granularity(&w, Granularity::Group, 2, &[]).unwrap();
        assert!(close(&g.0, &[0.7, 0.2, 0.7, 0.2]));
        let inst = aggregate_granularity(&WeightVector(vec![0.2, 0.4]), Granularity::Instance, 1, &[]).unwrap();
        assert!(close(&inst.0, &[0.3, 0.3]));
        let c = WeightVector::constant(0.6, 5);
        for level in [Granularity::Token, Granularity::Group, Granularity::Instance, Granularity::Batch] {
            let out = aggregate_granularity(&c, level, 3, std::slice::from_ref(&c)).unwrap();
            assert!(close(&out.0, &c.0));
        }
        assert!(aggregate_granularity(&w, Granularity::Group, 0, &[]).is_err());
        assert!(aggregate_granularity(&w, Granularity::Group, 5, &[]).is_err());
        // Remainder goes to the earlier block: sizes 2, 1, 1... with 5 tokens and 2 groups: 3, 2.
        let w5 = WeightVector(vec![5.0, 4.0, 3.0, 2.0, 1.0]);
        let g5 = aggregate_granularity(&w5, Granularity::Group, 2, &[]).unwrap();
        assert!(close(&g5.0, &[4.0, 4.0, 4.0, 1.5, 1.5]));
    }

    #[test]
    fn batch_level_uses_mean_of_instance_means() {
        let a = WeightVector(vec![1.0, 0.0]);
        let b = WeightVector(vec![0.2, 0.2, 0.2]);
        let peers = [a.clone(), b.clone()];
        let out = aggregate_granularity(&a, Granularity::Batch, 1, &peers).unwrap();
        assert!(close(&out.0, &[0.35, 0.35]));
    }

    #[test]
    fn ktl_examples() {
        // Key token at position 4 holds the 3rd largest of 10 likelihoods.
        let probs = [0.99, 0.98, 0.5, 0.4, 0.9, 0.3, 0.2, 0.1, 0.05, 0.01];
        assert!((ktl_index(&probs, &[4]).unwrap()[0] - 0.3).abs() < 1e-15);
        assert!((ktl_index(&probs, &[0]).unwrap()[0] - 0.1).abs() < 1e-15);
        assert!(ktl_index(&probs, &[]).is_err());
    }

    #[test]
    fn ktl_ties_follow_position() {
        // Oracle: stable sort on (−p, position) gives rank = position + 1.
        let probs = [0.5; 6];
        let keys = [1, 4, 5];
        let ktl = ktl_index(&probs, &keys).unwrap();
        let expected: Vec<f64> = keys.iter().map(|&k| (k + 1) as f64 / 6.0).collect();
        assert_eq!(ktl, expected);
    }

    #[test]
    fn trace_records_and_round_trips() {
        let mut t = LossWeightTrace::new();
        t.record(0, 7, &[0.1, 2.0, 0.5], &[0.9, 0.1, 0.6], &[false, true, false]).unwrap();
        assert_eq!(t.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        t.write_csv(&path).unwrap();
        assert_eq!(LossWeightTrace::read_csv(&path).unwrap(), t);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("step,pair_id,token_pos,nll,weight,is_key\n"));
    }

    #[test]
    fn pearson_known_values() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }

    proptest! {
        #[test]
        fn criteria_stay_in_range(p in 1e-6f64..=1.0, beta in 0.0f64..8.0, b2 in 0.0f64..8.0, tau in 0.01f64..10.0) {
            for w in [
                weight_saturation(&[p], tau).unwrap().0[0],
                weight_wga(&[p], beta).unwrap().0[0],
                weight_simimp(&[p], beta).unwrap().0[0],
                weight_satimp(&[p], beta, b2).unwrap().0[0],
            ] {
                prop_assert!((0.0..=1.0).contains(&w));
            }
        }

        #[test]
        fn npo_weight_bounds(p in 1e-9f64..=1.0, q in 1e-9f64..=1.0, beta in 0.01f64..5.0) {
            let w = weight_npo(p, q, beta).unwrap();
            prop_assert!(w > 0.0 && w < 2.0);
        }

        #[test]
        fn simnpo_weight_bounds(p in 1e-9f64..=1.0, beta in 0.01f64..5.0, n in 1usize..40) {
            let w = weight_simnpo(p, beta, n).unwrap();
            prop_assert!(w > 0.0 && w <= 1.0 / n as f64 + 1e-15);
        }

        #[test]
        fn granularity_conserves_mean(w in proptest::collection::vec(0.0f64..1.0, 1..20), g in 1usize..20) {
            let w = WeightVector(w);
            let g = g.min(w.len());
            for level in [Granularity::Token, Granularity::Group, Granularity::Instance, Granularity::Batch] {
                let out = aggregate_granularity(&w, level, g, std::slice::from_ref(&w)).unwrap();
                prop_assert!((out.mean() - w.mean()).abs() < 1e-12);
            }
        }

        #[test]
        fn mask_cardinality(probs in proptest::collection::vec(0.001f64..1.0, 1..30), beta in 0.01f64..=1.0) {
            let n = probs.len();
            let s = ((beta * n as f64).floor() as usize).max(1);
            for strategy in [SamplingStrategy::TopK, SamplingStrategy::BottomK, SamplingStrategy::Random] {
                let m = hard_sample_mask(&probs, &SamplingSpec { strategy, beta, seed: 3 }, 0).unwrap();
                prop_assert_eq!(m.0.iter().filter(|&&x| x == 1.0).count(), s);
                prop_assert!(m.0.iter().all(|&x| x == 0.0 || x == 1.0));
            }
        }
    }
}
