//! Unlearning objectives and their exact gradients.
//!
//! Sign convention: every function returns the quantity being minimized, so
//! gradient ascent on the forget set is descent on `Σ_k log p_k`.

use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QAPair, TokenSequence, IDK};
use crate::error::{Error, Result};
use crate::model::{mean_gradient, optimizer_step, ForwardTrace, GradientVector, ModelSnapshot, OptimizerState, ToyModel};
use crate::reweight::{
    aggregate_granularity, combined_weights, hard_sample_mask, ktl_index, npo_weight_from_logs, CriterionKind,
    CriterionSpec, Granularity, LossWeightTrace, SamplingSpec, WeightInput, WeightVector, DEFAULT_GROUP_COUNT,
};
use crate::rng::rng_for;

/// Loss value with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: GradientVector,
}

fn log_sigmoid(x: f64) -> f64 {
    // log σ(x) = −softplus(−x)
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Plain gradient ascent: minimize `Σ_k log p_k`.
pub fn loss_ga(model: &ToyModel, trace: &ForwardTrace) -> Result<LossGrad> {
    loss_reweighted_ga(model, trace, &WeightVector::constant(1.0, trace.len()))
}

/// `Σ_k w_k log p_k` with `w` detached.
pub fn loss_reweighted_ga(model: &ToyModel, trace: &ForwardTrace, weights: &WeightVector) -> Result<LossGrad> {
    if weights.len() != trace.len() {
        return Err(Error::Shape {
            expected: trace.len(),
            actual: weights.len(),
        });
    }
    let loss = trace
        .positions
        .iter()
        .zip(&weights.0)
        .map(|(p, w)| w * p.log_prob)
        .sum();
    let grad = model.backward_weighted(trace, &weights.0, 1.0)?;
    Ok(LossGrad { loss, grad })
}

/// Adds the retain regularizer `−λ · mean Σ log p` over `retain_traces`.
pub fn loss_gd(forget: LossGrad, model: &ToyModel, retain_traces: &[ForwardTrace], lambda: f64) -> Result<LossGrad> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("lambda must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 || retain_traces.is_empty() {
        return Ok(forget);
    }
    let n = retain_traces.len() as f64;
    let mut total = forget;
    for trace in retain_traces {
        let g = model.backward_weighted(trace, &vec![lambda / n; trace.len()], -1.0)?;
        total.grad.add_scaled(&g, 1.0);
        total.loss -= lambda / n * trace.seq_log_prob();
    }
    Ok(total)
}

/// NLL on the "I don't know" target.
pub fn loss_po(model: &ToyModel, idk_trace: &ForwardTrace) -> Result<LossGrad> {
    let grad = model.backward_weighted(idk_trace, &vec![1.0; idk_trace.len()], -1.0)?;
    Ok(LossGrad {
        loss: -idk_trace.seq_log_prob(),
        grad,
    })
}

/// `−(2/β) log σ(β[log(p_w/p_w^ref) − log(p_l/p_l^ref)])`.
pub fn loss_dpo(
    model: &ToyModel,
    win: &ForwardTrace,
    lose: &ForwardTrace,
    ref_win: &ForwardTrace,
    ref_lose: &ForwardTrace,
    beta: f64,
) -> Result<LossGrad> {
    if !(beta > 0.0) {
        return Err(Error::param("dpo beta must be > 0"));
    }
    let margin = beta * ((win.seq_log_prob() - ref_win.seq_log_prob()) - (lose.seq_log_prob() - ref_lose.seq_log_prob()));
    let loss = -2.0 / beta * log_sigmoid(margin);
    // dL/dmargin = −(2/β)(1 − σ(m)); dmargin/dlog p_w = β, dmargin/dlog p_l = −β
    let s = 2.0 * sigmoid(-margin);
    let mut grad = model.backward_general(win, &vec![-s; win.len()], None)?;
    grad.add_scaled(&model.backward_general(lose, &vec![s; lose.len()], None)?, 1.0);
    Ok(LossGrad { loss, grad })
}

/// `−(2/β) log σ(−β log(p/p_ref))`.
pub fn loss_npo(model: &ToyModel, trace: &ForwardTrace, ref_trace: &ForwardTrace, beta: f64) -> Result<LossGrad> {
    if !(beta > 0.0) {
        return Err(Error::param("npo beta must be > 0"));
    }
    let ratio = trace.seq_log_prob() - ref_trace.seq_log_prob();
    let loss = -2.0 / beta * log_sigmoid(-beta * ratio);
    // d/dr of −(2/β) log σ(−βr) = 2(1 − σ(−βr))
    let coeff = 2.0 * (1.0 - sigmoid(-beta * ratio));
    let grad = model.backward_general(trace, &vec![coeff; trace.len()], None)?;
    Ok(LossGrad { loss, grad })
}

/// `−(2/β) log σ(−(β/|y|) log p − γ)`.
pub fn loss_simnpo(model: &ToyModel, trace: &ForwardTrace, beta: f64, gamma: f64) -> Result<LossGrad> {
    if !(beta > 0.0) {
        return Err(Error::param("simnpo beta must be > 0"));
    }
    if trace.is_empty() {
        return Err(Error::Input("empty answer".into()));
    }
    let n = trace.len() as f64;
    let arg = -(beta / n) * trace.seq_log_prob() - gamma;
    let loss = -2.0 / beta * log_sigmoid(arg);
    let coeff = 2.0 / n * (1.0 - sigmoid(arg));
    let grad = model.backward_general(trace, &vec![coeff; trace.len()], None)?;
    Ok(LossGrad { loss, grad })
}

/// Random target direction `u ∈ [0,1)^hidden_dim`.
pub fn rmu_direction(hidden_dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, 0x2a0);
    (0..hidden_dim).map(|_| rng.gen::<f64>()).collect()
}

/// Mean squared distance of the hidden states to `β·u`.
pub fn rmu_value(hidden: &[Vec<f64>], u: &[f64], beta: f64) -> Result<f64> {
    if hidden.len() < 2 {
        return Err(Error::Metric("representation loss needs an answer of length >= 2".into()));
    }
    let terms = hidden.len() - 1;
    let sum: f64 = hidden[..terms]
        .iter()
        .map(|phi| phi.iter().zip(u).map(|(a, b)| (a - beta * b).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / terms as f64)
}

/// Representation misdirection over the first `|y| − 1` positions.
pub fn loss_rmu(model: &ToyModel, trace: &ForwardTrace, u: &[f64], beta: f64) -> Result<LossGrad> {
    let hidden: Vec<Vec<f64>> = trace.positions.iter().map(|p| p.hidden.clone()).collect();
    if hidden.first().is_some_and(|h| h.len() != u.len()) {
        return Err(Error::Shape {
            expected: hidden[0].len(),
            actual: u.len(),
        });
    }
    let loss = rmu_value(&hidden, u, beta)?;
    let terms = (trace.len() - 1) as f64;
    let hidden_grads: Vec<Vec<f64>> = hidden
        .iter()
        .enumerate()
        .map(|(k, phi)| {
            if k + 1 < trace.len() {
                phi.iter().zip(u).map(|(a, b)| 2.0 * (a - beta * b) / terms).collect()
            } else {
                vec![0.0; phi.len()]
            }
        })
        .collect();
    let grad = model.backward_general(trace, &vec![0.0; trace.len()], Some(&hidden_grads))?;
    Ok(LossGrad { loss, grad })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Ga,
    ReweightedGa,
    Po,
    Dpo,
    Npo,
    SimNpo,
    Rmu,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Ga => "ga",
            Family::ReweightedGa => "reweighted_ga",
            Family::Po => "po",
            Family::Dpo => "dpo",
            Family::Npo => "npo",
            Family::SimNpo => "simnpo",
            Family::Rmu => "rmu",
        }
    }

    pub fn needs_reference(&self) -> bool {
        matches!(self, Family::Dpo | Family::Npo)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ga" => Family::Ga,
            "reweighted_ga" => Family::ReweightedGa,
            "po" => Family::Po,
            "dpo" => Family::Dpo,
            "npo" => Family::Npo,
            "simnpo" => Family::SimNpo,
            "rmu" => Family::Rmu,
            other => return Err(Error::param(format!("unknown objective family `{other}`"))),
        })
    }
}

/// Full description of an unlearning objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub family: Family,
    /// Multiplied together; only used by `reweighted_ga`.
    pub criteria: Vec<CriterionSpec>,
    pub sampling: Option<SamplingSpec>,
    pub granularity: Granularity,
    pub group_count: usize,
    pub retain_lambda: f64,
    /// Preference temperature for dpo / npo / simnpo.
    pub beta: f64,
    pub gamma: f64,
    pub rmu_beta: f64,
    pub rmu_seed: u64,
    pub idk: TokenSequence,
}

impl ObjectiveSpec {
    /// Family defaults: dpo β = 0.3, npo β = 0.1, simnpo β = 2.5 and γ = 0.1375,
    /// rmu β = 6.5.
    pub fn new(family: Family) -> Self {
        let beta = match family {
            Family::Dpo => 0.3,
            Family::Npo => 0.1,
            Family::SimNpo => 2.5,
            _ => 1.0,
        };
        ObjectiveSpec {
            family,
            criteria: Vec::new(),
            sampling: None,
            granularity: Granularity::Token,
            group_count: DEFAULT_GROUP_COUNT,
            retain_lambda: 0.0,
            beta,
            gamma: if family == Family::SimNpo { 0.1375 } else { 0.0 },
            rmu_beta: 6.5,
            rmu_seed: 0,
            idk: vec![IDK; 3],
        }
    }

    pub fn reweighted(criteria: Vec<CriterionSpec>) -> Self {
        ObjectiveSpec {
            criteria,
            ..Self::new(Family::ReweightedGa)
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.retain_lambda = lambda;
        self
    }

    pub fn needs_reference(&self) -> bool {
        self.family.needs_reference() || self.criteria.iter().any(CriterionSpec::needs_reference)
    }

    /// Short label of the criteria, e.g. `saturation*importance`.
    pub fn criterion_label(&self) -> String {
        if self.criteria.is_empty() {
            return "none".into();
        }
        self.criteria.iter().map(|c| c.kind.name()).collect::<Vec<_>>().join("*")
    }

    pub fn validate(&self, vocab_size: usize, has_reference: bool) -> Result<()> {
        let reweighted = self.family == Family::ReweightedGa;
        if reweighted && self.criteria.is_empty() {
            return Err(Error::Config("reweighted_ga requires a criterion".into()));
        }
        if !reweighted && !self.criteria.is_empty() {
            return Err(Error::Config(format!(
                "criterion given for family {}, which does not take one",
                self.family.name()
            )));
        }
        if !reweighted && (self.sampling.is_some() || self.granularity != Granularity::Token) {
            return Err(Error::Config("sampling and granularity apply to reweighted_ga only".into()));
        }
        for c in &self.criteria {
            c.validate()?;
        }
        if let Some(s) = &self.sampling {
            s.validate()?;
        }
        if self.granularity == Granularity::Group && self.group_count == 0 {
            return Err(Error::Config("group_count must be >= 1".into()));
        }
        if !(self.retain_lambda >= 0.0 && self.retain_lambda.is_finite()) {
            return Err(Error::Config("retain_lambda must be >= 0".into()));
        }
        if matches!(self.family, Family::Dpo | Family::Npo | Family::SimNpo) && !(self.beta > 0.0) {
            return Err(Error::Config("beta must be > 0".into()));
        }
        if matches!(self.family, Family::Po | Family::Dpo)
            && (self.idk.is_empty() || self.idk.iter().any(|&t| t as usize >= vocab_size))
        {
            return Err(Error::Config("idk sequence is empty or outside the vocabulary".into()));
        }
        if self.needs_reference() && !has_reference {
            return Err(Error::Config(format!(
                "objective {} needs a reference model",
                self.family.name()
            )));
        }
        Ok(())
    }
}

/// Fixed state shared by all steps of one unlearning run.
#[derive(Debug, Clone)]
pub struct ObjectiveContext {
    pub reference: Option<ModelSnapshot>,
    pub rmu_direction: Vec<f64>,
}

impl ObjectiveContext {
    pub fn new(spec: &ObjectiveSpec, model: &ToyModel, reference: Option<ModelSnapshot>) -> Self {
        ObjectiveContext {
            reference,
            rmu_direction: rmu_direction(model.config().hidden_dim, spec.rmu_seed),
        }
    }

    fn reference(&self) -> Result<&ModelSnapshot> {
        self.reference
            .as_ref()
            .ok_or_else(|| Error::Config("objective needs a reference model".into()))
    }
}

/// Weights produced by the criterion → mask → granularity pipeline for each
/// forget pair of a batch.
pub fn pipeline_weights(
    spec: &ObjectiveSpec,
    ctx: &ObjectiveContext,
    batch: &[(usize, &QAPair)],
    traces: &[ForwardTrace],
) -> Result<Vec<WeightVector>> {
    let mut weights = Vec::with_capacity(batch.len());
    for ((id, pair), trace) in batch.iter().zip(traces) {
        let probs = trace.probs();
        let log_probs = trace.log_probs();
        let ref_seq_log_prob = if spec.criteria.iter().any(CriterionSpec::needs_reference) {
            Some(ctx.reference()?.forward(pair)?.seq_log_prob())
        } else {
            None
        };
        let input = WeightInput {
            probs: &probs,
            log_probs: &log_probs,
            key_positions: &pair.key_positions,
            ref_seq_log_prob,
        };
        let mut w = combined_weights(&spec.criteria, &input)?;
        if let Some(sampling) = &spec.sampling {
            let mask = hard_sample_mask(&probs, sampling, *id as u64)?;
            w = crate::reweight::combine_weights(&w, &mask)?;
        }
        weights.push(w);
    }
    if spec.granularity != Granularity::Token {
        let peers = weights.clone();
        weights = weights
            .iter()
            .map(|w| aggregate_granularity(w, spec.granularity, spec.group_count.min(w.len()), &peers))
            .collect::<Result<_>>()?;
    }
    Ok(weights)
}

/// Forget-side loss for one pair plus the per-token coefficient magnitude
/// applied to its log-likelihood (for telemetry and traces).
fn forget_term(
    model: &ToyModel,
    spec: &ObjectiveSpec,
    ctx: &ObjectiveContext,
    pair: &QAPair,
    trace: &ForwardTrace,
    weights: Option<&WeightVector>,
) -> Result<(LossGrad, Vec<f64>)> {
    let n = trace.len();
    Ok(match spec.family {
        Family::Ga => (loss_ga(model, trace)?, vec![1.0; n]),
        Family::ReweightedGa => {
            let w = weights.ok_or_else(|| Error::Config("missing pipeline weights".into()))?;
            (loss_reweighted_ga(model, trace, w)?, w.0.clone())
        }
        Family::Po => {
            let idk = model.forward_sequence(&pair.question, &spec.idk)?;
            (loss_po(model, &idk)?, vec![0.0; n])
        }
        Family::Dpo => {
            let reference = ctx.reference()?.model();
            let win = model.forward_sequence(&pair.question, &spec.idk)?;
            let ref_win = reference.forward_sequence(&pair.question, &spec.idk)?;
            let ref_lose = reference.forward(pair)?;
            let lg = loss_dpo(model, &win, trace, &ref_win, &ref_lose, spec.beta)?;
            let margin = spec.beta
                * ((win.seq_log_prob() - ref_win.seq_log_prob()) - (trace.seq_log_prob() - ref_lose.seq_log_prob()));
            (lg, vec![2.0 * sigmoid(-margin); n])
        }
        Family::Npo => {
            let ref_trace = ctx.reference()?.forward(pair)?;
            let w = npo_weight_from_logs(trace.seq_log_prob(), ref_trace.seq_log_prob(), spec.beta);
            (loss_npo(model, trace, &ref_trace, spec.beta)?, vec![w; n])
        }
        Family::SimNpo => {
            let len = n as f64;
            let arg = -(spec.beta / len) * trace.seq_log_prob() - spec.gamma;
            let coeff = 2.0 / len * (1.0 - sigmoid(arg));
            (loss_simnpo(model, trace, spec.beta, spec.gamma)?, vec![coeff; n])
        }
        Family::Rmu => {
            let scale = 1.0 / (n.max(2) - 1) as f64;
            (loss_rmu(model, trace, &ctx.rmu_direction, spec.rmu_beta)?, vec![scale; n])
        }
    })
}

/// Batch objective value and gradient before the optimizer step.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub total: LossGrad,
    pub forget_loss: f64,
    pub retain_loss: f64,
    /// Per forget pair: the coefficients applied to each token's log-likelihood.
    pub token_weights: Vec<Vec<f64>>,
    pub traces: Vec<ForwardTrace>,
}

pub fn batch_objective(
    model: &ToyModel,
    spec: &ObjectiveSpec,
    ctx: &ObjectiveContext,
    forget: &[(usize, &QAPair)],
    retain: &[&QAPair],
) -> Result<BatchObjective> {
    if forget.is_empty() {
        return Err(Error::Input("forget batch is empty".into()));
    }
    let traces: Vec<ForwardTrace> = forget
        .par_iter()
        .map(|(_, p)| model.forward(p))
        .collect::<Result<_>>()?;
    let weights = if spec.family == Family::ReweightedGa {
        Some(pipeline_weights(spec, ctx, forget, &traces)?)
    } else {
        None
    };
    let terms: Vec<(LossGrad, Vec<f64>)> = forget
        .par_iter()
        .zip(traces.par_iter())
        .enumerate()
        .map(|(i, ((_, pair), trace))| forget_term(model, spec, ctx, pair, trace, weights.as_ref().map(|w| &w[i])))
        .collect::<Result<_>>()?;

    let n = terms.len() as f64;
    let forget_loss = terms.iter().map(|(lg, _)| lg.loss).sum::<f64>() / n;
    let mut token_weights = Vec::with_capacity(terms.len());
    let mut grads = Vec::with_capacity(terms.len());
    for (lg, w) in terms {
        grads.push(lg.grad);
        token_weights.push(w);
    }
    let forget_total = LossGrad {
        loss: forget_loss,
        grad: mean_gradient(grads, model.params().len()),
    };

    let retain_traces: Vec<ForwardTrace> = retain
        .par_iter()
        .map(|p| model.forward(p))
        .collect::<Result<_>>()?;
    let retain_loss = if retain_traces.is_empty() {
        0.0
    } else {
        -retain_traces.iter().map(ForwardTrace::seq_log_prob).sum::<f64>() / retain_traces.len() as f64
    };
    let total = loss_gd(forget_total, model, &retain_traces, spec.retain_lambda)?;
    Ok(BatchObjective {
        total,
        forget_loss,
        retain_loss,
        token_weights,
        traces,
    })
}

/// One optimizer step worth of measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTelemetry {
    pub step: usize,
    pub forget_loss: f64,
    pub retain_loss: f64,
    pub grad_norm: f64,
    pub w_min: f64,
    pub w_mean: f64,
    pub w_max: f64,
}

/// Optional per-token diagnostics gathered during unlearning.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub trace: Option<LossWeightTrace>,
    /// KTL index of every key token at every step.
    pub ktl: Option<Vec<f64>>,
}

impl Diagnostics {
    pub fn enabled() -> Self {
        Diagnostics {
            trace: Some(LossWeightTrace::new()),
            ktl: Some(Vec::new()),
        }
    }
}

/// Stateful driver for a sequence of unlearning steps.
#[derive(Debug, Clone)]
pub struct Unlearner {
    pub spec: ObjectiveSpec,
    pub ctx: ObjectiveContext,
    pub optimizer: OptimizerState,
    pub diagnostics: Diagnostics,
    step: usize,
}

impl Unlearner {
    pub fn new(
        spec: ObjectiveSpec,
        model: &ToyModel,
        reference: Option<ModelSnapshot>,
        optimizer: OptimizerState,
        diagnostics: Diagnostics,
    ) -> Result<Self> {
        spec.validate(model.config().vocab_size, reference.is_some())?;
        let ctx = ObjectiveContext::new(&spec, model, reference);
        Ok(Unlearner {
            spec,
            ctx,
            optimizer,
            diagnostics,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn step(
        &mut self,
        model: &mut ToyModel,
        corpus: &Corpus,
        forget_ids: &[usize],
        retain_ids: &[usize],
        lr: f64,
    ) -> Result<StepTelemetry> {
        let forget: Vec<(usize, &QAPair)> = forget_ids.iter().map(|&i| (i, &corpus.pairs[i])).collect();
        let retain = corpus.pairs_of(if self.spec.retain_lambda > 0.0 { retain_ids } else { &[] });
        unlearn_step(model, &forget, &retain, &self.spec, &self.ctx, &mut self.optimizer, lr, self.step, &mut self.diagnostics)
            .inspect(|_| self.step += 1)
    }
}

/// Computes weights, assembles the objective, applies one optimizer step.
#[allow(clippy::too_many_arguments)]
pub fn unlearn_step(
    model: &mut ToyModel,
    forget: &[(usize, &QAPair)],
    retain: &[&QAPair],
    spec: &ObjectiveSpec,
    ctx: &ObjectiveContext,
    optimizer: &mut OptimizerState,
    lr: f64,
    step: usize,
    diagnostics: &mut Diagnostics,
) -> Result<StepTelemetry> {
    let batch = batch_objective(model, spec, ctx, forget, retain)?;
    if !batch.total.loss.is_finite() {
        return Err(Error::Training(format!("non-finite loss at step {step}")));
    }

    let all: Vec<f64> = batch.token_weights.iter().flatten().copied().collect();
    let (w_min, w_max) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(w), hi.max(w)));
    let w_mean = all.iter().sum::<f64>() / all.len().max(1) as f64;

    for (((id, pair), trace), weights) in forget.iter().zip(&batch.traces).zip(&batch.token_weights) {
        if let Some(t) = diagnostics.trace.as_mut() {
            t.record(step, *id, &trace.nll(), weights, &pair.key_flags())?;
        }
        if let Some(ktl) = diagnostics.ktl.as_mut() {
            if !pair.key_positions.is_empty() {
                ktl.extend(ktl_index(&trace.probs(), &pair.key_positions)?);
            }
        }
    }

    let telemetry = StepTelemetry {
        step,
        forget_loss: batch.forget_loss,
        retain_loss: batch.retain_loss,
        grad_norm: batch.total.grad.norm(),
        w_min,
        w_mean,
        w_max,
    };
    optimizer_step(model, &batch.total.grad, optimizer, lr)?;
    Ok(telemetry)
}

/// True when any criterion is importance-based.
pub fn uses_importance(spec: &ObjectiveSpec) -> bool {
    spec.criteria.iter().any(|c| c.kind == CriterionKind::Importance)
}
