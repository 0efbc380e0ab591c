//! Evaluation metrics: extraction strength, truth ratio and forget quality,
//! model utility, ROUGE-L based memorization scores, Min-K% membership
//! scores with AUC and privacy leakage, and multiple-choice accuracy.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{QAPair, Token, TokenSequence};
use crate::error::{Error, Result};
use crate::model::ToyModel;
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EsVariant {
    /// Target is the true answer.
    Exact,
    /// Target is the first perturbed answer.
    Perturb,
}

/// `1 − k*/|y|`, or 0 when no prefix restores the suffix.
pub fn extraction_strength_from_restore(restore_index: Option<usize>, answer_len: usize) -> f64 {
    match restore_index {
        Some(k) => 1.0 - k as f64 / answer_len as f64,
        None => 0.0,
    }
}

/// Smallest prefix length `k ∈ [0, |y|−1]` after which greedy decoding
/// reproduces the remaining answer exactly.
pub fn restore_index(model: &ToyModel, question: &[Token], target: &[Token]) -> Result<Option<usize>> {
    if target.is_empty() {
        return Err(Error::Input("answer must be nonempty".into()));
    }
    let mut prompt = question.to_vec();
    for k in 0..target.len() {
        if model.greedy_decode(&prompt, target.len() - k)? == target[k..] {
            return Ok(Some(k));
        }
        prompt.push(target[k]);
    }
    Ok(None)
}

pub fn es_score(model: &ToyModel, pair: &QAPair, variant: EsVariant) -> Result<f64> {
    let target = match variant {
        EsVariant::Exact => &pair.answer,
        EsVariant::Perturb => pair
            .perturbed
            .first()
            .ok_or_else(|| Error::Metric("pair has no perturbed answer".into()))?,
    };
    let k = restore_index(model, &pair.question, target)?;
    Ok(extraction_strength_from_restore(k, target.len()))
}

/// Mean ES over a set of pairs.
pub fn mean_es(model: &ToyModel, pairs: &[&QAPair], variant: EsVariant) -> Result<f64> {
    mean_over(pairs, |p| es_score(model, p, variant))
}

fn mean_over<F>(pairs: &[&QAPair], f: F) -> Result<f64>
where
    F: Fn(&QAPair) -> Result<f64> + Sync,
{
    if pairs.is_empty() {
        return Err(Error::Metric("metric needs a nonempty set of pairs".into()));
    }
    let values: Vec<f64> = pairs.par_iter().map(|p| f(p)).collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// `P(seq | prompt)^{1/|seq|}`.
pub fn normalized_prob(model: &ToyModel, prompt: &[Token], seq: &[Token]) -> Result<f64> {
    if seq.is_empty() {
        return Err(Error::Metric("cannot normalize an empty sequence".into()));
    }
    let trace = model.forward_sequence(prompt, seq)?;
    Ok((trace.seq_log_prob() / seq.len() as f64).exp())
}

/// Mean length-normalized probability of the perturbed answers divided by
/// that of the paraphrase.
pub fn truth_ratio(model: &ToyModel, pair: &QAPair) -> Result<f64> {
    if pair.paraphrase.is_empty() || pair.perturbed.is_empty() {
        return Err(Error::Metric("truth ratio needs a paraphrase and perturbed answers".into()));
    }
    let para = normalized_prob(model, &pair.question, &pair.paraphrase)?;
    let mut wrong = 0.0;
    for p in &pair.perturbed {
        wrong += normalized_prob(model, &pair.question, p)?;
    }
    Ok(wrong / pair.perturbed.len() as f64 / para)
}

pub fn truth_ratios(model: &ToyModel, pairs: &[&QAPair]) -> Result<Vec<f64>> {
    pairs.par_iter().map(|p| truth_ratio(model, p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Largest `n·m` for which the exact null distribution is computed.
const KS_EXACT_LIMIT: usize = 10_000;
const KS_SERIES_TERMS: usize = 100;

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Two-sample Kolmogorov–Smirnov statistic and two-sided p-value.
///
/// Small samples (`n·m ≤ 10 000`) use the exact permutation distribution,
/// counted as monotone lattice paths; larger samples use the asymptotic
/// Kolmogorov distribution at effective size `nm/(n+m)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Metric("KS test needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::Metric("KS samples contain NaN".into()));
    }
    let (xa, xb) = (sorted(a), sorted(b));
    let (n, m) = (xa.len(), xb.len());
    // Walk both sorted samples; the gap is tracked in units of 1/(n·m).
    let (mut i, mut j) = (0usize, 0usize);
    let mut max_gap: i64 = 0;
    while i < n && j < m {
        let v = if xa[i].total_cmp(&xb[j]).is_le() { xa[i] } else { xb[j] };
        while i < n && xa[i] == v {
            i += 1;
        }
        while j < m && xb[j] == v {
            j += 1;
        }
        max_gap = max_gap.max((i as i64 * m as i64 - j as i64 * n as i64).abs());
    }
    let statistic = max_gap as f64 / (n * m) as f64;
    let p_value = if n * m <= KS_EXACT_LIMIT {
        ks_exact_p(n, m, max_gap)
    } else {
        let en = (n * m) as f64 / (n + m) as f64;
        kolmogorov_survival(en.sqrt() * statistic)
    };
    Ok(KsResult { statistic, p_value })
}

/// `P(D ≥ gap/(nm))` under exchangeability: one minus the share of lattice
/// paths from (0,0) to (n,m) that stay strictly inside the band.
fn ks_exact_p(n: usize, m: usize, gap: i64) -> f64 {
    if gap == 0 {
        return 1.0;
    }
    let inside = |i: usize, j: usize| (i as i64 * m as i64 - j as i64 * n as i64).abs() < gap;
    // Paths are counted as probabilities to stay within f64 range.
    let mut row = vec![0.0f64; m + 1];
    for i in 0..=n {
        for j in 0..=m {
            let v = if i == 0 && j == 0 {
                1.0
            } else if !inside(i, j) {
                0.0
            } else {
                let from_up = if i > 0 { row[j] * i as f64 / (i + j) as f64 } else { 0.0 };
                let from_left = if j > 0 { row[j - 1] * j as f64 / (i + j) as f64 } else { 0.0 };
                from_up + from_left
            };
            row[j] = v;
        }
    }
    (1.0 - row[m]).clamp(0.0, 1.0)
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let v = if lambda < 1.0 {
        // Complementary series converges fast for small λ.
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let cdf: f64 = (1..=KS_SERIES_TERMS)
            .map(|j| ((2 * j - 1) as f64).powi(2) * c)
            .map(f64::exp)
            .sum::<f64>()
            * (2.0 * std::f64::consts::PI).sqrt()
            / lambda;
        1.0 - cdf
    } else {
        2.0 * (1..=KS_SERIES_TERMS)
            .map(|j| {
                let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp()
            })
            .sum::<f64>()
    };
    v.clamp(0.0, 1.0)
}

/// KS p-value between the truth ratios of the unlearned and gold models.
pub fn forget_quality(unlearned: &[f64], gold: &[f64]) -> Result<f64> {
    Ok(ks_two_sample(unlearned, gold)?.p_value)
}

/// Harmonic mean of exactly nine nonnegative scores (0 if any is 0).
pub fn model_utility(values: &[f64]) -> Result<f64> {
    if values.len() != 9 {
        return Err(Error::Metric(format!("model utility needs 9 values, got {}", values.len())));
    }
    if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::Metric("model utility inputs must be finite and >= 0".into()));
    }
    if values.contains(&0.0) {
        return Ok(0.0);
    }
    Ok(9.0 / values.iter().map(|v| 1.0 / v).sum::<f64>())
}

/// The nine utility inputs: answer probability, `max(0, 1 − TR)` and
/// ROUGE-L recall, each over the retain, real-profile and world-fact subsets.
pub fn model_utility_inputs(model: &ToyModel, subsets: [&[&QAPair]; 3]) -> Result<[f64; 9]> {
    let mut out = [0.0; 9];
    for (s, pairs) in subsets.iter().enumerate() {
        out[3 * s] = mean_over(pairs, |p| normalized_prob(model, &p.question, &p.answer))?;
        out[3 * s + 1] = mean_over(pairs, |p| truth_ratio(model, p).map(|tr| (1.0 - tr).max(0.0)))?;
        out[3 * s + 2] = knowmem(model, pairs)?;
    }
    Ok(out)
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[Token], b: &[Token]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `LCS(candidate, reference) / |reference|`.
pub fn rouge_l_recall(candidate: &[Token], reference: &[Token]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Metric("ROUGE-L reference is empty".into()));
    }
    Ok(lcs_len(candidate, reference) as f64 / reference.len() as f64)
}

/// Mean ROUGE-L recall of the greedy continuation of the first `prefix_k`
/// tokens of question‖answer against the rest of that text.
pub fn verbmem(model: &ToyModel, pairs: &[&QAPair], prefix_k: usize) -> Result<f64> {
    mean_over(pairs, |p| {
        let text = p.full_text();
        let k = prefix_k.min(text.len() - 1);
        let reference = &text[k..];
        let out = model.greedy_decode(&text[..k], reference.len())?;
        rouge_l_recall(&out, reference)
    })
}

/// Mean ROUGE-L recall of the greedy answer to each question.
pub fn knowmem(model: &ToyModel, pairs: &[&QAPair]) -> Result<f64> {
    mean_over(pairs, |p| {
        let out = model.greedy_decode(&p.question, p.answer.len())?;
        rouge_l_recall(&out, &p.answer)
    })
}

/// Knowledge retention measured on retain pairs.
pub fn utilpres(model: &ToyModel, retain: &[&QAPair]) -> Result<f64> {
    knowmem(model, retain)
}

/// Mean of the lowest `⌈k·n⌉` token log-probabilities.
pub fn min_k_prob(token_log_probs: &[f64], k_percent: f64) -> Result<f64> {
    if token_log_probs.is_empty() {
        return Err(Error::Metric("Min-K% needs a nonempty sequence".into()));
    }
    if !(k_percent > 0.0 && k_percent <= 1.0) {
        return Err(Error::param(format!("k must lie in (0,1], got {k_percent}")));
    }
    let n = token_log_probs.len();
    let count = ((k_percent * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let lowest = sorted(token_log_probs);
    Ok(lowest[..count].iter().sum::<f64>() / count as f64)
}

/// Twice the Mann–Whitney count: 2 per member above a non-member, 1 per tie.
pub fn mann_whitney_doubled(members: &[f64], nonmembers: &[f64]) -> u64 {
    let others = sorted(nonmembers);
    members
        .iter()
        .map(|&s| {
            let below = others.partition_point(|&o| o < s);
            let not_above = others.partition_point(|&o| o <= s);
            (2 * below + (not_above - below)) as u64
        })
        .sum()
}

/// Probability that a random member outscores a random non-member, ties ½.
pub fn auc_roc(members: &[f64], nonmembers: &[f64]) -> Result<f64> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::Metric("AUC needs nonempty member and non-member scores".into()));
    }
    let pairs = 2 * members.len() as u64 * nonmembers.len() as u64;
    Ok(mann_whitney_doubled(members, nonmembers) as f64 / pairs as f64)
}

/// Min-K% membership score of each pair's answer.
pub fn membership_scores(model: &ToyModel, pairs: &[&QAPair], k_percent: f64) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|p| min_k_prob(&model.forward(p)?.log_probs(), k_percent))
        .collect()
}

/// `100 · (AUC_unlearned − AUC_gold) / AUC_gold` from precomputed AUCs.
pub fn privleak_from_auc(auc_unlearned: f64, auc_gold: f64) -> Result<f64> {
    if auc_gold == 0.0 {
        return Err(Error::Metric("gold AUC is zero".into()));
    }
    Ok(100.0 * (auc_unlearned - auc_gold) / auc_gold)
}

/// Relative forget-vs-holdout AUC gap of the unlearned model against the gold model.
pub fn privleak(
    unlearned: &ToyModel,
    gold: &ToyModel,
    forget: &[&QAPair],
    holdout: &[&QAPair],
    k_percent: f64,
) -> Result<f64> {
    let auc = |m: &ToyModel| -> Result<f64> {
        auc_roc(&membership_scores(m, forget, k_percent)?, &membership_scores(m, holdout, k_percent)?)
    };
    privleak_from_auc(auc(unlearned)?, auc(gold)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McItem {
    pub question: TokenSequence,
    pub options: Vec<TokenSequence>,
    pub correct: usize,
}

/// Multiple-choice items: the true answer shuffled among up to three
/// perturbed answers.
pub fn mc_items(pairs: &[&QAPair], seed: u64) -> Vec<McItem> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut options: Vec<(bool, TokenSequence)> = std::iter::once((true, p.answer.clone()))
                .chain(p.perturbed.iter().take(3).map(|q| (false, q.clone())))
                .collect();
            options.shuffle(&mut rng_for(seed, i as u64));
            McItem {
                question: p.question.clone(),
                correct: options.iter().position(|(c, _)| *c).unwrap(),
                options: options.into_iter().map(|(_, o)| o).collect(),
            }
        })
        .collect()
}

/// Picks the option with the highest length-normalized log-likelihood
/// (lowest index on ties).
pub fn mc_predict(model: &ToyModel, item: &McItem) -> Result<usize> {
    if item.options.len() < 2 || item.correct >= item.options.len() || item.options.iter().any(Vec::is_empty) {
        return Err(Error::Input("malformed multiple-choice item".into()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, opt) in item.options.iter().enumerate() {
        let score = model.forward_sequence(&item.question, opt)?.seq_log_prob() / opt.len() as f64;
        if score > best.1 {
            best = (i, score);
        }
    }
    Ok(best.0)
}

pub fn mc_accuracy(model: &ToyModel, items: &[McItem]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Metric("no multiple-choice items".into()));
    }
    let hits: Vec<bool> = items
        .par_iter()
        .map(|it| mc_predict(model, it).map(|p| p == it.correct))
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / items.len() as f64)
}

/// Metric values for one checkpoint. Absent entries were not computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub es_retain: Option<f64>,
    pub es_unlearn: Option<f64>,
    pub es_retain_perturb: Option<f64>,
    pub es_unlearn_perturb: Option<f64>,
    pub forget_quality: Option<f64>,
    pub model_utility: Option<f64>,
    pub verbmem: Option<f64>,
    pub knowmem: Option<f64>,
    pub utilpres: Option<f64>,
    pub privleak: Option<f64>,
    pub accuracy: Option<f64>,
}
