//! Shared test oracles: central finite differences over every parameter and
//! seeded random small instances for each objective family.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unlearn_core::corpus::{QAPair, Token};
use unlearn_core::model::{ModelConfig, ToyModel};
use unlearn_core::objectives::{
    loss_dpo, loss_ga, loss_gd, loss_npo, loss_po, loss_reweighted_ga, loss_rmu, loss_simnpo, rmu_direction, LossGrad,
};
use unlearn_core::reweight::{CriterionKind, CriterionSpec, WeightInput, WeightVector};

pub const FD_STEP: f64 = 1e-5;

/// Central differences of `f` with respect to every parameter.
pub fn finite_difference(model: &ToyModel, f: impl Fn(&ToyModel) -> f64) -> Vec<f64> {
    let mut probe = model.clone();
    (0..model.params().len())
        .map(|i| {
            let x = model.params()[i];
            probe.params_mut()[i] = x + FD_STEP;
            let up = f(&probe);
            probe.params_mut()[i] = x - FD_STEP;
            let down = f(&probe);
            probe.params_mut()[i] = x;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub const TINY: ModelConfig = ModelConfig {
    vocab_size: 12,
    context_window: 3,
    embed_dim: 3,
    hidden_dim: 4,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_seq(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<Token> {
    (0..len).map(|_| rng.gen_range(3..vocab as Token)).collect()
}

/// A pair with a random question, answer of length 2..=6 and key positions.
pub fn random_pair(rng: &mut ChaCha8Rng, vocab: usize) -> QAPair {
    let qlen = rng.gen_range(1..4);
    let alen = rng.gen_range(2..7);
    let answer = random_seq(rng, alen, vocab);
    let key_positions = (0..alen).filter(|_| rng.gen_bool(0.4)).collect();
    QAPair {
        profile_id: 0,
        question: random_seq(rng, qlen, vocab),
        answer: answer.clone(),
        key_positions,
        paraphrase: answer.clone(),
        perturbed: vec![random_seq(rng, alen, vocab)],
    }
}

/// Random model plus a nearby reference model.
pub fn random_models(seed: u64) -> (ToyModel, ToyModel) {
    let model = ToyModel::init(TINY, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let mut reference = model.clone();
    for p in reference.params_mut() {
        *p += r.gen_range(-0.3..0.3);
    }
    (model, reference)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Ga,
    Reweighted(CriterionKind),
    Po,
    Dpo,
    Npo,
    SimNpo,
    Rmu,
    Gd,
}

pub const ALL_FAMILIES: [Family; 13] = [
    Family::Ga,
    Family::Reweighted(CriterionKind::Importance),
    Family::Reweighted(CriterionKind::Saturation),
    Family::Reweighted(CriterionKind::Wga),
    Family::Reweighted(CriterionKind::SimSat),
    Family::Reweighted(CriterionKind::SimImp),
    Family::Reweighted(CriterionKind::SatImp),
    Family::Po,
    Family::Dpo,
    Family::Npo,
    Family::SimNpo,
    Family::Rmu,
    Family::Gd,
];

/// One seeded instance of a family: the objective as a function of the
/// model, with data-dependent weights frozen at the starting parameters.
pub struct Instance {
    pub model: ToyModel,
    pub objective: Box<dyn Fn(&ToyModel) -> LossGrad>,
}

pub fn instance(family: Family, seed: u64) -> Instance {
    let (model, reference) = random_models(seed);
    let mut r = rng(seed.wrapping_mul(31).wrapping_add(7));
    let v = TINY.vocab_size;
    let pair = random_pair(&mut r, v);
    let objective: Box<dyn Fn(&ToyModel) -> LossGrad> = match family {
        Family::Ga => Box::new(move |m| loss_ga(m, &m.forward(&pair).unwrap()).unwrap()),
        Family::Reweighted(kind) => {
            let t0 = model.forward(&pair).unwrap();
            let spec = CriterionSpec::new(kind);
            let w: WeightVector = spec
                .weights(&WeightInput {
                    probs: &t0.probs(),
                    log_probs: &t0.log_probs(),
                    key_positions: &pair.key_positions,
                    ref_seq_log_prob: None,
                })
                .unwrap();
            Box::new(move |m| loss_reweighted_ga(m, &m.forward(&pair).unwrap(), &w).unwrap())
        }
        Family::Po => {
            let idk = vec![1; r.gen_range(1..4)];
            let q = pair.question.clone();
            Box::new(move |m| loss_po(m, &m.forward_sequence(&q, &idk).unwrap()).unwrap())
        }
        Family::Dpo => {
            let idk = vec![1; 3];
            let q = pair.question.clone();
            let ref_win = reference.forward_sequence(&q, &idk).unwrap();
            let ref_lose = reference.forward(&pair).unwrap();
            Box::new(move |m| {
                let win = m.forward_sequence(&q, &idk).unwrap();
                let lose = m.forward(&pair).unwrap();
                loss_dpo(m, &win, &lose, &ref_win, &ref_lose, 0.3).unwrap()
            })
        }
        Family::Npo => {
            let ref_trace = reference.forward(&pair).unwrap();
            Box::new(move |m| loss_npo(m, &m.forward(&pair).unwrap(), &ref_trace, 0.1).unwrap())
        }
        Family::SimNpo => Box::new(move |m| loss_simnpo(m, &m.forward(&pair).unwrap(), 2.5, 0.1375).unwrap()),
        Family::Rmu => {
            let u = rmu_direction(TINY.hidden_dim, seed);
            Box::new(move |m| loss_rmu(m, &m.forward(&pair).unwrap(), &u, 6.5).unwrap())
        }
        Family::Gd => {
            let retain: Vec<QAPair> = (0..3).map(|_| random_pair(&mut r, v)).collect();
            Box::new(move |m| {
                let forget = loss_ga(m, &m.forward(&pair).unwrap()).unwrap();
                let traces: Vec<_> = retain.iter().map(|p| m.forward(p).unwrap()).collect();
                loss_gd(forget, m, &traces, 1.0).unwrap()
            })
        }
    };
    Instance { model, objective }
}

/// Relative error between the analytic and finite-difference gradients.
pub fn gradient_error(family: Family, seed: u64) -> f64 {
    let inst = instance(family, seed);
    let analytic = (inst.objective)(&inst.model).grad.0;
    let numeric = finite_difference(&inst.model, |m| (inst.objective)(m).loss);
    relative_error(&analytic, &numeric)
}
