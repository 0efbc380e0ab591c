//! Flat `key = value` experiment configuration with dotted keys.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, unknown keys are rejected, and [`ExperimentConfig::to_text`]
//! writes the canonical form used for hashing.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::model::{FinetuneConfig, ModelConfig, OptimizerKind};
use crate::objectives::{Family, ObjectiveSpec};
use crate::reweight::{CriterionKind, CriterionSpec, Granularity, SamplingSpec, SamplingStrategy, DEFAULT_GROUP_COUNT};
use crate::rng::derive_seed;

/// Seed streams derived from the top-level seed.
pub mod stream {
    pub const CORPUS: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const FINETUNE: u64 = 4;
    pub const GOLD: u64 = 5;
    pub const UNLEARN: u64 = 6;
    pub const SAMPLING: u64 = 7;
    pub const RMU: u64 = 8;
    pub const MC: u64 = 9;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusParams {
    pub profiles: usize,
    pub qa_per_profile: usize,
    pub vocab_size: u32,
    pub perturbations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitParams {
    pub forget: f64,
    pub holdout: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnParams {
    pub objective: Family,
    pub criteria: Vec<CriterionKind>,
    pub p: f64,
    pub tau: f64,
    /// Criterion β; `None` keeps each criterion's default.
    pub beta: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
    /// Preference temperature of dpo / npo / simnpo; `None` keeps the family default.
    pub loss_beta: Option<f64>,
    pub gamma: Option<f64>,
    pub rmu_beta: f64,
    pub sampling: Option<SamplingStrategy>,
    pub sampling_beta: f64,
    pub granularity: Granularity,
    pub groups: usize,
    pub schedule: ScheduleParams,
    pub optimizer: OptimizerKind,
    pub reference: bool,
    /// Stop once the gradient norm jumps by this factor between steps; 0 disables.
    pub early_stop_factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricToggles {
    pub es: bool,
    pub es_perturb: bool,
    pub forget_quality: bool,
    pub model_utility: bool,
    pub memorization: bool,
    pub privleak: bool,
    pub accuracy: bool,
    pub min_k: f64,
    pub verbmem_prefix: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusParams,
    pub split: SplitParams,
    pub context_window: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub finetune: ScheduleParams,
    pub gold: bool,
    pub unlearn: UnlearnParams,
    pub metrics: MetricToggles,
    pub trace: bool,
    pub ktl: bool,
    pub checkpoints: bool,
    /// Output directory; not part of the hash.
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            corpus: CorpusParams {
                profiles: 100,
                qa_per_profile: 4,
                vocab_size: 256,
                perturbations: 3,
            },
            split: SplitParams {
                forget: 0.05,
                holdout: 0.05,
            },
            context_window: 8,
            embed_dim: 12,
            hidden_dim: 48,
            finetune: ScheduleParams {
                epochs: 40,
                batch_size: 16,
                lr: 0.01,
                warmup: 0.1,
            },
            gold: true,
            unlearn: UnlearnParams {
                objective: Family::Ga,
                criteria: Vec::new(),
                p: 0.3,
                tau: 1.0,
                beta: None,
                beta1: 5.0,
                beta2: 1.0,
                lambda: 1.0,
                loss_beta: None,
                gamma: None,
                rmu_beta: 6.5,
                sampling: None,
                sampling_beta: 0.5,
                granularity: Granularity::Token,
                groups: DEFAULT_GROUP_COUNT,
                schedule: ScheduleParams {
                    epochs: 10,
                    batch_size: 16,
                    lr: 0.02,
                    warmup: 0.0,
                },
                optimizer: OptimizerKind::Adam,
                reference: true,
                early_stop_factor: 0.0,
            },
            metrics: MetricToggles {
                es: true,
                es_perturb: true,
                forget_quality: true,
                model_utility: true,
                memorization: true,
                privleak: true,
                accuracy: true,
                min_k: 0.2,
                verbmem_prefix: 4,
            },
            trace: false,
            ktl: false,
            checkpoints: true,
            out: PathBuf::from("runs"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_opt(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "default" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn opt_text(v: Option<f64>) -> String {
    v.map_or_else(|| "default".into(), |x| x.to_string())
}

fn with_key<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Config(format!("`{key}`: {e}")))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let u = &mut self.unlearn;
        let m = &mut self.metrics;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "corpus.profiles" => self.corpus.profiles = parse(key, value)?,
            "corpus.qa_per_profile" => self.corpus.qa_per_profile = parse(key, value)?,
            "corpus.vocab_size" => self.corpus.vocab_size = parse(key, value)?,
            "corpus.perturbations" => self.corpus.perturbations = parse(key, value)?,
            "split.forget" => self.split.forget = parse(key, value)?,
            "split.holdout" => self.split.holdout = parse(key, value)?,
            "model.context_window" => self.context_window = parse(key, value)?,
            "model.embed_dim" => self.embed_dim = parse(key, value)?,
            "model.hidden_dim" => self.hidden_dim = parse(key, value)?,
            "finetune.epochs" => self.finetune.epochs = parse(key, value)?,
            "finetune.batch_size" => self.finetune.batch_size = parse(key, value)?,
            "finetune.lr" => self.finetune.lr = parse(key, value)?,
            "finetune.warmup" => self.finetune.warmup = parse(key, value)?,
            "gold.enabled" => self.gold = parse(key, value)?,
            "unlearn.objective" => u.objective = with_key(key, value.parse())?,
            "unlearn.criteria" => {
                u.criteria = if value.is_empty() || value == "none" {
                    Vec::new()
                } else {
                    value
                        .split(['*', ','])
                        .map(|s| with_key(key, s.trim().parse()))
                        .collect::<Result<_>>()?
                }
            }
            "unlearn.p" => u.p = parse(key, value)?,
            "unlearn.tau" => u.tau = parse(key, value)?,
            "unlearn.beta" => u.beta = parse_opt(key, value)?,
            "unlearn.beta1" => u.beta1 = parse(key, value)?,
            "unlearn.beta2" => u.beta2 = parse(key, value)?,
            "unlearn.lambda" => u.lambda = parse(key, value)?,
            "unlearn.loss_beta" => u.loss_beta = parse_opt(key, value)?,
            "unlearn.gamma" => u.gamma = parse_opt(key, value)?,
            "unlearn.rmu_beta" => u.rmu_beta = parse(key, value)?,
            "unlearn.sampling" => {
                u.sampling = if value == "none" { None } else { Some(with_key(key, value.parse())?) }
            }
            "unlearn.sampling_beta" => u.sampling_beta = parse(key, value)?,
            "unlearn.granularity" => u.granularity = with_key(key, value.parse())?,
            "unlearn.groups" => u.groups = parse(key, value)?,
            "unlearn.epochs" => u.schedule.epochs = parse(key, value)?,
            "unlearn.batch_size" => u.schedule.batch_size = parse(key, value)?,
            "unlearn.lr" => u.schedule.lr = parse(key, value)?,
            "unlearn.warmup" => u.schedule.warmup = parse(key, value)?,
            "unlearn.optimizer" => u.optimizer = with_key(key, value.parse())?,
            "unlearn.reference" => u.reference = parse(key, value)?,
            "unlearn.early_stop_factor" => u.early_stop_factor = parse(key, value)?,
            "metrics.es" => m.es = parse(key, value)?,
            "metrics.es_perturb" => m.es_perturb = parse(key, value)?,
            "metrics.forget_quality" => m.forget_quality = parse(key, value)?,
            "metrics.model_utility" => m.model_utility = parse(key, value)?,
            "metrics.memorization" => m.memorization = parse(key, value)?,
            "metrics.privleak" => m.privleak = parse(key, value)?,
            "metrics.accuracy" => m.accuracy = parse(key, value)?,
            "metrics.min_k" => m.min_k = parse(key, value)?,
            "metrics.verbmem_prefix" => m.verbmem_prefix = parse(key, value)?,
            "diagnostics.trace" => self.trace = parse(key, value)?,
            "diagnostics.ktl" => self.ktl = parse(key, value)?,
            "checkpoints" => self.checkpoints = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// All keys except `out`, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let u = &self.unlearn;
        let m = &self.metrics;
        let criteria = if u.criteria.is_empty() {
            "none".to_string()
        } else {
            u.criteria.iter().map(|c| c.name()).collect::<Vec<_>>().join(",")
        };
        vec![
            ("seed", self.seed.to_string()),
            ("corpus.profiles", self.corpus.profiles.to_string()),
            ("corpus.qa_per_profile", self.corpus.qa_per_profile.to_string()),
            ("corpus.vocab_size", self.corpus.vocab_size.to_string()),
            ("corpus.perturbations", self.corpus.perturbations.to_string()),
            ("split.forget", self.split.forget.to_string()),
            ("split.holdout", self.split.holdout.to_string()),
            ("model.context_window", self.context_window.to_string()),
            ("model.embed_dim", self.embed_dim.to_string()),
            ("model.hidden_dim", self.hidden_dim.to_string()),
            ("finetune.epochs", self.finetune.epochs.to_string()),
            ("finetune.batch_size", self.finetune.batch_size.to_string()),
            ("finetune.lr", self.finetune.lr.to_string()),
            ("finetune.warmup", self.finetune.warmup.to_string()),
            ("gold.enabled", self.gold.to_string()),
            ("unlearn.objective", u.objective.name().to_string()),
            ("unlearn.criteria", criteria),
            ("unlearn.p", u.p.to_string()),
            ("unlearn.tau", u.tau.to_string()),
            ("unlearn.beta", opt_text(u.beta)),
            ("unlearn.beta1", u.beta1.to_string()),
            ("unlearn.beta2", u.beta2.to_string()),
            ("unlearn.lambda", u.lambda.to_string()),
            ("unlearn.loss_beta", opt_text(u.loss_beta)),
            ("unlearn.gamma", opt_text(u.gamma)),
            ("unlearn.rmu_beta", u.rmu_beta.to_string()),
            ("unlearn.sampling", u.sampling.map_or("none", |s| s.name()).to_string()),
            ("unlearn.sampling_beta", u.sampling_beta.to_string()),
            ("unlearn.granularity", u.granularity.name().to_string()),
            ("unlearn.groups", u.groups.to_string()),
            ("unlearn.epochs", u.schedule.epochs.to_string()),
            ("unlearn.batch_size", u.schedule.batch_size.to_string()),
            ("unlearn.lr", u.schedule.lr.to_string()),
            ("unlearn.warmup", u.schedule.warmup.to_string()),
            ("unlearn.optimizer", u.optimizer.name().to_string()),
            ("unlearn.reference", u.reference.to_string()),
            ("unlearn.early_stop_factor", u.early_stop_factor.to_string()),
            ("metrics.es", m.es.to_string()),
            ("metrics.es_perturb", m.es_perturb.to_string()),
            ("metrics.forget_quality", m.forget_quality.to_string()),
            ("metrics.model_utility", m.model_utility.to_string()),
            ("metrics.memorization", m.memorization.to_string()),
            ("metrics.privleak", m.privleak.to_string()),
            ("metrics.accuracy", m.accuracy.to_string()),
            ("metrics.min_k", m.min_k.to_string()),
            ("metrics.verbmem_prefix", m.verbmem_prefix.to_string()),
            ("diagnostics.trace", self.trace.to_string()),
            ("diagnostics.ktl", self.ktl.to_string()),
            ("checkpoints", self.checkpoints.to_string()),
        ]
    }

    /// The part of the canonical text that determines the corpus, the split
    /// and the finetuned models.
    pub fn preparation_text(&self) -> String {
        self.entries()
            .into_iter()
            .filter(|(k, _)| ["seed", "corpus.", "split.", "model.", "finetune.", "gold."].iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Canonical text: every key but `out`, one per line.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn seed_for(&self, stream: u64) -> u64 {
        derive_seed(self.seed, stream)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: self.corpus.vocab_size as usize,
            context_window: self.context_window,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
        }
    }

    pub fn finetune_config(&self, stream: u64) -> FinetuneConfig {
        FinetuneConfig {
            epochs: self.finetune.epochs,
            batch_size: self.finetune.batch_size,
            lr: self.finetune.lr,
            warmup_fraction: self.finetune.warmup,
            seed: self.seed_for(stream),
        }
    }

    pub fn objective_spec(&self) -> ObjectiveSpec {
        let u = &self.unlearn;
        let criteria = u
            .criteria
            .iter()
            .map(|&kind| {
                let mut c = CriterionSpec::new(kind);
                c.p = u.p;
                c.tau = u.tau;
                if let Some(b) = u.beta {
                    c.beta = b;
                }
                c.beta1 = u.beta1;
                c.beta2 = u.beta2;
                c
            })
            .collect();
        let mut spec = ObjectiveSpec::new(u.objective);
        spec.criteria = criteria;
        spec.retain_lambda = u.lambda;
        if let Some(b) = u.loss_beta {
            spec.beta = b;
        }
        if let Some(g) = u.gamma {
            spec.gamma = g;
        }
        spec.rmu_beta = u.rmu_beta;
        spec.rmu_seed = self.seed_for(stream::RMU);
        spec.sampling = u.sampling.map(|strategy| SamplingSpec {
            strategy,
            beta: u.sampling_beta,
            seed: self.seed_for(stream::SAMPLING),
        });
        spec.granularity = u.granularity;
        spec.group_count = u.groups;
        spec
    }

    /// The β reported in sweep tables: the first criterion that takes a β,
    /// otherwise the preference temperature.
    pub fn reported_beta(&self) -> f64 {
        use CriterionKind::*;
        let spec = self.objective_spec();
        spec.criteria
            .iter()
            .find(|c| matches!(c.kind, Wga | SimSat | SimImp | Npo | SimNpo))
            .map_or(spec.beta, |c| c.beta)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.profiles == 0 || c.qa_per_profile == 0 {
            return Err(Error::Config("corpus needs at least one profile and one pair".into()));
        }
        Vocab::new(c.vocab_size)?;
        self.model_config().validate()?;
        for (name, s) in [("finetune", &self.finetune), ("unlearn", &self.unlearn.schedule)] {
            if s.batch_size == 0 {
                return Err(Error::Config(format!("{name}.batch_size must be >= 1")));
            }
            if !(s.lr > 0.0 && s.lr.is_finite()) {
                return Err(Error::Config(format!("{name}.lr must be > 0")));
            }
            if !(0.0..1.0).contains(&s.warmup) {
                return Err(Error::Config(format!("{name}.warmup must lie in [0,1)")));
            }
        }
        if !(self.unlearn.early_stop_factor >= 0.0) {
            return Err(Error::Config("unlearn.early_stop_factor must be >= 0".into()));
        }
        let m = &self.metrics;
        if !(m.min_k > 0.0 && m.min_k <= 1.0) {
            return Err(Error::Config("metrics.min_k must lie in (0,1]".into()));
        }
        if !self.gold && (m.forget_quality || m.privleak) {
            return Err(Error::Config(
                "forget_quality and privleak need the gold model (gold.enabled = true)".into(),
            ));
        }
        if m.accuracy && c.perturbations == 0 {
            return Err(Error::Config("metrics.accuracy needs corpus.perturbations >= 1".into()));
        }
        if (m.forget_quality || m.model_utility || m.es_perturb) && c.perturbations == 0 {
            return Err(Error::Config("truth-ratio and perturbed-ES metrics need perturbations".into()));
        }
        self.objective_spec()
            .validate(c.vocab_size as usize, self.unlearn.reference)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn parses_keys_and_comments() {
        let text = "# smoke\nseed = 7\nunlearn.objective = reweighted_ga\nunlearn.criteria = saturation*importance\n\nunlearn.lambda = 1\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.unlearn.criteria, vec![CriterionKind::Saturation, CriterionKind::Importance]);
        assert_eq!(c.objective_spec().criterion_label(), "saturation*importance");
        assert_eq!(c.objective_spec().retain_lambda, 1.0);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(ExperimentConfig::parse("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("seed = x"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("seed 1"), Err(Error::Config(_))));
        assert!(ExperimentConfig::parse("unlearn.objective = nope").unwrap_err().is_validation());
    }

    #[test]
    fn reference_objectives_need_a_reference_stage() {
        let err = ExperimentConfig::parse("unlearn.objective = npo\nunlearn.reference = false").unwrap_err();
        assert!(err.is_validation());
        ExperimentConfig::parse("unlearn.objective = npo").unwrap();
    }

    #[test]
    fn out_is_not_hashed() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn criterion_beta_defaults_per_kind() {
        let mut c = ExperimentConfig::default();
        c.set("unlearn.objective", "reweighted_ga").unwrap();
        c.set("unlearn.criteria", "simsat").unwrap();
        assert_eq!(c.reported_beta(), 2.0);
        c.set("unlearn.beta", "0.5").unwrap();
        assert_eq!(c.reported_beta(), 0.5);
        c.set("unlearn.beta", "default").unwrap();
        assert_eq!(c.unlearn.beta, None);
    }
}
