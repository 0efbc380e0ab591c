//! One experiment: generate → split → finetune → gold model → reference
//! snapshot → unlearning with a checkpoint and a metric report per epoch.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{stream, ExperimentConfig};
use crate::corpus::{generate_corpus_with, split_corpus, write_corpus, write_split, Corpus, QAPair, SplitAssignment};
use crate::error::{Error, Result};
use crate::metrics::{
    auc_roc, forget_quality, knowmem, mc_accuracy, mc_items, mean_es, membership_scores, model_utility,
    model_utility_inputs, privleak_from_auc, truth_ratios, utilpres, verbmem, EsVariant, McItem, MetricReport,
};
use crate::model::{finetune, LrSchedule, ModelSnapshot, OptimizerState, ToyModel};
use crate::objectives::{Diagnostics, StepTelemetry, Unlearner};
use crate::rng::rng_for;

/// Corpus, split and the two finetuned models shared by every unlearning
/// run with the same corpus, model and finetune settings.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub corpus: Corpus,
    pub split: SplitAssignment,
    pub full: ToyModel,
    pub gold: Option<ToyModel>,
    pub finetune_nll: Vec<f64>,
    pub gold_nll: Vec<f64>,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let c = &config.corpus;
    let corpus = generate_corpus_with(
        config.seed_for(stream::CORPUS),
        c.profiles,
        c.qa_per_profile,
        c.vocab_size,
        c.perturbations,
    )
    .map_err(Error::at_stage("generate"))?;
    let split = split_corpus(&corpus, config.split.forget, config.split.holdout, config.seed_for(stream::SPLIT))
        .map_err(Error::at_stage("split"))?;

    let base = ToyModel::init(config.model_config(), config.seed_for(stream::INIT)).map_err(Error::at_stage("finetune"))?;
    let mut full = base.clone();
    let report = finetune(&mut full, &corpus, &split.trained(), &config.finetune_config(stream::FINETUNE))
        .map_err(Error::at_stage("finetune"))?;

    let (gold, gold_nll) = if config.gold {
        let mut gold = base;
        let r = finetune(&mut gold, &corpus, &split.gold_trained(), &config.finetune_config(stream::GOLD))
            .map_err(Error::at_stage("gold"))?;
        if let Some(id) = split.forget.iter().find(|i| r.trained_pairs.contains(i)) {
            return Err(Error::at_stage("gold")(Error::Training(format!(
                "gold model was trained on forget pair {id}"
            ))));
        }
        (Some(gold), r.epoch_nll)
    } else {
        (None, Vec::new())
    };
    Ok(Prepared {
        corpus,
        split,
        full,
        gold,
        finetune_nll: report.epoch_nll,
        gold_nll,
    })
}

/// Precomputed gold-model quantities and the enabled metrics.
pub struct Evaluator<'a> {
    config: &'a ExperimentConfig,
    prepared: &'a Prepared,
    items: Vec<McItem>,
    gold_trs: Option<Vec<f64>>,
    gold_auc: Option<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(config: &'a ExperimentConfig, prepared: &'a Prepared) -> Result<Self> {
        let m = &config.metrics;
        let forget = prepared.corpus.pairs_of(&prepared.split.forget);
        let holdout = prepared.corpus.pairs_of(&prepared.split.holdout);
        let gold = prepared.gold.as_ref();
        let need_gold = || Error::Config("metric needs the gold model".into());
        let gold_trs = if m.forget_quality {
            Some(truth_ratios(gold.ok_or_else(need_gold)?, &forget)?)
        } else {
            None
        };
        let gold_auc = if m.privleak {
            let g = gold.ok_or_else(need_gold)?;
            Some(auc_roc(
                &membership_scores(g, &forget, m.min_k)?,
                &membership_scores(g, &holdout, m.min_k)?,
            )?)
        } else {
            None
        };
        let items = if m.accuracy {
            mc_items(&forget, config.seed_for(stream::MC))
        } else {
            Vec::new()
        };
        Ok(Evaluator {
            config,
            prepared,
            items,
            gold_trs,
            gold_auc,
        })
    }

    fn subset(&self, ids: &[usize]) -> Vec<&'a QAPair> {
        self.prepared.corpus.pairs_of(ids)
    }

    pub fn evaluate(&self, model: &ToyModel) -> Result<MetricReport> {
        let m = &self.config.metrics;
        let split = &self.prepared.split;
        let forget = self.subset(&split.forget);
        let retain = self.subset(&split.retain);
        let mut report = MetricReport::default();
        if m.es {
            report.es_retain = Some(mean_es(model, &retain, EsVariant::Exact)?);
            report.es_unlearn = Some(mean_es(model, &forget, EsVariant::Exact)?);
        }
        if m.es_perturb {
            report.es_retain_perturb = Some(mean_es(model, &retain, EsVariant::Perturb)?);
            report.es_unlearn_perturb = Some(mean_es(model, &forget, EsVariant::Perturb)?);
        }
        if let Some(gold) = &self.gold_trs {
            report.forget_quality = Some(forget_quality(&truth_ratios(model, &forget)?, gold)?);
        }
        if m.model_utility {
            let or_retain = |ids: &[usize]| if ids.is_empty() { retain.clone() } else { self.subset(ids) };
            let real = or_retain(&split.aux_real);
            let world = or_retain(&split.aux_world);
            report.model_utility = Some(model_utility(&model_utility_inputs(model, [&retain, &real, &world])?)?);
        }
        if m.memorization {
            report.verbmem = Some(verbmem(model, &forget, m.verbmem_prefix)?);
            report.knowmem = Some(knowmem(model, &forget)?);
            report.utilpres = Some(utilpres(model, &retain)?);
        }
        if let Some(gold_auc) = self.gold_auc {
            let holdout = self.subset(&split.holdout);
            let auc = auc_roc(
                &membership_scores(model, &forget, m.min_k)?,
                &membership_scores(model, &holdout, m.min_k)?,
            )?;
            report.privleak = Some(privleak_from_auc(auc, gold_auc)?);
        }
        if m.accuracy {
            report.accuracy = Some(mc_accuracy(model, &self.items)?);
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub metrics: MetricReport,
    /// Relative to the run directory.
    pub checkpoint: Option<String>,
}

/// Everything a run reports; serialized as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config: String,
    pub config_hash: String,
    pub objective: String,
    pub criterion: String,
    pub beta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
    pub finetune_nll: Vec<f64>,
    pub gold_nll: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub telemetry: Vec<StepTelemetry>,
    /// Step after which the early-stop hook fired.
    pub stopped_at: Option<usize>,
}

impl RunRecord {
    /// Recomputes the hash of the stored configuration text.
    pub fn verify_hash(&self) -> Result<bool> {
        Ok(ExperimentConfig::parse(&self.config)?.hash() == self.config_hash)
    }

    pub fn final_metrics(&self) -> Option<&MetricReport> {
        self.epochs.last().map(|e| &e.metrics)
    }
}

/// Result of the unlearning stage.
pub struct Unlearned {
    pub record: RunRecord,
    pub model: ToyModel,
    pub diagnostics: Diagnostics,
}

/// Unlearns from `prepared.full`, evaluating after every epoch (epoch 0 is
/// the starting model). Checkpoints go to `dir/checkpoints` when a directory
/// is given and checkpoints are enabled.
pub fn run_unlearning(config: &ExperimentConfig, prepared: &Prepared, dir: Option<&Path>) -> Result<Unlearned> {
    config.validate()?;
    let u = &config.unlearn;
    let spec = config.objective_spec();
    let evaluator = Evaluator::new(config, prepared).map_err(Error::at_stage("evaluate"))?;
    let mut model = prepared.full.clone();
    let reference = u.reference.then(|| ModelSnapshot::new("reference", &model));
    let diagnostics = Diagnostics {
        trace: config.trace.then(Default::default),
        ktl: config.ktl.then(Vec::new),
    };
    let optimizer = OptimizerState::new(u.optimizer, model.params().len());
    let mut unlearner = Unlearner::new(spec.clone(), &model, reference, optimizer, diagnostics)
        .map_err(Error::at_stage("reference"))?;

    let ckpt_dir = dir.filter(|_| config.checkpoints).map(|d| d.join("checkpoints"));
    if let Some(d) = &ckpt_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::at_stage("write")(e.into()))?;
    }
    let mut epochs = Vec::new();
    let checkpoint = |epoch: usize, model: &ToyModel| -> Result<Option<String>> {
        let Some(d) = &ckpt_dir else { return Ok(None) };
        let name = format!("epoch_{epoch:03}.ckpt");
        model.save(&d.join(&name))?;
        Ok(Some(format!("checkpoints/{name}")))
    };
    epochs.push(EpochRecord {
        epoch: 0,
        metrics: evaluator.evaluate(&model).map_err(Error::at_stage("evaluate"))?,
        checkpoint: checkpoint(0, &model).map_err(Error::at_stage("write"))?,
    });

    let split = &prepared.split;
    let steps_per_epoch = split.forget.len().div_ceil(u.schedule.batch_size);
    let schedule = LrSchedule::new(u.schedule.lr, u.schedule.warmup, steps_per_epoch * u.schedule.epochs);
    let mut rng = rng_for(config.seed_for(stream::UNLEARN), 0);
    let mut forget_order = split.forget.clone();
    let mut retain_order = split.retain.clone();
    let mut retain_cursor = retain_order.len();
    let mut telemetry = Vec::new();
    let mut stopped_at = None;
    let mut prev_norm: Option<f64> = None;

    'epochs: for epoch in 1..=u.schedule.epochs {
        forget_order.shuffle(&mut rng);
        for batch in forget_order.chunks(u.schedule.batch_size) {
            let mut retain_batch = Vec::new();
            if u.lambda > 0.0 && !retain_order.is_empty() {
                while retain_batch.len() < u.schedule.batch_size.min(retain_order.len()) {
                    if retain_cursor == retain_order.len() {
                        retain_order.shuffle(&mut rng);
                        retain_cursor = 0;
                    }
                    retain_batch.push(retain_order[retain_cursor]);
                    retain_cursor += 1;
                }
            }
            let step = unlearner.steps_taken();
            let t = unlearner
                .step(&mut model, &prepared.corpus, batch, &retain_batch, schedule.lr(step))
                .map_err(Error::at_stage("unlearn"))?;
            let jumped = u.early_stop_factor > 0.0
                && prev_norm.is_some_and(|p| p > 0.0 && t.grad_norm > u.early_stop_factor * p);
            prev_norm = Some(t.grad_norm);
            telemetry.push(t);
            if jumped {
                stopped_at = Some(step);
                epochs.push(EpochRecord {
                    epoch,
                    metrics: evaluator.evaluate(&model).map_err(Error::at_stage("evaluate"))?,
                    checkpoint: checkpoint(epoch, &model).map_err(Error::at_stage("write"))?,
                });
                break 'epochs;
            }
        }
        epochs.push(EpochRecord {
            epoch,
            metrics: evaluator.evaluate(&model).map_err(Error::at_stage("evaluate"))?,
            checkpoint: checkpoint(epoch, &model).map_err(Error::at_stage("write"))?,
        });
    }

    let record = RunRecord {
        run_id: "run".into(),
        config: config.to_text(),
        config_hash: config.hash(),
        objective: spec.family.name().into(),
        criterion: spec.criterion_label(),
        beta: config.reported_beta(),
        beta1: u.beta1,
        beta2: u.beta2,
        lambda: u.lambda,
        finetune_nll: prepared.finetune_nll.clone(),
        gold_nll: prepared.gold_nll.clone(),
        epochs,
        telemetry,
        stopped_at,
    };
    Ok(Unlearned {
        record,
        model,
        diagnostics: unlearner.diagnostics,
    })
}

/// Artifact names inside a run directory.
pub mod files {
    pub const CONFIG: &str = "config.txt";
    pub const CORPUS_DIR: &str = "corpus";
    pub const SPLIT: &str = "corpus/split.json";
    pub const FULL: &str = "checkpoints/full.ckpt";
    pub const GOLD: &str = "checkpoints/gold.ckpt";
    pub const REPORT: &str = "report.json";
    pub const EPOCHS_CSV: &str = "report.csv";
    pub const TELEMETRY: &str = "telemetry.csv";
    pub const TRACE: &str = "trace.csv";
    pub const KTL: &str = "ktl.csv";
    pub const PREPARED: &str = "prepared.txt";
    pub const FAILED: &str = "FAILED";
}

/// Writes the corpus, split and finetuned models of a prepared run.
pub fn write_prepared(dir: &Path, prepared: &Prepared) -> Result<()> {
    write_corpus(&dir.join(files::CORPUS_DIR), &prepared.corpus)?;
    write_split(&dir.join(files::SPLIT), &prepared.split)?;
    std::fs::create_dir_all(dir.join("checkpoints"))?;
    prepared.full.save(&dir.join(files::FULL))?;
    if let Some(g) = &prepared.gold {
        g.save(&dir.join(files::GOLD))?;
    }
    let nll = serde_json::json!({ "finetune_nll": prepared.finetune_nll, "gold_nll": prepared.gold_nll });
    std::fs::write(dir.join("finetune.json"), serde_json::to_vec_pretty(&nll)?)?;
    Ok(())
}

/// Writes prepared state plus a stamp of the settings that produced it.
pub fn save_prepared(dir: &Path, config: &ExperimentConfig, prepared: &Prepared) -> Result<()> {
    write_prepared(dir, prepared)?;
    std::fs::write(dir.join(files::PREPARED), config.preparation_text())?;
    Ok(())
}

/// Reloads prepared state written by [`save_prepared`] when its stamp
/// matches `config`; `Ok(None)` when absent or stale.
pub fn load_prepared(dir: &Path, config: &ExperimentConfig) -> Result<Option<Prepared>> {
    match std::fs::read_to_string(dir.join(files::PREPARED)) {
        Ok(stamp) if stamp == config.preparation_text() => {}
        _ => return Ok(None),
    }
    #[derive(serde::Deserialize)]
    struct Nll {
        finetune_nll: Vec<f64>,
        gold_nll: Vec<f64>,
    }
    let nll: Nll = serde_json::from_slice(&std::fs::read(dir.join("finetune.json"))?)?;
    Ok(Some(Prepared {
        corpus: crate::corpus::read_corpus(&dir.join(files::CORPUS_DIR))?,
        split: crate::corpus::read_split(&dir.join(files::SPLIT))?,
        full: ToyModel::load(&dir.join(files::FULL))?,
        gold: if config.gold { Some(ToyModel::load(&dir.join(files::GOLD))?) } else { None },
        finetune_nll: nll.finetune_nll,
        gold_nll: nll.gold_nll,
    }))
}

fn write_outputs(dir: &Path, config: &ExperimentConfig, prepared: &Prepared, run: &Unlearned) -> Result<()> {
    std::fs::write(dir.join(files::CONFIG), config.to_text())?;
    save_prepared(dir, config, prepared)?;
    super::report::write_record_json(&dir.join(files::REPORT), &run.record)?;
    super::report::write_rows_csv(&dir.join(files::EPOCHS_CSV), &super::report::rows_of(&run.record))?;
    super::report::write_telemetry_csv(&dir.join(files::TELEMETRY), &run.record.telemetry)?;
    if let Some(t) = &run.diagnostics.trace {
        t.write_csv(&dir.join(files::TRACE))?;
    }
    if let Some(k) = &run.diagnostics.ktl {
        super::plot::write_ktl_csv(&dir.join(files::KTL), k)?;
    }
    Ok(())
}

/// Runs the unlearning stage on prepared state and writes every artifact
/// under `dir`, whose name becomes the run id. A failure leaves a `FAILED` marker naming the stage.
pub fn run_prepared(config: &ExperimentConfig, prepared: &Prepared, dir: &Path) -> Result<RunRecord> {
    let result = std::fs::create_dir_all(dir)
        .map_err(|e| Error::at_stage("write")(e.into()))
        .and_then(|_| {
            let _ = std::fs::remove_file(dir.join(files::FAILED));
            run_unlearning(config, prepared, Some(dir))
        })
        .map(|mut run| {
            if let Some(name) = dir.file_name() {
                run.record.run_id = name.to_string_lossy().into_owned();
            }
            run
        })
        .and_then(|run| {
            write_outputs(dir, config, prepared, &run).map_err(Error::at_stage("write"))?;
            Ok(run.record)
        });
    if let Err(e) = &result {
        let _ = std::fs::write(dir.join(files::FAILED), format!("{e}\n"));
    }
    result
}

/// Full pipeline with outputs under `config.out`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    let dir: PathBuf = config.out.clone();
    let prepared = prepare(config).inspect_err(|e| {
        if std::fs::create_dir_all(&dir).is_ok() {
            let _ = std::fs::write(dir.join(files::FAILED), format!("{e}\n"));
        }
    })?;
    run_prepared(config, &prepared, &dir)
}

/// Picks the epoch with the largest `es_retain − es_unlearn` gap; ties go
/// to the earliest epoch. Epochs without both ES values are skipped.
pub fn select_by_es_tradeoff(record: &RunRecord) -> Option<&EpochRecord> {
    let mut best: Option<(&EpochRecord, f64)> = None;
    for e in &record.epochs {
        if let (Some(r), Some(f)) = (e.metrics.es_retain, e.metrics.es_unlearn) {
            let gap = r - f;
            if best.is_none_or(|(_, g)| gap > g) {
                best = Some((e, gap));
            }
        }
    }
    best.map(|(e, _)| e)
}
