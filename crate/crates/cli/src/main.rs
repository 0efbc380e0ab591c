use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use unlearn_core::corpus::{generate_corpus_with, split_corpus, write_corpus, write_split};
use unlearn_core::harness::config::stream;
use unlearn_core::harness::experiment::{files, load_prepared, save_prepared};
use unlearn_core::harness::report::{read_record_json, write_rows_json};
use unlearn_core::harness::{
    emit_plot_data, prepare, run_prepared, select_by_es_tradeoff, sweep, Evaluator, ExperimentConfig,
    Grid, PlotKind, Prepared, ReportFormat,
};
use unlearn_core::model::ToyModel;
use unlearn_core::{Error, Result};

#[derive(Parser)]
#[command(name = "unlearn-lab", version, about = "Token-reweighted unlearning experiments on a toy language model")]
struct Cli {
    /// Experiment config (flat `key = value` file); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Top-level seed (overrides the config's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the corpus and split.
    GenCorpus,
    /// Generate, split, and finetune the full and gold models.
    Finetune,
    /// Run unlearning with per-epoch checkpoints and reports (finetunes first
    /// unless matching finetuned state is already in the output directory).
    Unlearn,
    /// Evaluate a checkpoint and print its metric report as JSON.
    Evaluate {
        /// Checkpoint file; defaults to the final epoch of the run in `--out`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run a cartesian sweep; one cell directory per grid point.
    Sweep {
        /// `key=v1,v2,...`; repeat for more axes.
        #[arg(long = "grid")]
        grid: Vec<String>,
        /// File of `key = v1, v2` lines.
        #[arg(long)]
        grid_file: Option<PathBuf>,
        /// Extra table format written next to `sweep.csv`.
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Emit plot data from a run or sweep directory into `<out>/plots`.
    PlotData {
        /// weight_vs_loss, ktl_histogram, beta_curves or telemetry; all when omitted.
        #[arg(long = "kind")]
        kinds: Vec<String>,
        /// Source directory; defaults to `--out`.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Also write a minimal SVG per kind.
        #[arg(long)]
        svg: bool,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn prepared_for(config: &ExperimentConfig) -> Result<Prepared> {
    match load_prepared(&config.out, config)? {
        Some(p) => Ok(p),
        None => prepare(config),
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    let out = config.out.clone();
    match cli.command {
        Command::GenCorpus => {
            let c = &config.corpus;
            let corpus = generate_corpus_with(
                config.seed_for(stream::CORPUS),
                c.profiles,
                c.qa_per_profile,
                c.vocab_size,
                c.perturbations,
            )?;
            let split = split_corpus(&corpus, config.split.forget, config.split.holdout, config.seed_for(stream::SPLIT))?;
            write_corpus(&out.join(files::CORPUS_DIR), &corpus)?;
            write_split(&out.join(files::SPLIT), &split)?;
            println!(
                "{} pairs: forget {}, retain {}, holdout {}, aux {}+{} -> {}",
                corpus.pairs.len(),
                split.forget.len(),
                split.retain.len(),
                split.holdout.len(),
                split.aux_real.len(),
                split.aux_world.len(),
                out.display()
            );
        }
        Command::Finetune => {
            let prepared = prepare(&config)?;
            save_prepared(&out, &config, &prepared)?;
            std::fs::write(out.join(files::CONFIG), config.to_text())?;
            let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
            println!(
                "finetune nll {:.4} -> {:.4}; gold nll {:.4} -> {}",
                prepared.finetune_nll[0],
                last(&prepared.finetune_nll),
                prepared.gold_nll.first().copied().unwrap_or(f64::NAN),
                last(&prepared.gold_nll)
            );
        }
        Command::Unlearn => {
            let prepared = prepared_for(&config)?;
            let record = run_prepared(&config, &prepared, &out)?;
            for e in &record.epochs {
                let m = &e.metrics;
                println!(
                    "epoch {:>3}  es_retain {}  es_unlearn {}",
                    e.epoch,
                    fmt_opt(m.es_retain),
                    fmt_opt(m.es_unlearn)
                );
            }
            if let Some(best) = select_by_es_tradeoff(&record) {
                println!("best ES trade-off at epoch {}", best.epoch);
            }
            println!("report: {}", out.join(files::REPORT).display());
        }
        Command::Evaluate { checkpoint } => {
            let path = match checkpoint {
                Some(p) => p,
                None => default_checkpoint(&out)?,
            };
            let model = ToyModel::load(&path)?;
            let prepared = prepared_for(&config)?;
            let report = Evaluator::new(&config, &prepared)?.evaluate(&model)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
        }
        Command::Sweep {
            grid,
            grid_file,
            format,
        } => {
            let format: ReportFormat = format.parse()?;
            let file_text = grid_file.map(std::fs::read_to_string).transpose()?;
            let lines = grid.iter().map(String::as_str).chain(file_text.iter().flat_map(|t| t.lines()));
            let table = sweep(&config, &Grid::parse(lines)?)?;
            if format == ReportFormat::Json {
                write_rows_json(&out.join("sweep.json"), &table.rows)?;
            }
            for f in &table.failures {
                eprintln!("{} failed: {}", f.run_id, f.error);
            }
            println!(
                "{} runs, {} failed -> {}",
                table.records.len(),
                table.failures.len(),
                out.join("sweep.csv").display()
            );
            if table.records.is_empty() && !table.failures.is_empty() {
                return Err(Error::Training("every sweep cell failed".into()));
            }
        }
        Command::PlotData { kinds, from, svg } => {
            let from = from.unwrap_or_else(|| out.clone());
            let explicit = !kinds.is_empty();
            let kinds: Vec<PlotKind> = if explicit {
                kinds.iter().map(|k| k.parse()).collect::<Result<_>>()?
            } else {
                PlotKind::ALL.to_vec()
            };
            let plots = out.join("plots");
            for kind in kinds {
                match emit_plot_data(&from, kind, &plots, svg) {
                    Ok(paths) => paths.iter().for_each(|p| println!("{}", p.display())),
                    Err(e) if !explicit => eprintln!("skipped {}: {e}", kind.name()),
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

fn default_checkpoint(out: &Path) -> Result<PathBuf> {
    let record = read_record_json(&out.join(files::REPORT))
        .map_err(|e| Error::Input(format!("no --checkpoint given and no run report in {}: {e}", out.display())))?;
    let rel = record
        .epochs
        .iter()
        .rev()
        .find_map(|e| e.checkpoint.clone())
        .ok_or_else(|| Error::Input("run has no epoch checkpoints".into()))?;
    Ok(out.join(rel))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

