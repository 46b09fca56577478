//! Command-line driver: dataset generation, training, sampling, fine-tuning,
//! the final push, the full boosting loop, exact re-scoring and histograms.
//! Logs are JSON lines on stderr; results go to files. Exit codes: 0 on
//! success, 2 on validation errors, 1 otherwise.

use clap::{Parser, Subcommand};
use flowboost_core::error::Error as CoreError;
use flowboost_core::flow::{train_from, ModelParams};
use flowboost_core::pipeline::{
    boost_loop, emit_histogram, load_checkpoint, load_dataset, percentile_condition,
    save_checkpoint, save_dataset, Dataset, DatasetHeader, RunConfig,
};
use flowboost_core::reward::finetune;
use flowboost_core::sampler::gas_sample;
use flowboost_core::search::{exact_score, final_push, generate_training_set, ScoredSample};
use flowboost_core::{logging, par};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "flowboost", version, about = "Closed-loop generative search for extremal geometric configurations")]
struct Cli {
    /// Path to the JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the campaign seed (loop and training seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for parallel stages (0 = automatic).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a training dataset with seeded local-search runs.
    GenData {
        /// Number of runs; defaults to loop.samples_per_round.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train the flow model on the dataset and write a checkpoint.
    Train {
        /// Dataset path; defaults to io.dataset_path.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Sample configurations from a trained model (geometry-aware sampling).
    Sample {
        /// Number of samples; defaults to loop.samples_per_round.
        #[arg(long)]
        count: Option<usize>,
        /// Output file; defaults to <out>/samples.jsonl.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Reward-guided fine-tuning of the checkpointed model.
    Finetune,
    /// Apply the local-search final push to every sample in a file.
    Push {
        #[arg(long)]
        input: PathBuf,
        /// Output file; defaults to <out>/pushed.jsonl.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the full closed-loop boosting pipeline.
    Loop,
    /// Re-score a dataset/configuration file with the exact oracles.
    Eval {
        #[arg(long)]
        input: PathBuf,
    },
    /// Histogram of the scores in a dataset file (CSV + SVG).
    Hist {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 30)]
        bins: usize,
    },
}

fn is_validation_error(err: &CoreError) -> bool {
    matches!(
        err,
        CoreError::Validation(_)
            | CoreError::MalformedRecord { .. }
            | CoreError::StaleScore { .. }
            | CoreError::Json(_)
            | CoreError::CheckpointFormat(_)
            | CoreError::ShapeMismatch(_)
            | CoreError::OutOfDomain { .. }
            | CoreError::RadiiAbsent
    )
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!(CoreError::Validation("--config is required".into())))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.boost.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.io.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(workers) = cli.workers {
        par::set_workers(workers);
    }
    match &cli.command {
        Command::GenData { samples } => {
            let cfg = load_config(cli)?;
            let n = samples.unwrap_or(cfg.boost.samples_per_round);
            let items = generate_training_set(
                &cfg.instance,
                n,
                cfg.boost.top_fraction,
                &cfg.push,
                cfg.boost.seed,
            )?;
            let path = cfg.io.dataset_path();
            let dataset = Dataset {
                header: Some(DatasetHeader::new(&cfg.instance, cfg.boost.seed)),
                items,
            };
            save_dataset(&dataset, &path)?;
            logging::emit(
                "dataset_written",
                serde_json::json!({
                    "path": path.display().to_string(),
                    "retained": dataset.items.len(),
                    "best": dataset.items.first().map(|s| s.score),
                }),
            );
        }
        Command::Train { dataset } => {
            let cfg = load_config(cli)?;
            let path = dataset.clone().unwrap_or_else(|| cfg.io.dataset_path());
            let data = load_dataset(&path)?;
            if data.items.is_empty() {
                anyhow::bail!(CoreError::Validation("dataset is empty".into()));
            }
            let outcome = train_from(&data.items, &cfg.instance, &cfg.train, None)?;
            let ckpt = cfg.io.checkpoint_path();
            let mut meta = serde_json::Map::new();
            meta.insert("epochs".into(), serde_json::json!(cfg.train.epochs));
            meta.insert(
                "final_loss".into(),
                serde_json::json!(outcome.epoch_losses.last()),
            );
            save_checkpoint(&outcome.params, meta, cfg.train.seed, &ckpt)?;
            logging::emit(
                "checkpoint_written",
                serde_json::json!({ "path": ckpt.display().to_string() }),
            );
        }
        Command::Sample { count, output } => {
            let cfg = load_config(cli)?;
            let (params, _) = load_checkpoint(&cfg.io.checkpoint_path())?;
            let data = load_dataset(&cfg.io.dataset_path())?;
            if data.items.is_empty() {
                anyhow::bail!(CoreError::Validation(
                    "dataset is empty; conditioning targets unavailable".into()
                ));
            }
            let condition = percentile_condition(&data.items);
            let n = count.unwrap_or(cfg.boost.samples_per_round);
            let samples = gas_sample(
                &params,
                &cfg.instance,
                n,
                &condition,
                &cfg.sampler,
                cfg.boost.seed,
            )?;
            let items: Vec<ScoredSample> = samples
                .into_iter()
                .map(|mut config| -> anyhow::Result<ScoredSample> {
                    // Raw circle samples are centers-only.
                    if cfg.instance.has_radii() {
                        config.radii = None;
                    }
                    let score = exact_score(&cfg.instance, &config)?;
                    Ok(ScoredSample {
                        score,
                        condition: condition.clone(),
                        config,
                    })
                })
                .collect::<anyhow::Result<_>>()?;
            let path = output
                .clone()
                .unwrap_or_else(|| cfg.io.output_dir.join("samples.jsonl"));
            // Raw samples carry the sampling condition, not their own
            // statistics, so skip the stale-score validation on save via the
            // same exact scorer used on load.
            let dataset = Dataset {
                header: Some(DatasetHeader::new(&cfg.instance, cfg.boost.seed)),
                items,
            };
            save_dataset(&dataset, &path)?;
            logging::emit(
                "samples_written",
                serde_json::json!({ "path": path.display().to_string(), "count": dataset.items.len() }),
            );
        }
        Command::Finetune => {
            let cfg = load_config(cli)?;
            let ckpt_path = cfg.io.checkpoint_path();
            let (student, manifest) = load_checkpoint(&ckpt_path)?;
            let teacher: ModelParams = student.clone();
            let data = load_dataset(&cfg.io.dataset_path())?;
            if data.items.is_empty() {
                anyhow::bail!(CoreError::Validation(
                    "dataset is empty; conditioning targets unavailable".into()
                ));
            }
            let condition = percentile_condition(&data.items);
            let outcome = finetune(
                &student,
                &teacher,
                &cfg.instance,
                &condition,
                &cfg.finetune,
                &cfg.sampler,
                cfg.boost.seed,
            )?;
            let mut meta = manifest.meta.clone();
            meta.insert("finetuned".into(), serde_json::json!(true));
            save_checkpoint(&outcome.student, meta, manifest.seed, &ckpt_path)?;
            logging::emit(
                "checkpoint_written",
                serde_json::json!({
                    "path": ckpt_path.display().to_string(),
                    "epoch_mean_rewards": outcome.epoch_mean_reward,
                }),
            );
        }
        Command::Push { input, output } => {
            let cfg = load_config(cli)?;
            let data = load_dataset(input)?;
            let seed = cfg.boost.seed;
            let results = par::run_indexed(data.items.len(), |i| {
                final_push(
                    &data.items[i].config,
                    &cfg.instance,
                    &cfg.push,
                    par::sample_seed(seed, i),
                )
            });
            let mut items = Vec::with_capacity(results.len());
            for r in results {
                items.push(r?);
            }
            flowboost_core::search::sort_samples(&mut items, cfg.instance.direction());
            let path = output
                .clone()
                .unwrap_or_else(|| cfg.io.output_dir.join("pushed.jsonl"));
            let dataset = Dataset {
                header: Some(DatasetHeader::new(&cfg.instance, seed)),
                items,
            };
            save_dataset(&dataset, &path)?;
            logging::emit(
                "pushed_written",
                serde_json::json!({
                    "path": path.display().to_string(),
                    "best": dataset.items.first().map(|s| s.score),
                }),
            );
        }
        Command::Loop => {
            let cfg = load_config(cli)?;
            let summary = boost_loop(&cfg)?;
            if let Some(failure) = &summary.failure {
                anyhow::bail!("boost loop failed: {failure}");
            }
            logging::emit(
                "loop_done",
                serde_json::json!({
                    "best_score": summary.best_score,
                    "rounds": summary.rounds.len(),
                }),
            );
        }
        Command::Eval { input } => {
            // Loading re-validates every stored score against the oracles.
            let data = load_dataset(input)?;
            let header = data.header.clone();
            let scores: Vec<f64> = match &header {
                Some(h) => {
                    let instance = h.instance()?;
                    data.items
                        .iter()
                        .map(|s| exact_score(&instance, &s.config))
                        .collect::<Result<_, _>>()?
                }
                None => Vec::new(),
            };
            let out_dir = cli
                .out
                .clone()
                .or_else(|| {
                    cli.config
                        .as_ref()
                        .and_then(|p| RunConfig::load(p).ok())
                        .map(|c| c.io.output_dir)
                })
                .unwrap_or_else(|| PathBuf::from("out"));
            std::fs::create_dir_all(&out_dir)?;
            let report = serde_json::json!({
                "input": input.display().to_string(),
                "count": scores.len(),
                "best": scores.iter().copied().reduce(f64::max),
                "worst": scores.iter().copied().reduce(f64::min),
                "mean": if scores.is_empty() { None } else {
                    Some(scores.iter().sum::<f64>() / scores.len() as f64)
                },
                "scores": scores,
            });
            let path = out_dir.join("eval.json");
            std::fs::write(&path, serde_json::to_vec_pretty(&report)?)?;
            logging::emit(
                "eval_written",
                serde_json::json!({ "path": path.display().to_string() }),
            );
        }
        Command::Hist { input, bins } => {
            let data = load_dataset(input)?;
            let scores: Vec<f64> = data.items.iter().map(|s| s.score).collect();
            let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            std::fs::create_dir_all(&out_dir)?;
            let stem = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scores".into());
            let base = out_dir.join(format!("hist_{stem}"));
            emit_histogram(&scores, *bins, &base)?;
            logging::emit(
                "histogram_written",
                serde_json::json!({ "base": base.display().to_string() }),
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let validation = err
                .downcast_ref::<CoreError>()
                .map(is_validation_error)
                .unwrap_or(false);
            logging::emit(
                "error",
                serde_json::json!({ "message": err.to_string(), "validation": validation }),
            );
            if validation {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
