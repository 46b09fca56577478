//! The outer boosting loop: generate → train → sample → fine-tune → push →
//! merge/select, repeated for a configured number of rounds with per-round
//! artifacts (histograms, best configuration, dataset, checkpoint, summary).

use super::checkpoint::save_checkpoint;
use super::config::RunConfig;
use super::dataset::{save_dataset, Dataset, DatasetHeader};
use super::histogram::emit_histogram;
use crate::error::Result;
use crate::flow::{train_from, ModelParams};
use crate::geom::Direction;
use crate::reward::finetune;
use crate::sampler::gas_sample;
use crate::search::{
    exact_score, final_push, generate_training_set, sort_samples, ScoredSample,
};
use crate::{logging, par};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl SummaryStats {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                count,
                mean: 0.0,
                min: 0.0,
                max: 0.0,
            };
        }
        Self {
            count,
            mean: values.iter().sum::<f64>() / count as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    pub training: SummaryStats,
    pub generated: SummaryStats,
    pub pushed: SummaryStats,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostSummary {
    pub rounds: Vec<RoundStats>,
    pub best_score: f64,
    pub dataset_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Condition used at sampling time: the stored condition of the sample at
/// the 95th quality percentile of the dataset (best-first order).
pub fn percentile_condition(items: &[ScoredSample]) -> Vec<f64> {
    let idx = ((0.05 * (items.len().saturating_sub(1)) as f64).round() as usize)
        .min(items.len().saturating_sub(1));
    items[idx].condition.clone()
}

fn write_summary(summary: &BoostSummary, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let bytes = serde_json::to_vec_pretty(summary)?;
    std::fs::write(out_dir.join("summary.json"), bytes)?;
    Ok(())
}

fn write_best(best: &ScoredSample, header: DatasetHeader, path: &Path) -> Result<()> {
    let ds = Dataset {
        header: Some(header),
        items: vec![best.clone()],
    };
    std::fs::write(path, super::dataset::dataset_to_bytes(&ds)?)?;
    Ok(())
}

struct RoundOutput {
    stats: RoundStats,
    model: ModelParams,
}

#[allow(clippy::too_many_arguments)]
fn run_round(
    cfg: &RunConfig,
    round: usize,
    items: &mut Vec<ScoredSample>,
    warm: Option<&ModelParams>,
    direction: Direction,
    best_so_far: f64,
    out_dir: &Path,
) -> Result<RoundOutput> {
    let instance = &cfg.instance;
    let seed = cfg.boost.seed;
    let training_scores: Vec<f64> = items.iter().map(|s| s.score).collect();

    // (ii) Retrain on the merged dataset, warm-starting from the previous
    // student when one exists.
    let mut hyper = cfg.train.clone();
    hyper.seed = par::derive_seed(seed, 1000 + round as u64);
    let outcome = train_from(items, instance, &hyper, warm)?;
    let teacher = outcome.teacher;
    let mut student = outcome.params;

    // (iii) Sample from the trained model at an elite conditioning target.
    let condition = percentile_condition(items);
    let generated = gas_sample(
        &student,
        instance,
        cfg.boost.samples_per_round,
        &condition,
        &cfg.sampler,
        par::derive_seed(seed, 2000 + round as u64),
    )?;
    let generated_scores: Vec<f64> = {
        let results = par::run_indexed(generated.len(), |i| exact_score(instance, &generated[i]));
        let mut v = Vec::with_capacity(generated.len());
        for r in results {
            v.push(r?);
        }
        v
    };

    // (iv) Reward-guided fine-tuning (samples its own batches online).
    let ft = finetune(
        &student,
        &teacher,
        instance,
        &condition,
        &cfg.finetune,
        &cfg.sampler,
        par::derive_seed(seed, 3000 + round as u64),
    )?;
    student = ft.student;

    // (v) Final push on every generated configuration plus the best sample
    // of each fine-tuning epoch.
    let mut push_inputs = generated;
    push_inputs.extend(ft.epoch_best.iter().map(|s| s.config.clone()));
    let push_seed = par::derive_seed(seed, 4000 + round as u64);
    let pushed: Vec<ScoredSample> = {
        let results = par::run_indexed(push_inputs.len(), |i| {
            final_push(
                &push_inputs[i],
                instance,
                &cfg.push,
                par::sample_seed(push_seed, i),
            )
        });
        let mut v = Vec::with_capacity(push_inputs.len());
        for r in results {
            v.push(r?);
        }
        v
    };
    let pushed_scores: Vec<f64> = pushed.iter().map(|s| s.score).collect();

    // (vi) Merge and re-select the top fraction.
    items.extend(pushed);
    sort_samples(items, direction);
    let keep = ((cfg.boost.top_fraction * items.len() as f64).ceil() as usize)
        .max(1)
        .min(items.len());
    items.truncate(keep);

    let round_best = items[0].score;
    let best = if direction.better(round_best, best_so_far) {
        round_best
    } else {
        best_so_far
    };

    // Per-round artifacts.
    let round_dir = out_dir.join(format!("round_{round:03}"));
    std::fs::create_dir_all(&round_dir)?;
    emit_histogram(&training_scores, 30, &round_dir.join("hist_training"))?;
    if !generated_scores.is_empty() {
        emit_histogram(&generated_scores, 30, &round_dir.join("hist_generated"))?;
    }
    if !pushed_scores.is_empty() {
        emit_histogram(&pushed_scores, 30, &round_dir.join("hist_pushed"))?;
    }
    write_best(
        &items[0],
        DatasetHeader::new(instance, seed),
        &round_dir.join("best.jsonl"),
    )?;

    let stats = RoundStats {
        round,
        training: SummaryStats::of(&training_scores),
        generated: SummaryStats::of(&generated_scores),
        pushed: SummaryStats::of(&pushed_scores),
        best_so_far: best,
    };
    logging::emit(
        "round_end",
        serde_json::json!({
            "round": round,
            "best_so_far": best,
            "pushed_max": stats.pushed.max,
            "dataset_size": items.len(),
        }),
    );
    Ok(RoundOutput {
        stats,
        model: student,
    })
}

/// Execute the configured number of boosting rounds. A stage error aborts
/// the loop, persists the partial summary and returns it with the failure
/// recorded; the returned summary is identical across worker counts.
pub fn boost_loop(cfg: &RunConfig) -> Result<BoostSummary> {
    cfg.validate()?;
    let instance = &cfg.instance;
    let direction = instance.direction();
    let out_dir = cfg.io.output_dir.clone();
    std::fs::create_dir_all(&out_dir)?;

    logging::emit(
        "boost_start",
        serde_json::json!({
            "rounds": cfg.boost.boost_rounds,
            "samples_per_round": cfg.boost.samples_per_round,
            "seed": cfg.boost.seed,
        }),
    );

    // (i) Initial dataset.
    let mut summary = BoostSummary {
        rounds: Vec::new(),
        best_score: direction.worst(),
        dataset_size: 0,
        failure: None,
    };
    let mut items = match generate_training_set(
        instance,
        cfg.boost.samples_per_round,
        cfg.boost.top_fraction,
        &cfg.push,
        cfg.boost.seed,
    ) {
        Ok(v) => v,
        Err(e) => {
            summary.failure = Some(format!("initial generation: {e}"));
            write_summary(&summary, &out_dir)?;
            return Ok(summary);
        }
    };
    summary.best_score = items[0].score;
    let mut model: Option<ModelParams> = None;

    for round in 0..cfg.boost.boost_rounds {
        logging::emit("round_start", serde_json::json!({ "round": round }));
        match run_round(
            cfg,
            round,
            &mut items,
            model.as_ref(),
            direction,
            summary.best_score,
            &out_dir,
        ) {
            Ok(out) => {
                summary.best_score = out.stats.best_so_far;
                summary.rounds.push(out.stats);
                summary.dataset_size = items.len();
                // Persist state after every round.
                let dataset = Dataset {
                    header: Some(DatasetHeader::new(instance, cfg.boost.seed)),
                    items: items.clone(),
                };
                save_dataset(&dataset, &cfg.io.dataset_path())?;
                let mut meta = serde_json::Map::new();
                meta.insert("round".into(), serde_json::json!(round));
                meta.insert("best_score".into(), serde_json::json!(summary.best_score));
                save_checkpoint(&out.model, meta, cfg.boost.seed, &cfg.io.checkpoint_path())?;
                model = Some(out.model);
                write_summary(&summary, &out_dir)?;
            }
            Err(e) => {
                summary.failure = Some(format!("round {round}: {e}"));
                summary.dataset_size = items.len();
                let dataset = Dataset {
                    header: Some(DatasetHeader::new(instance, cfg.boost.seed)),
                    items: items.clone(),
                };
                save_dataset(&dataset, &cfg.io.dataset_path())?;
                write_summary(&summary, &out_dir)?;
                return Ok(summary);
            }
        }
    }
    write_summary(&summary, &out_dir)?;
    Ok(summary)
}
