//! Run configuration: every hyperparameter of a boosting campaign, loadable
//! from JSON with unknown keys rejected and defaults for everything except
//! the problem instance.

use crate::error::{Error, Result};
use crate::flow::TrainHyper;
use crate::geom::ProblemInstance;
use crate::reward::FinetuneSettings;
use crate::sampler::SamplerSettings;
use crate::search::PushParams;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub boost_rounds: usize,
    pub samples_per_round: usize,
    pub top_fraction: f64,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            boost_rounds: 1,
            samples_per_round: 64,
            top_fraction: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/dataset.jsonl`.
    pub dataset_path: Option<PathBuf>,
    /// Defaults to `<output_dir>/model.ckpt`.
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            dataset_path: None,
            checkpoint_path: None,
        }
    }
}

impl IoConfig {
    pub fn dataset_path(&self) -> PathBuf {
        self.dataset_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("dataset.jsonl"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("model.ckpt"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub instance: ProblemInstance,
    #[serde(default)]
    pub push: PushParams,
    #[serde(default)]
    pub train: TrainHyper,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default)]
    pub finetune: FinetuneSettings,
    #[serde(rename = "loop", default)]
    pub boost: LoopConfig,
    #[serde(default)]
    pub io: IoConfig,
}

impl RunConfig {
    pub fn new(instance: ProblemInstance) -> Self {
        Self {
            instance,
            push: PushParams::default(),
            train: TrainHyper::default(),
            sampler: SamplerSettings::default(),
            finetune: FinetuneSettings::default(),
            boost: LoopConfig::default(),
            io: IoConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.instance.validate()?;
        self.push.srp.validate()?;
        self.train.validate()?;
        self.sampler.validate()?;
        self.finetune.validate()?;
        if self.boost.boost_rounds == 0 {
            return Err(Error::Validation("boost_rounds must be >= 1".into()));
        }
        if !(self.boost.top_fraction > 0.0 && self.boost.top_fraction <= 1.0) {
            return Err(Error::Validation("top_fraction must be in (0, 1]".into()));
        }
        if self.boost.samples_per_round == 0 {
            return Err(Error::Validation("samples_per_round must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::ProblemKind;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_json(
            r#"{ "instance": { "kind": "heilbronn", "dim": 2, "count": 7 } }"#,
        )
        .unwrap();
        assert_eq!(cfg.instance.kind, ProblemKind::Heilbronn);
        assert_eq!(cfg.instance.box_side, 1.0);
        assert_eq!(cfg.boost.boost_rounds, 1);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_json(
            r#"{ "instance": { "kind": "heilbronn", "dim": 2, "count": 7 }, "bogus": 1 }"#,
        );
        assert!(err.is_err());
        let nested = RunConfig::from_json(
            r#"{ "instance": { "kind": "heilbronn", "dim": 2, "count": 7 },
                 "loop": { "boost_rando": 3 } }"#,
        );
        assert!(nested.is_err());
    }

    #[test]
    fn invalid_dimensions_rejected() {
        let err = RunConfig::from_json(
            r#"{ "instance": { "kind": "star_discrepancy", "dim": 3, "count": 7 } }"#,
        );
        assert!(err.is_err());
    }
}
