//! Pipeline surface: run configuration, dataset and checkpoint persistence,
//! histogram emission and the outer boosting loop.

mod boost;
mod checkpoint;
mod config;
mod dataset;
mod histogram;

pub use boost::{boost_loop, percentile_condition, BoostSummary, RoundStats, SummaryStats};
pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, Manifest,
    TensorEntry, MAGIC,
};
pub use config::{IoConfig, LoopConfig, RunConfig};
pub use dataset::{
    dataset_to_bytes, load_dataset, load_dataset_str, save_dataset, Dataset, DatasetHeader,
    SCORE_TOLERANCE,
};
pub use histogram::{emit_histogram, histogram, Histogram};
