//! End-to-end harness: run configuration, stage functions, versioned
//! persistence and the grid reports built on top of them.

mod artifact;
mod config;
mod report;
mod stages;
mod workspace;

pub use artifact::{
    config_hash, read_artifact, read_text, write_artifact, write_text, Artifact, ArtifactMeta, ARTIFACT_VERSION,
};
pub use config::{AdapterTrainSpec, BaseTrainSpec, Method, RunConfig};
pub use report::{
    layer_peak_ratio, layer_stats, layer_stats_to_csv, layer_variance, mean_scores, sweep_to_csv, GridReport,
    LayerStat, SweepRow, TargetSummary, LAYER_CSV_HEADER, SWEEP_CSV_HEADER,
};
pub use stages::{
    adapter_examples, base_examples, build_library, check_disjoint, learn_weights, rewrite_texts, score_rewrites,
    source_texts, target_prototype, train_adapter_stage, train_base_stage, AdapterReport, Rewrite, REWRITE_DECODING,
};
pub use workspace::{pick, LearnedWeights, SingleAdapterReport, Variant, Workspace};
