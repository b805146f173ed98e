//! Configuration, run orchestration and the ablation runner.

pub mod ablation;
pub mod config;
pub mod pipeline;

pub use ablation::{
    median, run_ablation, run_ablation_to_dir, write_ablation_csv, AblationPlan, AblationResult, AblationRow, AblationRun,
    AblationSummary, ABLATION_HEADER,
};
pub use config::{EvalConfig, PolicyConfig, RunConfig, StageSeeds};
pub use pipeline::{run_pipeline, Manifest, RunOutcome, MANIFEST_FILE};
