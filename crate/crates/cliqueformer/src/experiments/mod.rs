//! Evaluation protocol, benchmark harness, demonstration studies, and
//! ablations.

pub mod ablation;
pub mod bench;
pub mod eval;
pub mod fgm_study;
pub mod rotation;

pub use ablation::{ablation_suite, AblationVariant};
pub use bench::{
    default_run_config, run_benchmark, run_seed, BenchResult, MethodSpec, RunConfig, SeedResult,
    TaskSpec,
};
pub use eval::{evaluate_candidates, EvalRow, Metric};
pub use fgm_study::{fgm_vs_oblivious, FgmStudyConfig, FgmStudyReport};
pub use rotation::{rotation_demo, RotationReport};
