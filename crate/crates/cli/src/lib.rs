//! Mission orchestration around `tideline-core`: scenario files, the
//! simulated acoustic channel, the centralized surface-side pipeline,
//! ablation runs, metrics, and static map/trajectory rendering.

pub mod ablate;
pub mod channel;
pub mod metrics;
pub mod mission;
pub mod render;
pub mod report;
pub mod scenario;

/// Environment variable overriding the output directory of all subcommands.
pub const OUTPUT_DIR_ENV: &str = "TIDELINE_OUTPUT_DIR";
