//! The filesystem-facing layer behind the `attenmfg` binary: named problem
//! presets, one function per subcommand, and the run manifests that make
//! every invocation auditable and reproducible.

mod commands;
mod manifest;
mod presets;

pub use commands::{
    cmd_evaluate, cmd_gap_matrix, cmd_generate, cmd_solve_oracle, cmd_train, cmd_verify,
    summarize_reports, EvalSummary, GapStats, HarnessError,
};
pub use manifest::{normalize_csv_columns, ArtifactRecord, RunManifest, MANIFEST_SCHEMA};
pub use presets::{preset, preset_names, Preset, PRESETS};
