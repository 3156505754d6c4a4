//! Command-line front end: scenario files, CSV output and figure presets.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod output;
pub mod scenario;

pub use commands::{execute, figure_preset, Cli, CliError, FigureName};
pub use output::{emit_csv, format_f64, write_csv};
pub use scenario::{parse_and_validate, ResolvedScenario, ScenarioError, ScenarioFile};
