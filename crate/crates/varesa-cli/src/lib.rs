//! Library surface of the `varesa` command-line front end.
//!
//! The binary is a thin argument parser over [`commands`]; everything it can
//! do is callable directly, which is how the integration suite drives it.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_analytic, cmd_clt_study, cmd_complexity, cmd_estimate, write_complexity, write_study,
    AnalyticReport, CliError, CltSummary, ComplexityReport, CostRow, EsVarianceComparison,
    EstimateReport,
};
pub use config::{
    Accuracy, ConfigError, ModelSpec, Reference, Resolved, RunConfig, Scheme, DEFAULT_EPSILONS,
    PRESET_SWAP,
};
