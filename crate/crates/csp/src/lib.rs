//! Experiment driver for the `csp-core` library: epsilon sweeps with
//! log-log order fits, flat-file config, CSV/JSON output and the `csp`
//! command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod io;

pub use cli::run_cli;
pub use config::RunConfig;
pub use error::{AppError, AppResult};
pub use experiment::{run_sweep, Experiment, ExperimentKind, SweepRow, SweepTable, Verdict};
pub use fit::{fit_order, OrderFit};
