//! Configuration files, CSV/JSON outputs and batch runs around
//! `sparsegram-core`.

pub mod config;
pub mod io;
pub mod pipeline;

pub use config::RunConfig;
pub use pipeline::{check, run, run_oracle, CheckReport, RunReport};
