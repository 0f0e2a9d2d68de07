//! Command-line pipeline: `ingest` -> `curve` -> `calibrate` -> `simulate` -> `price`.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod contracts;
pub mod error;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, CliResult};
