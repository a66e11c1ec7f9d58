//! Command-line front end for `mi_lab`: single runs, λ sweeps with summary
//! tables, and SVG plots of run logs.

pub mod config;
pub mod error;
pub mod plot;
pub mod report;
pub mod run;
pub mod sweep;

pub use error::{CliError, Result};
