//! Files, checkpoints, metrics logs, experiment runs and the command line for
//! [`mkdt_core`].

pub mod checkpoint;
pub mod config;
mod error;
pub mod exec;
pub mod format;
pub mod metrics;
pub mod run;

pub use error::{Error, Result};
pub use exec::Rayon;
