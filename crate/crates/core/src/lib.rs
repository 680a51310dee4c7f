//! Multi-view knowledge distillation over a shifted-window video transformer.
//!
//! A multi-view teacher and a single-view student share one backbone
//! architecture and are trained together. The teacher sees every training
//! view of an action instance and fuses its per-view logits late; the student
//! sees one view at a time and is pulled towards the teacher's per-view (or
//! fused) distributions with a KL term next to its own cross-entropy.
//!
//! This crate is `no_std` + `alloc`: everything here is pure computation on
//! in-memory data. File formats, checkpoints, metrics logs and the command
//! line live in the `mkdt` companion crate.

#![no_std]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]

extern crate alloc;

pub mod backbone;
pub mod data;
pub mod distill;
mod error;
pub mod eval;
pub mod exec;
pub mod gradcheck;
pub mod matrix;
pub mod optim;
pub mod real;
pub mod report;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use exec::{Executor, Serial};
pub use real::Real;
