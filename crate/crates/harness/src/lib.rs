//! Training, view-aggregated inference, evaluation and the augmentation
//! ablation for the `latentseg` networks, driven by a TOML run config.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablate;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod infer;
pub mod optim;
pub mod schedule;
pub mod train;

pub use config::{Arm, RunConfig};
pub use error::{HarnessError, Result};
