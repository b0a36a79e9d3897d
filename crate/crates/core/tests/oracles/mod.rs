//! Check routines shared by the per-module test targets and the acceptance
//! suite. Each routine panics on failure.
#![allow(dead_code)]

pub mod gradients;
pub mod metrics;
pub mod network;
pub mod transforms;
