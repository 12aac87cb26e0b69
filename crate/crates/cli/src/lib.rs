//! Configuration, artifact I/O and the pipelines behind the `pmqds` binary.

// `!(x > 0.0)` style guards are meant to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod io;
pub mod pipeline;

pub use config::{ConfigError, ExperimentConfig};
