//! Command implementations behind the `nowcast` binary.
//!
//! Every command is a plain function over a [`RunConfig`] plus paths, so
//! integration tests and the acceptance suite can drive the pipeline
//! without spawning processes. Exit-code policy: usage errors are 2,
//! missing prerequisites (datasets, checkpoints, input files) are 3, data
//! errors (bad formats, shape mismatches, failed runs) are 4.

pub mod commands;

pub use commands::*;
