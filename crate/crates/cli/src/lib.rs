//! Experiment driver behind the `tslod` binary: configuration parsing and
//! the study runners. Kept as a library so integration tests can exercise
//! the runners directly.

pub mod config;
pub mod studies;
