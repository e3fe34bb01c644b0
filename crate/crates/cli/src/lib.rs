//! Library surface of the `fpsim` batch front-end: configuration parsing,
//! run execution, and report rendering. The binary in `main.rs` is a thin
//! argument parser over these modules.

pub mod config;
pub mod report;
pub mod runner;
