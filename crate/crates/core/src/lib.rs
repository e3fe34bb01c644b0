//! Core library of `fpsim`, a desk-scale federated-learning poisoning
//! simulator for radio signal classification.
//!
//! The pipeline: [`signal`] synthesizes modulated IQ frames through an AWGN
//! (optionally flat-fading) channel, [`data`] assembles them into labeled
//! datasets and partitions them across devices, [`model`] trains a lightweight
//! two-conv CNN built on the [`nn`] layer kit, [`attack`] crafts L2-budgeted
//! gradient perturbations (plus power-matched AWGN and label-flip baselines)
//! on compromised shards, and [`fed`] runs size-weighted FedAvg rounds and
//! records per-round metrics.
//!
//! Everything is a deterministic function of explicit seeds. With the
//! `parallel` feature (default) device training, shard poisoning, and batch
//! evaluation fan out over rayon; results are bit-identical to the sequential
//! build because all reductions happen in a fixed order.

pub mod attack;
pub mod data;
pub mod error;
pub mod exec;
pub mod fed;
pub mod model;
pub mod nn;
pub mod seed;
pub mod signal;

pub use error::{Error, Result};

/// Scalar type used by the simulation pipeline.
///
/// Double precision by default; the `f32` feature switches speed builds to
/// single precision. Dataset and checkpoint files always store f32 samples
/// regardless of this alias.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;
