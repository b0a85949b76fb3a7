//! Blind image quality assessment built around two feature encoders — one
//! content-aware, one distortion-aware — whose multi-scale pyramids are fused
//! stage by stage through a progressive perception interaction module and
//! pooled into a single quality score by a patch-weighted prediction head.
//!
//! The crate is organized as:
//!
//! - [`nn`] — tensor primitives with explicit forward/backward passes
//!   (convolution, batch norm, deformable sampling, pooling, ...),
//!   a parameter store, and a finite-difference gradient checker.
//! - [`encoders`] — backbone wrappers that tap per-stage feature pyramids.
//! - [`ppim`] — per-stage alignment and coarse/fine interaction blocks.
//! - [`head`] — hierarchical fusion and patch-weighted score prediction.
//! - [`model`] — full model assembly plus checkpoint I/O.
//! - [`data`] — dataset manifests, label normalization, split protocols and
//!   image preprocessing.
//! - [`metrics`] — SRCC/PLCC/KRCC/RMSE and report aggregation.
//! - [`trainer`] — freeze policies, AdamW with cosine annealing, the training
//!   loop and the evaluation loop.
//! - [`harness`] — experiment orchestration (single runs, cross-dataset,
//!   data-efficiency sweeps, leave-one-distortion-out, ablations) and
//!   attention-map export, backing the `codi-iqa` CLI.

pub mod data;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod head;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ppim;
pub mod trainer;

pub use error::{Error, Result};
