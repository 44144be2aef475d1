//! Semi-supervised multimodal learning with soft positive-unlabeled
//! contrastive alignment, latent reconstruction, and selective-gradient
//! training.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] / [`graph`]: a minimal dense f64 reverse-mode autodiff engine.
//!   Graphs are built per training step; `requires_grad` flags are read at
//!   backward time, which is what makes selective-gradient training work with
//!   a single forward pass.
//! * [`model`]: per-modality projectors, a fusion projector, a weight-shared
//!   redundancy head, per-modality unique heads, latent reconstructors, and a
//!   shared task head.
//! * [`losses`]: the soft positive-unlabeled contrastive objective, latent
//!   reconstruction, and the supervised task loss.
//! * [`training`]: parameter-group toggling, the three-pass backward schedule,
//!   Adam, and stratified semi-supervised splits.
//! * [`synthdata`]: a seeded synthetic multimodal generator with controllable
//!   shared/unique signal strength and modality masking.
//! * [`eval`]: task metrics, a histogram mutual-information estimator,
//!   alignment/uniformity diagnostics, and the batch positive-majority bound.
//! * [`config`] / [`pipeline`]: run configuration, report emission, and the
//!   train/eval/ablate entry points used by the CLI.

pub mod config;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod mat;
pub mod model;
pub mod pipeline;
pub mod synthdata;
pub mod tensor;
pub mod training;

pub use error::{Result, RobultError};
pub use graph::Graph;
pub use tensor::Tensor;
