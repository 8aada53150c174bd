//! Image-free single-pixel segmentation.
//!
//! A scene is sampled by projecting a small bank of modulation patterns and
//! recording one coupled intensity per pattern. An encoder–decoder network is
//! trained end to end so that its encoder filters double as the illumination
//! patterns and its decoder maps the 1-D measurement vector straight to a
//! per-pixel segmentation map, never forming a 2-D image.
//!
//! Module map:
//!
//! - [`sensing`]: pattern banks (random, Hadamard, learned), the forward
//!   measurement model, detector noise and pattern export.
//! - [`nn`]: the small set of differentiable layers the models are built from.
//! - [`network`]: the end-to-end encoder, expansion, feature-extraction block
//!   and nested-skip segmentation head.
//! - [`training`]: two-stage training, schedules, initialization, checkpoints.
//! - [`datasets`]: WBC / natural-image / UAS ingestion, augmentation, splits.
//! - [`baselines`]: reconstruct-then-segment competitors (TV and learned).
//! - [`evaluation`]: PA / DICE, model evaluation, sweeps, tables and panels.
//! - [`measurement_io`]: detector recordings and their calibration.
//! - [`experiment`]: the serializable experiment configuration and presets.

pub mod baselines;
pub mod container;
pub mod datasets;
pub mod digest;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod measurement_io;
pub mod network;
pub mod nn;
pub mod raster;
pub mod seeds;
pub mod sensing;
pub mod training;

pub use error::{Error, Result};

/// Bumped whenever a change alters numerical results, so cached sweep cells
/// keyed by config digest are not reused across incompatible builds.
pub const MODEL_REVISION: &str = "1";
