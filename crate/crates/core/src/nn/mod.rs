//! Minimal differentiable building blocks, generic over `f32` / `f64`.
//!
//! Training runs in `f32`; the same code instantiated at `f64` backs the
//! finite-difference gradient checks.

mod adam;
pub mod layers;
mod params;

pub use adam::Adam;
pub use layers::{Conv2d, ConvTranspose2d, Linear, PRelu};
pub use params::{Grads, Param, ParamGroup, ParamId, ParamRole, ParamStore, PRELU_INIT};
