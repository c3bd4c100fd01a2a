//! Minimal reverse-mode automatic differentiation over dense `f64` matrices,
//! plus the Adam optimizer.

mod adam;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use params::{BoundParams, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
