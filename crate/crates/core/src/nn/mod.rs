//! Minimal differentiable numeric core: tensors, a reverse-mode tape, the
//! layer primitives used by both models, Adam, and a seeded RNG stream.

pub mod adam;
pub mod layers;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use layers::{dropout, Ctx, Embedding, Gru, GruCell, GruOutput, Linear};
pub use params::{Binding, ParamId, ParameterStore};
pub use rng::RngStream;
pub use tape::{Tape, Var};
pub use tensor::{Real, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
}
