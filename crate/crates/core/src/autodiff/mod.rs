//! Automatic differentiation: forward-mode tangents along one input
//! direction combined with reverse-mode adjoints over a recorded tape.

mod dual;
mod gradcheck;
mod tape;
mod tensor;

pub use dual::DualValue;
pub use gradcheck::{gradcheck, relative_error, GradCheck};
pub use tape::{GradientVector, Tape, Var};
pub use tensor::{broadcast_shape, Tensor};

/// Epsilon used by every batch normalization layer.
pub const BATCH_NORM_EPS: f64 = 1e-5;

#[cfg(test)]
mod tests;
