//! Minimal dense numerical kernel: row-major matrices, a residual MLP with
//! ReLU hidden activations, manual backpropagation for MSE loss, and Adam.
//!
//! Everything is generic over the scalar type; training runs in `f64` and
//! checkpoints are stored in `f32` (see the codec module).

mod adam;
mod matrix;
mod mlp;

pub use adam::{adam_step, AdamState};
pub use matrix::DenseMatrix;
pub use mlp::{backward_mse, forward, Gradients, Layer, ResidualMlp, Skip};

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Scalar types the kernel operates on.
pub trait Scalar:
    Float + NumAssignOps + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Training-precision aliases.
pub type DenseMatrix64 = DenseMatrix<f64>;
pub type ResidualMlp64 = ResidualMlp<f64>;
pub type AdamState64 = AdamState<f64>;
