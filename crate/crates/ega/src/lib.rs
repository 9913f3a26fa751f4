//! Encoded gradient aggregation for federated learning.
//!
//! Clients quantize their local model updates into a bounded integer domain,
//! encode each block with a pretrained encoder network, and upload only the
//! encodings. The server averages encodings, decodes the aggregate with the
//! matching decoder, and applies the global update — raw per-client gradients
//! never leave the client. The crate covers the full pipeline: the numeric
//! kernel, stochastic quantization, codec training, a federated simulator, a
//! TCP harness running the same protocol across processes, and an analysis
//! suite for the variance bounds, compression trade-offs, and leakage
//! resistance of the scheme.

pub mod analysis;
pub mod codec;
pub mod error;
pub mod fedsim;
pub mod netharness;
pub mod numkernel;
pub mod pretrain;
pub mod quantize;
pub mod rng;

pub use error::{EgaError, Result};

/// Training-precision scalar. Wire and checkpoint payloads are `f32`.
pub type Real = f64;

/// Concrete aliases for the scalar-generic core types.
pub type QuantConfig = quantize::QuantConfig<Real>;
pub type QuantizedVector = quantize::QuantizedVector<Real>;
