//! Mixed-precision post-training quantization.
//!
//! The crate measures how sensitive each layer of a network is to
//! quantization (per-layer Hessian trace plus pairwise inter-layer excess
//! degradation), searches for a per-layer bit-width assignment that keeps
//! calibration accuracy above a target, and estimates the size and latency
//! of the result from a kernel cost table.
//!
//! Modules:
//! - [`network`]: forward pass, gradients and Hessian-vector products.
//! - [`quantizer`]: fixed-point grid, scales, CASE rounding, quantized views.
//! - [`sensitivity`]: Hutchinson traces, degradation matrix, combined score.
//! - [`search`]: bisection, progressive and exhaustive configuration search.
//! - [`costmodel`]: size and latency estimates, Pareto frontiers.
//! - [`pipeline`]: the artifact-producing stages behind the `mpq` binary.

pub mod container;
pub mod costmodel;
pub mod error;
pub mod model;
pub mod network;
pub mod par;
pub mod pipeline;
pub mod quantizer;
pub mod rng;
pub mod search;
pub mod sensitivity;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Activation, Batch, EvaluationResult, Layer, LayerKind, ModelGraph};
pub use par::Exec;
pub use tensor::Tensor;
