//! Per-layer quantization sensitivity.
//!
//! Three scores are produced for each weighted layer:
//! - the Hessian trace of the layer's weight block, estimated with
//!   Rademacher probes;
//! - the inter-layer score, the clipped sum of the excess loss observed when
//!   the layer is quantized jointly with each other layer;
//! - their combination `e_hessian + β·e_interlayer` with
//!   `β = mean(e_hessian) / mean(e_interlayer)`.

mod hutchinson;
mod interlayer;
mod report;

pub use hutchinson::{hessian_scores, hutchinson_trace, TraceNormalization};
pub use interlayer::{
    interlayer_matrix, interlayer_score, ClipMode, CountingEvaluator, DegradationMatrix, PairLossEvaluator,
    WeightQuantLoss,
};
pub use report::{combine, sensitivity_order, Metric, SensitivityReport};
