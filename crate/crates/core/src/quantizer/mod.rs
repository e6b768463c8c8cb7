//! Symmetric fixed-point quantization:
//!
//! `Q(x) = round(clip(α·x, −1, 1) · 2^(b−1)) · 2^−(b−1) / α`
//!
//! with per-tensor or per-output-channel scales α, CASE rounding for
//! weights and percentile calibration for activations. Bit-width 16 is the
//! unquantized baseline and leaves values untouched.

pub(crate) mod apply;
mod calibrate;
mod case;
mod config;

pub use apply::{apply_config, compute_scales, LayerScales, QuantOptions, Scales};
pub use calibrate::{calibrate_activation_scales, percentile, CalibrationSet};
pub use case::{case_round, case_round_channel, CaseChannel};
pub use config::{LayerBits, QuantConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bit-width treated as the unquantized baseline.
pub const BASELINE_BITS: u8 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    Nearest,
    #[default]
    Case,
}

/// `Symmetric` admits every level of the formula, `[−2^(b−1), 2^(b−1)]`.
/// `HardwareInt` clamps to the two's-complement range `[−2^(b−1), 2^(b−1) − 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridMode {
    #[default]
    Symmetric,
    HardwareInt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    PerTensor,
    #[default]
    PerChannel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scale {
    PerTensor(f32),
    /// One α per leading-dimension slice.
    PerChannel(Vec<f32>),
}

impl Scale {
    fn for_row(&self, r: usize) -> f32 {
        match self {
            Scale::PerTensor(a) => *a,
            Scale::PerChannel(v) => v[r],
        }
    }

    fn values(&self) -> &[f32] {
        match self {
            Scale::PerTensor(a) => std::slice::from_ref(a),
            Scale::PerChannel(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantParams {
    pub bits: u8,
    pub scale: Scale,
    pub rounding: Rounding,
    pub grid: GridMode,
}

impl QuantParams {
    pub fn per_tensor(bits: u8, alpha: f32) -> Self {
        QuantParams { bits, scale: Scale::PerTensor(alpha), rounding: Rounding::Nearest, grid: GridMode::Symmetric }
    }

    pub fn per_channel(bits: u8, alphas: Vec<f32>) -> Self {
        QuantParams { bits, scale: Scale::PerChannel(alphas), rounding: Rounding::Nearest, grid: GridMode::Symmetric }
    }

    pub fn with_rounding(mut self, rounding: Rounding) -> Self {
        self.rounding = rounding;
        self
    }

    pub fn with_grid(mut self, grid: GridMode) -> Self {
        self.grid = grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=BASELINE_BITS).contains(&self.bits) {
            return Err(Error::InvalidQuant(format!("bit-width {} outside [2, 16]", self.bits)));
        }
        if let Some(a) = self.scale.values().iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::InvalidQuant(format!("scale {a} must be positive and finite")));
        }
        Ok(())
    }

    /// Grid spacing in value units for row `r`: `2^−(b−1) / α`.
    pub fn step(&self, r: usize) -> f64 {
        grid_step(self.bits, self.scale.for_row(r))
    }
}

pub fn grid_step(bits: u8, alpha: f32) -> f64 {
    (-((bits - 1) as f64)).exp2() / alpha as f64
}

/// Integer level range `(min, max)` for a bit-width.
pub(crate) fn level_range(bits: u8, grid: GridMode) -> (f64, f64) {
    let levels = (1u32 << (bits - 1)) as f64;
    match grid {
        GridMode::Symmetric => (-levels, levels),
        GridMode::HardwareInt => (-levels, levels - 1.0),
    }
}

/// Quantizes one value with round-to-nearest (ties away from zero).
#[inline]
pub fn quantize_value(x: f32, bits: u8, alpha: f32, grid: GridMode) -> f32 {
    if bits >= BASELINE_BITS {
        return x;
    }
    let levels = (1u32 << (bits - 1)) as f32;
    let mut k = ((alpha * x).clamp(-1.0, 1.0) * levels).round();
    if grid == GridMode::HardwareInt {
        k = k.min(levels - 1.0);
    }
    k / levels / alpha
}

pub fn quantize_tensor(x: &Tensor, p: &QuantParams) -> Result<Tensor> {
    p.validate()?;
    if let Scale::PerChannel(v) = &p.scale {
        if v.len() != x.rows() {
            return Err(Error::InvalidQuant(format!("{} channel scales for {} channels", v.len(), x.rows())));
        }
    }
    if p.bits >= BASELINE_BITS {
        return Ok(x.clone());
    }
    if p.rounding == Rounding::Case {
        return case_round(x, p);
    }
    let n = x.row_len();
    let out =
        x.data().iter().enumerate().map(|(i, &v)| quantize_value(v, p.bits, p.scale.for_row(i / n), p.grid)).collect();
    Ok(x.with_data(out))
}

/// `α = 1 / max|w|` over the whole tensor or each leading-dimension slice;
/// all-zero groups get `α = 1`.
pub fn weight_scales(w: &Tensor, granularity: Granularity) -> Vec<f32> {
    let alpha = |vals: &[f32]| {
        let m = vals.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        if m > 0.0 {
            1.0 / m
        } else {
            1.0
        }
    };
    match granularity {
        Granularity::PerTensor => vec![alpha(w.data())],
        Granularity::PerChannel => (0..w.rows()).map(|r| alpha(w.row(r))).collect(),
    }
}
