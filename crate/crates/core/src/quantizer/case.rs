//! CASE rounding: start from round-to-nearest and flip the rounding
//! direction of as few elements per channel as needed so the channel's
//! summed signed error is within half a grid step.

use super::{level_range, QuantParams, Rounding};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Result of rounding one channel, in integer grid levels.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseChannel {
    pub levels: Vec<i32>,
    /// Indices whose rounding direction was flipped.
    pub flipped: Vec<usize>,
    /// Summed signed error in grid units after flipping.
    pub error_sum: f64,
}

/// Rounds one channel with scale `alpha`.
pub fn case_round_channel(values: &[f32], bits: u8, alpha: f32, grid: super::GridMode) -> CaseChannel {
    let (kmin, kmax) = level_range(bits, grid);
    let half = (1u32 << (bits - 1)) as f64;
    let a = alpha as f64;

    let scaled: Vec<f64> = values.iter().map(|&x| (a * x as f64).clamp(-1.0, 1.0) * half).collect();
    let mut k: Vec<f64> = scaled.iter().map(|u| u.round().clamp(kmin, kmax)).collect();
    let err = |k: &[f64]| -> f64 { k.iter().zip(&scaled).map(|(k, u)| k - u).sum() };
    let sum = err(&k);

    let mut flipped = Vec::new();
    if sum.abs() > 0.5 {
        let sign = sum.signum();
        let needed = (sum.abs() - 0.5).ceil() as usize;
        // Elements rounded in the same direction as the surplus; flipping
        // moves each one level against it.
        let mut cands: Vec<(usize, f64)> = (0..k.len())
            .filter_map(|i| {
                let e = k[i] - scaled[i];
                let target = k[i] - sign;
                (e * sign > 0.0 && target >= kmin && target <= kmax).then_some((i, e.abs()))
            })
            .collect();
        cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(i, _) in cands.iter().take(needed) {
            k[i] -= sign;
            flipped.push(i);
        }
        flipped.sort_unstable();
    }
    let error_sum = err(&k);
    CaseChannel { levels: k.into_iter().map(|v| v as i32).collect(), flipped, error_sum }
}

/// CASE-rounds every leading-dimension slice of `w`.
pub fn case_round(w: &Tensor, p: &QuantParams) -> Result<Tensor> {
    p.validate()?;
    if p.rounding != Rounding::Case {
        return Err(Error::InvalidQuant("case_round requires case rounding".into()));
    }
    if let super::Scale::PerChannel(v) = &p.scale {
        if v.len() != w.rows() {
            return Err(Error::InvalidQuant(format!("{} channel scales for {} channels", v.len(), w.rows())));
        }
    }
    if p.bits >= super::BASELINE_BITS {
        return Ok(w.clone());
    }
    let half = (1u32 << (p.bits - 1)) as f32;
    let mut out = Vec::with_capacity(w.len());
    for r in 0..w.rows() {
        let alpha = p.scale.for_row(r);
        let ch = case_round_channel(w.row(r), p.bits, alpha, p.grid);
        out.extend(ch.levels.iter().map(|&k| k as f32 / half / alpha));
    }
    Ok(w.with_data(out))
}
