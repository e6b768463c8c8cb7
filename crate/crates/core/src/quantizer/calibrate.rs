use crate::error::{Error, Result};
use crate::model::{Batch, ModelGraph};
use crate::network::dense_inputs;
use crate::par::Exec;

/// Fixed data used for scales, sensitivity and search-time evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    batches: Vec<Batch>,
}

impl CalibrationSet {
    pub fn new(batches: Vec<Batch>) -> Result<Self> {
        if batches.is_empty() || batches.iter().any(|b| b.is_empty()) {
            return Err(Error::InvalidBatch("calibration set must contain non-empty batches".into()));
        }
        let d = batches[0].dim();
        if batches.iter().any(|b| b.dim() != d) {
            return Err(Error::InvalidBatch("calibration batches disagree on input width".into()));
        }
        Ok(CalibrationSet { batches })
    }

    /// Splits one batch into chunks of at most `batch_size` rows.
    pub fn from_batch(all: &Batch, batch_size: usize) -> Result<Self> {
        let bs = batch_size.max(1);
        let batches = (0..all.len()).step_by(bs).map(|s| all.slice(s, (s + bs).min(all.len()))).collect();
        CalibrationSet::new(batches)
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    pub fn sample_count(&self) -> usize {
        self.batches.iter().map(Batch::len).sum()
    }

    pub fn to_batch(&self) -> Batch {
        Batch::concat(&self.batches).expect("validated on construction")
    }
}

/// Empirical percentile with linear interpolation at zero-indexed rank
/// `(p/100)·(n−1)`. Sorts `values` in place.
pub fn percentile(values: &mut [f32], p: f64) -> Result<f32> {
    if values.is_empty() {
        return Err(Error::InvalidBatch("percentile of an empty set".into()));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::Config(format!("percentile {p} outside (0, 100]")));
    }
    values.sort_unstable_by(f32::total_cmp);
    let rank = p / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    let frac = rank - lo as f64;
    Ok((values[lo] as f64 + frac * (values[hi] as f64 - values[lo] as f64)) as f32)
}

/// Per-weighted-layer activation scale `α = 1/q`, where `q` is the
/// percentile of `|input|` to that layer pooled over the whole calibration
/// set. `model` should already carry the quantized weights.
pub fn calibrate_activation_scales(
    model: &ModelGraph,
    calib: &CalibrationSet,
    pct: f64,
    exec: Exec,
) -> Result<Vec<f32>> {
    let per_batch = exec.try_map(calib.batches().len(), |i| dense_inputs(model, &calib.batches()[i]))?;
    (0..model.weighted_count())
        .map(|l| {
            let mut pooled: Vec<f32> = per_batch.iter().flat_map(|b| b[l].iter().map(|v| v.abs())).collect();
            let q = percentile(&mut pooled, pct)?;
            Ok(if q > 0.0 { 1.0 / q } else { 1.0 })
        })
        .collect()
}
