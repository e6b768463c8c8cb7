use crate::error::Result;
use crate::model::ModelGraph;
use crate::network::forward_batches;
use crate::par::Exec;
use crate::quantizer::{apply_config, CalibrationSet, QuantConfig, QuantOptions, Scales};

/// Accuracy of a configuration given as one bit-width per weighted layer.
pub trait ConfigEvaluator: Sync {
    fn layer_count(&self) -> usize;
    fn accuracy(&self, bits: &[u8]) -> Result<f64>;
}

/// Accuracy of the quantized view on the full calibration set.
pub struct CalibrationEvaluator<'a> {
    pub model: &'a ModelGraph,
    pub calib: &'a CalibrationSet,
    pub scales: &'a Scales,
    pub opts: QuantOptions,
    pub exec: Exec,
}

impl ConfigEvaluator for CalibrationEvaluator<'_> {
    fn layer_count(&self) -> usize {
        self.model.weighted_count()
    }

    fn accuracy(&self, bits: &[u8]) -> Result<f64> {
        let config = QuantConfig::from_bits(self.model, bits)?;
        evaluate_config(self.model, &config, self.calib, self.scales, &self.opts, self.exec)
    }
}

pub fn evaluate_config(
    model: &ModelGraph,
    config: &QuantConfig,
    calib: &CalibrationSet,
    scales: &Scales,
    opts: &QuantOptions,
    exec: Exec,
) -> Result<f64> {
    let view = apply_config(model, config, scales, opts)?;
    Ok(forward_batches(&view, calib.batches(), exec)?.accuracy)
}

/// Wraps a closure; convenient for synthetic evaluators.
pub struct FnEvaluator<F> {
    n: usize,
    f: F,
}

impl<F: Fn(&[u8]) -> f64 + Sync> FnEvaluator<F> {
    pub fn new(n: usize, f: F) -> Self {
        FnEvaluator { n, f }
    }
}

impl<F: Fn(&[u8]) -> f64 + Sync> ConfigEvaluator for FnEvaluator<F> {
    fn layer_count(&self) -> usize {
        self.n
    }

    fn accuracy(&self, bits: &[u8]) -> Result<f64> {
        Ok((self.f)(bits))
    }
}
