use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{Granularity, GridMode, QuantOptions, Rounding};
use crate::search::{Algorithm, Revalidation, SearchSpec};
use crate::sensitivity::{ClipMode, Metric, TraceNormalization};

pub const SYNTHETIC: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model_path: PathBuf,
    pub calib_path: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub percentile: f64,
    pub n_hutchinson: usize,
    /// Calibration rows used for Hessian estimates; 0 uses all of them.
    pub hessian_samples: usize,
    pub bit_palette: Vec<u8>,
    pub accuracy_targets: Vec<f64>,
    pub metrics: Vec<Metric>,
    pub search: Algorithm,
    /// `synthetic` or a path to a cost-table CSV.
    pub cost_table: String,
    /// Microseconds per multiply-accumulate for synthetic tables.
    pub us_per_mac: f64,
    pub max_evals: usize,
    /// Bootstrap resamples of the calibration set for error bars; 0 disables.
    pub trials: usize,
    pub clip: ClipMode,
    pub normalization: TraceNormalization,
    pub revalidation: Revalidation,
    pub rounding: Rounding,
    pub grid: GridMode,
    pub granularity: Granularity,
    pub quantize_activations: bool,
    pub record_timings: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model_path: PathBuf::from("model"),
            calib_path: PathBuf::from("calib"),
            output_dir: PathBuf::from("out"),
            seed: 0,
            percentile: 99.999,
            n_hutchinson: 256,
            hessian_samples: 512,
            bit_palette: vec![16, 8, 4],
            accuracy_targets: vec![0.99, 0.999, 0.9999],
            metrics: vec![Metric::Aug],
            search: Algorithm::Bisection,
            cost_table: SYNTHETIC.into(),
            us_per_mac: 0.01,
            max_evals: 10_000,
            trials: 0,
            clip: ClipMode::PerTerm,
            normalization: TraceNormalization::PerParameter,
            revalidation: Revalidation::Cached,
            rounding: Rounding::Case,
            grid: GridMode::Symmetric,
            granularity: Granularity::PerChannel,
            quantize_activations: true,
            record_timings: false,
        }
    }
}

impl PipelineConfig {
    /// Overlays the fields present in a JSON file onto `self`.
    pub fn overlay_file(self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let patch: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let serde_json::Value::Object(patch) = patch else {
            return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
        };
        let mut base = serde_json::to_value(&self).expect("serializable");
        let obj = base.as_object_mut().expect("struct serializes to object");
        for (k, v) in patch {
            if !obj.contains_key(&k) {
                return Err(Error::Config(format!("{}: unknown field `{k}`", path.display())));
            }
            obj.insert(k, v);
        }
        serde_json::from_value(base).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.accuracy_targets.is_empty() {
            return Err(Error::Config("no accuracy targets".into()));
        }
        for &t in &self.accuracy_targets {
            SearchSpec::new(t).with_palette(self.bit_palette.clone()).validate()?;
        }
        if self.bit_palette.len() < 2 {
            return Err(Error::Config("bit palette needs a baseline and at least one quantized width".into()));
        }
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::Config(format!("percentile {} outside (0, 100]", self.percentile)));
        }
        if self.n_hutchinson == 0 {
            return Err(Error::Config("n_hutchinson must be positive".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("no sensitivity metric selected".into()));
        }
        if self.cost_table == SYNTHETIC && !(self.us_per_mac.is_finite() && self.us_per_mac > 0.0) {
            return Err(Error::Config(format!("us_per_mac {} must be positive", self.us_per_mac)));
        }
        Ok(())
    }

    /// Highest quantized width; used for pairwise degradation and activation calibration.
    pub fn calibration_bits(&self) -> u8 {
        self.bit_palette[1]
    }

    pub fn quant_options(&self) -> QuantOptions {
        QuantOptions { rounding: self.rounding, grid: self.grid, quantize_activations: self.quantize_activations }
    }

    pub fn search_spec(&self, target: f64, metric: Metric) -> SearchSpec {
        let mut s = SearchSpec::new(target)
            .with_palette(self.bit_palette.clone())
            .with_max_evals(self.max_evals)
            .with_revalidation(self.revalidation);
        s.metric = metric;
        s
    }
}
