//! Bit-width assignment search over a sensitivity ordering.
//!
//! Configurations are handled as one bit-width per weighted layer (network
//! order); both operands of a layer's matmul share that width. Accuracy is
//! judged against `target · baseline`, where `baseline` is the accuracy of
//! the all-baseline configuration on the same calibration data.

mod bisection;
mod evaluator;
mod exhaustive;
mod progressive;
mod trace;

pub use bisection::bisection_search;
pub use evaluator::{evaluate_config, CalibrationEvaluator, ConfigEvaluator, FnEvaluator};
pub use exhaustive::{exhaustive_search, Cost, ExhaustiveResult, EXHAUSTIVE_MAX_LAYERS};
pub use progressive::progressive_search;
pub use trace::{config_hash, Algorithm, Decision, SearchOutcome, SearchTrace, TraceStep};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::BASELINE_BITS;
use crate::sensitivity::Metric;

/// Whether the bisection re-evaluates the accepted configuration of each
/// level before committing it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Revalidation {
    /// Skip the extra evaluation when the exact configuration already
    /// passed during the search.
    #[default]
    Cached,
    Always,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    /// Fraction of baseline accuracy that must be kept, in `(0, 1]`.
    pub accuracy_target: f64,
    /// Strictly descending; the first entry is the baseline width.
    pub bit_palette: Vec<u8>,
    pub metric: Metric,
    pub max_evals: usize,
    pub revalidation: Revalidation,
}

impl SearchSpec {
    pub fn new(accuracy_target: f64) -> Self {
        SearchSpec {
            accuracy_target,
            bit_palette: vec![BASELINE_BITS, 8, 4],
            metric: Metric::Aug,
            max_evals: usize::MAX,
            revalidation: Revalidation::Cached,
        }
    }

    pub fn with_palette(mut self, palette: Vec<u8>) -> Self {
        self.bit_palette = palette;
        self
    }

    pub fn with_max_evals(mut self, max_evals: usize) -> Self {
        self.max_evals = max_evals;
        self
    }

    pub fn with_revalidation(mut self, r: Revalidation) -> Self {
        self.revalidation = r;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.accuracy_target > 0.0 && self.accuracy_target <= 1.0) {
            return Err(Error::Config(format!("accuracy target {} outside (0, 1]", self.accuracy_target)));
        }
        if self.bit_palette.is_empty() {
            return Err(Error::Config("bit palette is empty".into()));
        }
        if self.bit_palette.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Config(format!("bit palette {:?} must be strictly descending", self.bit_palette)));
        }
        if self.bit_palette.iter().any(|&b| !(2..=BASELINE_BITS).contains(&b)) {
            return Err(Error::Config(format!("bit palette {:?} has widths outside [2, 16]", self.bit_palette)));
        }
        if self.max_evals == 0 {
            return Err(Error::Config("max_evals must be positive".into()));
        }
        Ok(())
    }

    pub fn baseline_bits(&self) -> u8 {
        self.bit_palette[0]
    }
}

pub(crate) fn check_ordering(ordering: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in ordering {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Config(format!(
                "ordering {ordering:?} is not a permutation of the {n} weighted layers"
            )));
        }
    }
    if ordering.len() != n {
        return Err(Error::Config(format!("ordering covers {} of {n} weighted layers", ordering.len())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(SearchSpec::new(0.99).validate().is_ok());
        assert!(SearchSpec::new(0.0).validate().is_err());
        assert!(SearchSpec::new(1.01).validate().is_err());
        assert!(SearchSpec::new(0.9).with_palette(vec![8, 16]).validate().is_err());
        assert!(SearchSpec::new(0.9).with_palette(vec![16, 8, 8]).validate().is_err());
    }

    #[test]
    fn ordering_must_be_a_permutation() {
        assert!(check_ordering(&[2, 0, 1], 3).is_ok());
        assert!(check_ordering(&[0, 0, 1], 3).is_err());
        assert!(check_ordering(&[0, 1], 3).is_err());
        assert!(check_ordering(&[0, 1, 3], 3).is_err());
    }
}
