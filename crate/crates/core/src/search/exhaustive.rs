use serde::{Deserialize, Serialize};

use super::{ConfigEvaluator, SearchSpec};
use crate::error::{Error, Result};
use crate::par::Exec;

pub const EXHAUSTIVE_MAX_LAYERS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cost {
    pub latency_us: f64,
    pub size_bits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveResult {
    pub bits: Vec<u8>,
    pub accuracy: f64,
    pub cost: Cost,
    pub baseline_accuracy: f64,
    /// Every configuration with its accuracy and cost, in enumeration order.
    pub evaluated: Vec<(Vec<u8>, f64, Cost)>,
}

fn decode(mut code: usize, n: usize, palette: &[u8]) -> Vec<u8> {
    let mut bits = vec![0; n];
    for b in bits.iter_mut().rev() {
        *b = palette[code % palette.len()];
        code /= palette.len();
    }
    bits
}

/// Evaluates every configuration over the palette and returns the feasible
/// one with the lowest latency (ties: smaller size, then lexicographically
/// smallest bit vector).
pub fn exhaustive_search<E, C>(eval: &E, spec: &SearchSpec, cost: C, exec: Exec) -> Result<ExhaustiveResult>
where
    E: ConfigEvaluator + ?Sized,
    C: Fn(&[u8]) -> Result<Cost> + Sync,
{
    spec.validate()?;
    let n = eval.layer_count();
    if n > EXHAUSTIVE_MAX_LAYERS || spec.bit_palette.len() > 3 {
        return Err(Error::Config(format!(
            "exhaustive search supports at most {EXHAUSTIVE_MAX_LAYERS} layers and 3 widths, got {n} and {}",
            spec.bit_palette.len()
        )));
    }
    let total = spec.bit_palette.len().pow(n as u32);
    let evaluated = exec.try_map(total, |code| {
        let bits = decode(code, n, &spec.bit_palette);
        let acc = eval.accuracy(&bits)?;
        let c = cost(&bits)?;
        Ok::<_, Error>((bits, acc, c))
    })?;
    let baseline = vec![spec.baseline_bits(); n];
    let baseline_accuracy = evaluated.iter().find(|(b, _, _)| *b == baseline).expect("enumerated").1;
    let threshold = spec.accuracy_target * baseline_accuracy;
    let (bits, accuracy, cost) = evaluated
        .iter()
        .filter(|(_, acc, _)| *acc >= threshold)
        .min_by(|a, b| {
            a.2.latency_us.total_cmp(&b.2.latency_us).then(a.2.size_bits.cmp(&b.2.size_bits)).then(a.0.cmp(&b.0))
        })
        .cloned()
        .expect("baseline is always feasible");
    Ok(ExhaustiveResult { bits, accuracy, cost, baseline_accuracy, evaluated })
}
