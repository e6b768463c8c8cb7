use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::LayerObjective;
use crate::par::Exec;
use crate::rng;
use crate::tensor::Tensor;

/// Whether the per-layer trace is reported as is or divided by the
/// layer's parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceNormalization {
    Raw,
    #[default]
    PerParameter,
}

/// Mean of `vᵀHv` over `n_samples` Rademacher probes. Probe `s` of layer
/// `id` is drawn from the stream keyed by `(seed, id, s)`.
pub fn hutchinson_trace<O: LayerObjective + ?Sized>(
    obj: &O,
    layer_id: &str,
    n_samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::Config("hutchinson needs at least one sample".into()));
    }
    let shape = obj.weight_shape(layer_id)?;
    let count: usize = shape.iter().product();
    let terms = exec.try_map(n_samples, |s| {
        let mut stream = rng::stream(seed, layer_id, s as u64);
        let v: Vec<f32> = (0..count).map(|_| if stream.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let v = Tensor::new(shape.clone(), v)?;
        let hv = obj.hvp(layer_id, &v)?;
        Ok::<_, Error>(v.dot(&hv))
    })?;
    Ok(terms.iter().sum::<f64>() / n_samples as f64)
}

/// Estimated trace for each listed layer.
pub fn hessian_scores<O: LayerObjective + ?Sized>(
    obj: &O,
    layer_ids: &[&str],
    n_samples: usize,
    seed: u64,
    normalization: TraceNormalization,
    exec: Exec,
) -> Result<Vec<f64>> {
    layer_ids
        .iter()
        .map(|id| {
            let t = hutchinson_trace(obj, id, n_samples, seed, exec)?;
            Ok(match normalization {
                TraceNormalization::Raw => t,
                TraceNormalization::PerParameter => t / obj.weight_shape(id)?.iter().product::<usize>() as f64,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::DiagonalQuadratic;

    #[test]
    fn quadratic_head_has_zero_variance() {
        let q = DiagonalQuadratic::new("w", vec![1.0, 2.0, 3.0], vec![0.3, 0.1, -2.0]).unwrap();
        for n in [1, 2, 17] {
            assert_eq!(hutchinson_trace(&q, "w", n, 9, Exec::Sequential).unwrap(), 6.0);
        }
        let norm = hessian_scores(&q, &["w"], 4, 0, TraceNormalization::PerParameter, Exec::Sequential).unwrap();
        assert_eq!(norm, vec![2.0]);
    }

    #[test]
    fn zero_samples_rejected() {
        let q = DiagonalQuadratic::new("w", vec![1.0], vec![0.0]).unwrap();
        assert!(hutchinson_trace(&q, "w", 0, 0, Exec::Sequential).is_err());
    }
}
