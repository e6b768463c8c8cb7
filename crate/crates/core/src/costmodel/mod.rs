//! Size and latency estimates for quantization configurations.
//!
//! Latency is the sum of per-layer kernel lookups in a [`CostTable`]; no
//! fusion is modeled and missing entries are an error rather than being
//! interpolated. Dense layers are priced as `gemm` with `m = 1` (batch size
//! one), `n = out`, `k = in`.

mod pareto;
mod report;
mod table;

pub use pareto::{pareto_frontier, pareto_indices};
pub use report::{ConfigReport, CostReport, LayerCost};
pub use table::{synth_cost_table, CostEntry, CostKey, CostTable, GEMM, SYNTH_OVERHEAD_US};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::quantizer::{QuantConfig, BASELINE_BITS};

/// Bit totals; biases are always counted at the baseline width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModelSize {
    pub weight_bits: u64,
    pub bias_bits: u64,
}

impl ModelSize {
    /// From `(weight_count, bias_count, bits)` triples.
    pub fn from_layers(layers: impl IntoIterator<Item = (u64, u64, u8)>) -> Self {
        layers.into_iter().fold(ModelSize::default(), |acc, (w, b, bits)| ModelSize {
            weight_bits: acc.weight_bits + w * bits as u64,
            bias_bits: acc.bias_bits + b * BASELINE_BITS as u64,
        })
    }

    pub fn weight_bytes(&self) -> f64 {
        self.weight_bits as f64 / 8.0
    }

    pub fn total_bytes(&self) -> f64 {
        (self.weight_bits + self.bias_bits) as f64 / 8.0
    }

    pub fn total_bits(&self) -> u64 {
        self.weight_bits + self.bias_bits
    }
}

pub fn model_size(model: &ModelGraph, config: &QuantConfig) -> Result<ModelSize> {
    let mut layers = Vec::new();
    for id in model.weighted_ids() {
        let bits = config.get(id).ok_or_else(|| Error::Config(format!("config lacks layer `{id}`")))?;
        let pos = model.position(id)?;
        let layer = &model.layers()[pos];
        let w = layer.weights().map_or(0, |t| t.len()) as u64;
        let b = layer.bias().map_or(0, |t| t.len()) as u64;
        layers.push((w, b, bits.weight_bits));
    }
    Ok(ModelSize::from_layers(layers))
}

/// Per-layer latency lookups for `config`, in weighted-layer order.
pub fn layer_latencies(model: &ModelGraph, config: &QuantConfig, table: &CostTable) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut missing = Vec::new();
    for id in model.weighted_ids() {
        let bits = config.get(id).ok_or_else(|| Error::Config(format!("config lacks layer `{id}`")))?;
        let shape = model.layer_weights(id)?.shape();
        let key = CostKey::gemm(shape[0], shape[1], bits.weight_bits, bits.act_bits);
        match table.get(&key) {
            Some(e) => out.push(e.latency_us),
            None => missing.push(format!("{id}: {key}")),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingCost(missing));
    }
    Ok(out)
}

/// Estimated latency in microseconds.
pub fn model_latency(model: &ModelGraph, config: &QuantConfig, table: &CostTable) -> Result<f64> {
    Ok(layer_latencies(model, config, table)?.iter().sum())
}
