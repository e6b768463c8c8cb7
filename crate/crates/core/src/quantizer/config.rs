use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::BASELINE_BITS;
use crate::error::{Error, Result};
use crate::model::ModelGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerBits {
    pub weight_bits: u8,
    pub act_bits: u8,
}

impl LayerBits {
    /// Both matmul operands at the same precision.
    pub fn uniform(bits: u8) -> Self {
        LayerBits { weight_bits: bits, act_bits: bits }
    }
}

/// Bit-width assignment for every weighted layer, in network order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuantConfig {
    layers: IndexMap<String, LayerBits>,
}

impl QuantConfig {
    pub fn uniform(model: &ModelGraph, bits: u8) -> Self {
        QuantConfig {
            layers: model.weighted_ids().into_iter().map(|id| (id.to_string(), LayerBits::uniform(bits))).collect(),
        }
    }

    pub fn baseline(model: &ModelGraph) -> Self {
        Self::uniform(model, BASELINE_BITS)
    }

    /// Builds a config from per-weighted-layer bit-widths.
    pub fn from_bits(model: &ModelGraph, bits: &[u8]) -> Result<Self> {
        let ids = model.weighted_ids();
        if ids.len() != bits.len() {
            return Err(Error::Config(format!("{} bit-widths for {} weighted layers", bits.len(), ids.len())));
        }
        Ok(QuantConfig {
            layers: ids.into_iter().zip(bits).map(|(id, &b)| (id.to_string(), LayerBits::uniform(b))).collect(),
        })
    }

    pub fn get(&self, id: &str) -> Option<LayerBits> {
        self.layers.get(id).copied()
    }

    pub fn set(&mut self, id: &str, bits: LayerBits) {
        self.layers.insert(id.to_string(), bits);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, LayerBits)> {
        self.layers.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Weight bit-widths in the model's weighted-layer order.
    pub fn weight_bits(&self, model: &ModelGraph) -> Result<Vec<u8>> {
        model
            .weighted_ids()
            .into_iter()
            .map(|id| {
                self.get(id).map(|b| b.weight_bits).ok_or_else(|| Error::Config(format!("config lacks layer `{id}`")))
            })
            .collect()
    }

    /// Every weighted layer present, no extras, widths drawn from `palette`,
    /// and both operands of each matmul at the same precision.
    pub fn validate(&self, model: &ModelGraph, palette: &[u8]) -> Result<()> {
        let ids = model.weighted_ids();
        for id in &ids {
            let b = self.get(id).ok_or_else(|| Error::Config(format!("config lacks layer `{id}`")))?;
            if !palette.contains(&b.weight_bits) || !palette.contains(&b.act_bits) {
                return Err(Error::Config(format!("layer `{id}` uses bit-width outside palette {palette:?}")));
            }
            if b.weight_bits != b.act_bits {
                return Err(Error::Config(format!(
                    "layer `{id}` mixes weight bits {} with activation bits {}",
                    b.weight_bits, b.act_bits
                )));
            }
        }
        if let Some(extra) = self.layers.keys().find(|k| !ids.contains(&k.as_str())) {
            return Err(Error::Config(format!("config names unknown or weightless layer `{extra}`")));
        }
        Ok(())
    }
}
