use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{
    calibrate_activation_scales, quantize_tensor, weight_scales, CalibrationSet, Granularity, GridMode, QuantConfig,
    QuantParams, Rounding, BASELINE_BITS,
};
use crate::error::{Error, Result};
use crate::model::{ActQuant, ModelGraph};
use crate::par::Exec;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantOptions {
    pub rounding: Rounding,
    pub grid: GridMode,
    /// Quantize each dense layer's input at the layer's activation width.
    pub quantize_activations: bool,
}

impl Default for QuantOptions {
    fn default() -> Self {
        QuantOptions { rounding: Rounding::Case, grid: GridMode::Symmetric, quantize_activations: true }
    }
}

impl QuantOptions {
    pub fn weights_only(self) -> Self {
        QuantOptions { quantize_activations: false, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScales {
    pub weight_scales: Vec<f32>,
    pub act_scale: f32,
    pub bits_used_for_calibration: u8,
}

/// Per-layer scales as persisted in `scales.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scales {
    pub layers: IndexMap<String, LayerScales>,
}

impl Scales {
    pub fn get(&self, id: &str) -> Result<&LayerScales> {
        self.layers.get(id).ok_or_else(|| Error::Config(format!("no scales recorded for layer `{id}`")))
    }

    /// Weight scales only; activation scales left at 1.
    pub fn weights_only(model: &ModelGraph, granularity: Granularity) -> Self {
        let layers = model
            .weighted_ids()
            .into_iter()
            .map(|id| {
                let w = model.layer_weights(id).expect("weighted id");
                (
                    id.to_string(),
                    LayerScales {
                        weight_scales: weight_scales(w, granularity),
                        act_scale: 1.0,
                        bits_used_for_calibration: 0,
                    },
                )
            })
            .collect();
        Scales { layers }
    }
}

fn params_for(bits: u8, scales: &[f32], opts: &QuantOptions) -> QuantParams {
    let p = if scales.len() == 1 {
        QuantParams::per_tensor(bits, scales[0])
    } else {
        QuantParams::per_channel(bits, scales.to_vec())
    };
    p.with_rounding(opts.rounding).with_grid(opts.grid)
}

/// Quantized copy of one layer's weights.
pub(crate) fn quantized_weights(
    model: &ModelGraph,
    id: &str,
    bits: u8,
    scales: &Scales,
    opts: &QuantOptions,
) -> Result<Tensor> {
    let w = model.layer_weights(id)?;
    if bits >= BASELINE_BITS {
        return Ok(w.clone());
    }
    quantize_tensor(w, &params_for(bits, &scales.get(id)?.weight_scales, opts))
}

/// Weight scales from the weights; activation scales from the percentile of
/// each layer's input over `calib`, observed with every weight quantized at
/// `calib_bits` (activations kept in float).
pub fn compute_scales(
    model: &ModelGraph,
    calib: &CalibrationSet,
    calib_bits: u8,
    pct: f64,
    granularity: Granularity,
    opts: &QuantOptions,
    exec: Exec,
) -> Result<Scales> {
    let mut scales = Scales::weights_only(model, granularity);
    let config = QuantConfig::uniform(model, calib_bits);
    let view = apply_config(model, &config, &scales, &opts.weights_only())?;
    let act = calibrate_activation_scales(&view, calib, pct, exec)?;
    for (s, a) in scales.layers.values_mut().zip(act) {
        s.act_scale = a;
        s.bits_used_for_calibration = calib_bits;
    }
    Ok(scales)
}

/// Materializes the quantized view of `model` under `config`. Layers at the
/// baseline width are left untouched; the input model is not modified.
pub fn apply_config(
    model: &ModelGraph,
    config: &QuantConfig,
    scales: &Scales,
    opts: &QuantOptions,
) -> Result<ModelGraph> {
    let mut view = model.clone();
    for (windex, id) in model.weighted_ids().into_iter().enumerate() {
        let bits = config.get(id).ok_or_else(|| Error::Config(format!("config lacks layer `{id}`")))?;
        if bits.weight_bits < BASELINE_BITS {
            view.set_weights(windex, quantized_weights(model, id, bits.weight_bits, scales, opts)?);
        }
        if opts.quantize_activations && bits.act_bits < BASELINE_BITS {
            let s = scales.get(id)?;
            view.set_input_quant(windex, Some(ActQuant { bits: bits.act_bits, scale: s.act_scale, grid: opts.grid }));
        }
    }
    Ok(view)
}
