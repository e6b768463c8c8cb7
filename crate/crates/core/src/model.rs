use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::GridMode;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// First derivative, expressed through the pre-activation `x` and output `y`.
    pub fn d1(self, x: f32, _y: f32) -> f32 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            // sech² keeps full relative precision where 1 − y² would cancel.
            Activation::Tanh => (1.0 / x.cosh()).powi(2),
        }
    }

    /// Second derivative; relu uses the almost-everywhere value 0.
    pub fn d2(self, x: f32, y: f32) -> f32 {
        match self {
            Activation::Relu => 0.0,
            Activation::Tanh => -2.0 * y * (1.0 / x.cosh()).powi(2),
        }
    }
}

/// Fixed-point quantization of a dense layer's input operand. Only the
/// forward pass honours it; derivatives are defined on float models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActQuant {
    pub bits: u8,
    pub scale: f32,
    pub grid: GridMode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    /// `y = x·Wᵀ + b` with `W` shaped `[out, in]`.
    Dense {
        weights: Tensor,
        bias: Option<Tensor>,
        input_quant: Option<ActQuant>,
    },
    Activation(Activation),
    /// Softmax followed by mean cross-entropy; must be the final layer.
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub id: String,
    pub kind: LayerKind,
}

impl Layer {
    pub fn dense(id: impl Into<String>, weights: Tensor, bias: Option<Tensor>) -> Self {
        Layer { id: id.into(), kind: LayerKind::Dense { weights, bias, input_quant: None } }
    }

    pub fn activation(id: impl Into<String>, act: Activation) -> Self {
        Layer { id: id.into(), kind: LayerKind::Activation(act) }
    }

    pub fn head(id: impl Into<String>) -> Self {
        Layer { id: id.into(), kind: LayerKind::SoftmaxCrossEntropy }
    }

    pub fn weights(&self) -> Option<&Tensor> {
        match &self.kind {
            LayerKind::Dense { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub fn bias(&self) -> Option<&Tensor> {
        match &self.kind {
            LayerKind::Dense { bias, .. } => bias.as_ref(),
            _ => None,
        }
    }
}

/// Sequential network ending in a softmax cross-entropy head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    input_dim: usize,
    layers: Vec<Layer>,
    weighted: Vec<usize>,
}

impl ModelGraph {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidModel("input dimension must be positive".into()));
        }
        let mut seen = HashSet::new();
        let mut width = input_dim;
        let mut weighted = Vec::new();
        for (pos, layer) in layers.iter().enumerate() {
            if !seen.insert(layer.id.as_str()) {
                return Err(Error::InvalidModel(format!("duplicate layer id `{}`", layer.id)));
            }
            match &layer.kind {
                LayerKind::Dense { weights, bias, .. } => {
                    let shape = weights.shape();
                    if shape.len() != 2 || shape[1] != width {
                        return Err(Error::Shape {
                            layer: layer.id.clone(),
                            detail: format!("weights {shape:?} do not accept input width {width}"),
                        });
                    }
                    if let Some(b) = bias {
                        if b.shape() != [shape[0]] {
                            return Err(Error::Shape {
                                layer: layer.id.clone(),
                                detail: format!("bias {:?} does not match {} outputs", b.shape(), shape[0]),
                            });
                        }
                    }
                    width = shape[0];
                    weighted.push(pos);
                }
                LayerKind::Activation(_) => {}
                LayerKind::SoftmaxCrossEntropy => {
                    if pos + 1 != layers.len() {
                        return Err(Error::InvalidModel(format!("head `{}` must be the final layer", layer.id)));
                    }
                }
            }
        }
        if !matches!(layers.last().map(|l| &l.kind), Some(LayerKind::SoftmaxCrossEntropy)) {
            return Err(Error::InvalidModel("model must end in a softmax cross-entropy head".into()));
        }
        if weighted.is_empty() {
            return Err(Error::InvalidModel("model has no weighted layer".into()));
        }
        Ok(ModelGraph { input_dim, layers, weighted })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Width of the logits fed to the head.
    pub fn n_classes(&self) -> usize {
        let last = *self.weighted.last().expect("validated");
        self.layers[last].weights().expect("dense").shape()[0]
    }

    /// Positions (in `layers()`) of the weighted layers, in network order.
    pub fn weighted_positions(&self) -> &[usize] {
        &self.weighted
    }

    pub fn weighted_ids(&self) -> Vec<&str> {
        self.weighted.iter().map(|&p| self.layers[p].id.as_str()).collect()
    }

    pub fn weighted_count(&self) -> usize {
        self.weighted.len()
    }

    pub fn position(&self, id: &str) -> Result<usize> {
        self.layers.iter().position(|l| l.id == id).ok_or_else(|| Error::UnknownLayer(id.to_string()))
    }

    /// Position of the weighted layer `id` within `weighted_positions()`.
    pub fn weighted_index(&self, id: &str) -> Result<usize> {
        let pos = self.position(id)?;
        self.weighted.iter().position(|&p| p == pos).ok_or_else(|| Error::Weightless(id.to_string()))
    }

    pub fn layer_weights(&self, id: &str) -> Result<&Tensor> {
        let pos = self.position(id)?;
        self.layers[pos].weights().ok_or_else(|| Error::Weightless(id.to_string()))
    }

    /// Replaces the weights of the weighted layer at `windex`; the shape
    /// must be unchanged.
    pub(crate) fn set_weights(&mut self, windex: usize, new: Tensor) {
        let pos = self.weighted[windex];
        if let LayerKind::Dense { weights, .. } = &mut self.layers[pos].kind {
            debug_assert_eq!(weights.shape(), new.shape());
            *weights = new;
        }
    }

    pub(crate) fn set_input_quant(&mut self, windex: usize, q: Option<ActQuant>) {
        let pos = self.weighted[windex];
        if let LayerKind::Dense { input_quant, .. } = &mut self.layers[pos].kind {
            *input_quant = q;
        }
    }

    pub(crate) fn has_quantized_activations(&self) -> bool {
        self.layers.iter().any(|l| matches!(l.kind, LayerKind::Dense { input_quant: Some(_), .. }))
    }
}

/// Inputs `[n, d_in]` with one integer class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Tensor,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape().len() != 2 {
            return Err(Error::InvalidBatch(format!("inputs must be 2-D, got {:?}", inputs.shape())));
        }
        if inputs.shape()[0] != labels.len() {
            return Err(Error::InvalidBatch(format!("{} input rows but {} labels", inputs.shape()[0], labels.len())));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    /// Rows `[start, end)` as a new batch.
    pub fn slice(&self, start: usize, end: usize) -> Batch {
        let d = self.dim();
        let data = self.inputs.data()[start * d..end * d].to_vec();
        Batch {
            inputs: Tensor::new(vec![end - start, d], data).expect("slice of valid batch"),
            labels: self.labels[start..end].to_vec(),
        }
    }

    /// Rows picked by `indices` (repetition allowed).
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.inputs.row(i));
        }
        Batch {
            inputs: Tensor::new(vec![indices.len(), d], data).expect("gather of valid batch"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn concat(batches: &[Batch]) -> Result<Batch> {
        let first = batches.first().ok_or_else(|| Error::InvalidBatch("no batches".into()))?;
        let d = first.dim();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for b in batches {
            if b.dim() != d {
                return Err(Error::InvalidBatch("batches disagree on input width".into()));
            }
            data.extend_from_slice(b.inputs.data());
            labels.extend_from_slice(&b.labels);
        }
        Batch::new(Tensor::new(vec![labels.len(), d], data)?, labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationResult {
    /// Mean cross-entropy.
    pub loss: f64,
    pub accuracy: f64,
    pub correct: usize,
    pub count: usize,
}
