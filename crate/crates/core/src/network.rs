//! Forward evaluation, reverse-mode gradients and exact Hessian-vector
//! products for [`ModelGraph`].
//!
//! Hessian-vector products use the R-operator: a forward pass of
//! directional derivatives from the target layer followed by a backward
//! pass that carries both the adjoint and its directional derivative. Only
//! the diagonal block of the target layer's weights is formed.

use crate::error::{Error, Result};
use crate::model::{Batch, EvaluationResult, LayerKind, ModelGraph};
use crate::par::Exec;
use crate::quantizer::quantize_value;
use crate::tensor::{Mat, Tensor};

/// Largest layer for which [`exact_layer_trace`] will enumerate basis vectors.
pub const EXACT_TRACE_CAP: usize = 10_000;

fn batch_matrix(batch: &Batch) -> Mat {
    Mat { rows: batch.len(), cols: batch.dim(), data: batch.inputs().data().to_vec() }
}

fn check_labels(model: &ModelGraph, batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidBatch("batch is empty".into()));
    }
    if batch.dim() != model.input_dim() {
        let first = &model.layers()[model.weighted_positions()[0]].id;
        return Err(Error::Shape {
            layer: first.clone(),
            detail: format!("batch width {} but model expects {}", batch.dim(), model.input_dim()),
        });
    }
    let c = model.n_classes();
    if let Some(&bad) = batch.labels().iter().find(|&&l| l >= c) {
        return Err(Error::InvalidBatch(format!("label {bad} outside [0, {c})")));
    }
    Ok(())
}

/// Values entering every layer, in order; the last entry is the logits.
struct Tape {
    inputs: Vec<Mat>,
}

impl Tape {
    fn logits(&self) -> &Mat {
        self.inputs.last().expect("non-empty tape")
    }
}

fn run_forward(model: &ModelGraph, batch: &Batch) -> Result<Tape> {
    check_labels(model, batch)?;
    let mut h = batch_matrix(batch);
    let mut inputs = Vec::with_capacity(model.layers().len());
    for layer in model.layers() {
        match &layer.kind {
            LayerKind::Dense { weights, bias, input_quant } => {
                if let Some(q) = input_quant {
                    for v in &mut h.data {
                        *v = quantize_value(*v, q.bits, q.scale, q.grid);
                    }
                }
                let out = weights.shape()[0];
                let mut y = h.matmul_t(weights.data(), out);
                if let Some(b) = bias {
                    y.add_row_vector(b.data());
                }
                inputs.push(std::mem::replace(&mut h, y));
            }
            LayerKind::Activation(act) => {
                let y = Mat { rows: h.rows, cols: h.cols, data: h.data.iter().map(|&x| act.apply(x)).collect() };
                inputs.push(std::mem::replace(&mut h, y));
            }
            LayerKind::SoftmaxCrossEntropy => {
                inputs.push(h);
                break;
            }
        }
    }
    Ok(Tape { inputs })
}

fn argmax_lowest(z: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Summed loss and correct count (not yet averaged).
fn loss_and_correct(logits: &Mat, labels: &[usize]) -> (f64, usize) {
    let mut loss = 0.0f64;
    let mut correct = 0;
    for (r, &y) in labels.iter().enumerate() {
        let z = logits.row(r);
        let m = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f32>().ln();
        loss += (lse - z[y]) as f64;
        if argmax_lowest(z) == y {
            correct += 1;
        }
    }
    (loss, correct)
}

/// Mean cross-entropy and argmax accuracy (ties go to the lowest class).
pub fn forward(model: &ModelGraph, batch: &Batch) -> Result<EvaluationResult> {
    let tape = run_forward(model, batch)?;
    let (loss, correct) = loss_and_correct(tape.logits(), batch.labels());
    let n = batch.len();
    Ok(EvaluationResult { loss: loss / n as f64, accuracy: correct as f64 / n as f64, correct, count: n })
}

/// Evaluates several batches and pools them as one data set.
pub fn forward_batches(model: &ModelGraph, batches: &[Batch], exec: Exec) -> Result<EvaluationResult> {
    if batches.is_empty() {
        return Err(Error::InvalidBatch("no batches to evaluate".into()));
    }
    let parts = exec.try_map(batches.len(), |i| {
        let tape = run_forward(model, &batches[i])?;
        Ok::<_, Error>(loss_and_correct(tape.logits(), batches[i].labels()))
    })?;
    let (mut loss, mut correct, mut count) = (0.0, 0, 0);
    for ((l, c), b) in parts.into_iter().zip(batches) {
        loss += l;
        correct += c;
        count += b.len();
    }
    Ok(EvaluationResult { loss: loss / count as f64, accuracy: correct as f64 / count as f64, correct, count })
}

/// Per-dense-layer input activations (the matmul operand) for one batch,
/// keyed by weighted-layer index.
pub(crate) fn dense_inputs(model: &ModelGraph, batch: &Batch) -> Result<Vec<Vec<f32>>> {
    let tape = run_forward(model, batch)?;
    Ok(model
        .weighted_positions()
        .iter()
        .map(|&p| {
            let x = &tape.inputs[p];
            match &model.layers()[p].kind {
                LayerKind::Dense { input_quant: Some(q), .. } => {
                    x.data.iter().map(|&v| quantize_value(v, q.bits, q.scale, q.grid)).collect()
                }
                _ => x.data.clone(),
            }
        })
        .collect())
}

/// A scalar objective whose per-layer gradient and Hessian-vector product
/// are available. Implemented by networks on a batch and by closed-form
/// quadratics used in tests.
pub trait LayerObjective: Sync {
    fn weight_shape(&self, layer_id: &str) -> Result<Vec<usize>>;
    fn gradient(&self, layer_id: &str) -> Result<Tensor>;
    fn hvp(&self, layer_id: &str, v: &Tensor) -> Result<Tensor>;
}

/// A model paired with a batch, with the forward tape computed once.
pub struct NetworkObjective<'a> {
    model: &'a ModelGraph,
    tape: Tape,
    /// `∂L/∂logits`, already divided by the batch size.
    dlogits: Mat,
    probs: Vec<Vec<f64>>,
    n: usize,
}

impl<'a> NetworkObjective<'a> {
    pub fn new(model: &'a ModelGraph, batch: &Batch) -> Result<Self> {
        if model.has_quantized_activations() {
            return Err(Error::InvalidModel(
                "derivatives are only defined for models without activation quantization".into(),
            ));
        }
        let tape = run_forward(model, batch)?;
        let logits = tape.logits();
        let n = batch.len();
        let mut probs = Vec::with_capacity(logits.rows);
        let mut dlogits = Mat::zeros(logits.rows, logits.cols);
        for r in 0..logits.rows {
            let z = logits.row(r);
            let m = z.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let e: Vec<f64> = z.iter().map(|&v| (v as f64 - m).exp()).collect();
            let s: f64 = e.iter().sum();
            let y = batch.labels()[r];
            // p_y − 1 summed from the other classes so it keeps its precision
            // when the prediction is confident.
            let rest: f64 = e.iter().enumerate().filter(|&(k, _)| k != y).map(|(_, v)| v).sum();
            for (k, &ek) in e.iter().enumerate() {
                let d = if k == y { -rest / s } else { ek / s };
                dlogits.data[r * logits.cols + k] = (d / n as f64) as f32;
            }
            probs.push(e.into_iter().map(|v| v / s).collect());
        }
        Ok(NetworkObjective { model, tape, dlogits, probs, n })
    }

    pub fn model(&self) -> &ModelGraph {
        self.model
    }

    fn target(&self, layer_id: &str) -> Result<usize> {
        let pos = self.model.position(layer_id)?;
        match self.model.layers()[pos].kind {
            LayerKind::Dense { .. } => Ok(pos),
            _ => Err(Error::Weightless(layer_id.to_string())),
        }
    }

    fn weights_at(&self, pos: usize) -> &Tensor {
        self.model.layers()[pos].weights().expect("dense layer")
    }

    fn head_pos(&self) -> usize {
        self.model.layers().len() - 1
    }
}

impl LayerObjective for NetworkObjective<'_> {
    fn weight_shape(&self, layer_id: &str) -> Result<Vec<usize>> {
        let pos = self.target(layer_id)?;
        Ok(self.weights_at(pos).shape().to_vec())
    }

    fn gradient(&self, layer_id: &str) -> Result<Tensor> {
        let target = self.target(layer_id)?;
        let mut delta = self.dlogits.clone();
        for pos in (target..self.head_pos()).rev() {
            match &self.model.layers()[pos].kind {
                LayerKind::Dense { weights, .. } => {
                    if pos == target {
                        let g = delta.t_matmul(&self.tape.inputs[pos]);
                        return Ok(weights.with_data(g));
                    }
                    delta = delta.matmul(weights.data(), weights.shape()[1]);
                }
                LayerKind::Activation(act) => {
                    let pre = &self.tape.inputs[pos];
                    let post = &self.tape.inputs[pos + 1];
                    for ((d, &x), &y) in delta.data.iter_mut().zip(&pre.data).zip(&post.data) {
                        *d *= act.d1(x, y);
                    }
                }
                LayerKind::SoftmaxCrossEntropy => unreachable!("head is excluded from the range"),
            }
        }
        unreachable!("target is a dense layer inside the range")
    }

    fn hvp(&self, layer_id: &str, v: &Tensor) -> Result<Tensor> {
        let target = self.target(layer_id)?;
        let w = self.weights_at(target);
        if v.shape() != w.shape() {
            return Err(Error::Shape {
                layer: layer_id.to_string(),
                detail: format!("direction {:?} does not match weights {:?}", v.shape(), w.shape()),
            });
        }
        let head = self.head_pos();

        // Directional derivatives of the values entering each layer above the target.
        let mut r_inputs: Vec<Option<Mat>> = vec![None; head + 1];
        let mut r = self.tape.inputs[target].matmul_t(v.data(), w.shape()[0]);
        for pos in target + 1..=head {
            let next = match &self.model.layers()[pos].kind {
                LayerKind::Dense { weights, .. } => Some(r.matmul_t(weights.data(), weights.shape()[0])),
                LayerKind::Activation(act) => {
                    let pre = &self.tape.inputs[pos];
                    let post = &self.tape.inputs[pos + 1];
                    let data =
                        r.data.iter().zip(&pre.data).zip(&post.data).map(|((&rv, &x), &y)| rv * act.d1(x, y)).collect();
                    Some(Mat { rows: r.rows, cols: r.cols, data })
                }
                LayerKind::SoftmaxCrossEntropy => None,
            };
            match next {
                Some(n) => r_inputs[pos] = Some(std::mem::replace(&mut r, n)),
                None => r_inputs[pos] = Some(r.clone()),
            }
        }

        // R{∂L/∂z} = p ⊙ (Rz − ⟨p, Rz⟩) / n, with Rz_k − ⟨p, Rz⟩ written as
        // Σ_c p_c (Rz_k − Rz_c) to avoid cancellation.
        let rz = r_inputs[head].as_ref().expect("head reached");
        let c = rz.cols;
        let mut r_delta = Mat::zeros(rz.rows, c);
        for row in 0..rz.rows {
            let p = &self.probs[row];
            let rzr = rz.row(row);
            for k in 0..c {
                let centered: f64 = (0..c).map(|j| p[j] * (rzr[k] as f64 - rzr[j] as f64)).sum();
                r_delta.data[row * c + k] = (p[k] * centered / self.n as f64) as f32;
            }
        }
        let mut delta = self.dlogits.clone();

        for pos in (target..head).rev() {
            match &self.model.layers()[pos].kind {
                LayerKind::Dense { weights, .. } => {
                    if pos == target {
                        let hv = r_delta.t_matmul(&self.tape.inputs[pos]);
                        return Ok(w.with_data(hv));
                    }
                    let inn = weights.shape()[1];
                    r_delta = r_delta.matmul(weights.data(), inn);
                    delta = delta.matmul(weights.data(), inn);
                }
                LayerKind::Activation(act) => {
                    let pre = &self.tape.inputs[pos];
                    let post = &self.tape.inputs[pos + 1];
                    let r_pre = r_inputs[pos].as_ref().expect("filled by forward sweep");
                    for i in 0..delta.data.len() {
                        let (x, y) = (pre.data[i], post.data[i]);
                        let d1 = act.d1(x, y);
                        r_delta.data[i] = r_delta.data[i] * d1 + delta.data[i] * act.d2(x, y) * r_pre.data[i];
                        delta.data[i] *= d1;
                    }
                }
                LayerKind::SoftmaxCrossEntropy => unreachable!("head is excluded from the range"),
            }
        }
        unreachable!("target is a dense layer inside the range")
    }
}

/// `L = ½ Σ aᵢ wᵢ²` evaluated at a fixed point, exposed as a single layer.
#[derive(Debug, Clone)]
pub struct DiagonalQuadratic {
    pub layer_id: String,
    pub coeffs: Tensor,
    pub point: Tensor,
}

impl DiagonalQuadratic {
    pub fn new(layer_id: impl Into<String>, coeffs: Vec<f32>, point: Vec<f32>) -> Result<Self> {
        let coeffs = Tensor::from_vec(coeffs)?;
        let point = Tensor::from_vec(point)?;
        if coeffs.len() != point.len() {
            return Err(Error::InvalidTensor("coefficients and point differ in length".into()));
        }
        Ok(DiagonalQuadratic { layer_id: layer_id.into(), coeffs, point })
    }

    fn check(&self, layer_id: &str) -> Result<()> {
        if layer_id == self.layer_id {
            Ok(())
        } else {
            Err(Error::UnknownLayer(layer_id.to_string()))
        }
    }

    pub fn loss(&self) -> f64 {
        self.coeffs.data().iter().zip(self.point.data()).map(|(&a, &w)| 0.5 * a as f64 * (w as f64).powi(2)).sum()
    }
}

impl LayerObjective for DiagonalQuadratic {
    fn weight_shape(&self, layer_id: &str) -> Result<Vec<usize>> {
        self.check(layer_id)?;
        Ok(self.point.shape().to_vec())
    }

    fn gradient(&self, layer_id: &str) -> Result<Tensor> {
        self.check(layer_id)?;
        Ok(self.point.with_data(self.coeffs.data().iter().zip(self.point.data()).map(|(a, w)| a * w).collect()))
    }

    fn hvp(&self, layer_id: &str, v: &Tensor) -> Result<Tensor> {
        self.check(layer_id)?;
        if v.shape() != self.point.shape() {
            return Err(Error::Shape { layer: layer_id.to_string(), detail: "direction shape".into() });
        }
        Ok(v.with_data(self.coeffs.data().iter().zip(v.data()).map(|(a, x)| a * x).collect()))
    }
}

pub fn gradient(model: &ModelGraph, batch: &Batch, layer_id: &str) -> Result<Tensor> {
    NetworkObjective::new(model, batch)?.gradient(layer_id)
}

pub fn hvp(model: &ModelGraph, batch: &Batch, layer_id: &str, v: &Tensor) -> Result<Tensor> {
    NetworkObjective::new(model, batch)?.hvp(layer_id, v)
}

/// `Σₖ eₖᵀ H eₖ` over the layer's basis vectors. Intended as a reference
/// for the stochastic estimator; refuses layers above [`EXACT_TRACE_CAP`].
pub fn exact_layer_trace<O: LayerObjective + ?Sized>(obj: &O, layer_id: &str, exec: Exec) -> Result<f64> {
    let shape = obj.weight_shape(layer_id)?;
    let count: usize = shape.iter().product();
    if count > EXACT_TRACE_CAP {
        return Err(Error::SizeCap { layer: layer_id.to_string(), count, cap: EXACT_TRACE_CAP });
    }
    let diag = exec.try_map(count, |k| {
        let mut e = Tensor::zeros(shape.clone());
        e.data_mut()[k] = 1.0;
        Ok::<_, Error>(obj.hvp(layer_id, &e)?.data()[k] as f64)
    })?;
    Ok(diag.into_iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Layer};

    fn identity_model() -> ModelGraph {
        let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        ModelGraph::new(2, vec![Layer::dense("fc", w, None), Layer::head("head")]).unwrap()
    }

    fn one_hot_batch(label: usize) -> Batch {
        Batch::new(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap(), vec![label]).unwrap()
    }

    #[test]
    fn identity_dense_classifies_one_hot() {
        let m = identity_model();
        assert_eq!(forward(&m, &one_hot_batch(0)).unwrap().accuracy, 1.0);
        assert_eq!(forward(&m, &one_hot_batch(1)).unwrap().accuracy, 0.0);
    }

    #[test]
    fn argmax_ties_pick_lowest_class() {
        let w = Tensor::new(vec![2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let m = ModelGraph::new(2, vec![Layer::dense("fc", w, None), Layer::head("head")]).unwrap();
        assert_eq!(forward(&m, &one_hot_batch(0)).unwrap().accuracy, 1.0);
        assert_eq!(forward(&m, &one_hot_batch(1)).unwrap().accuracy, 0.0);
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let m = identity_model();
        let b = Batch::new(Tensor::zeros(vec![1, 3]), vec![0]).unwrap();
        match forward(&m, &b).unwrap_err() {
            Error::Shape { layer, .. } => assert_eq!(layer, "fc"),
            e => panic!("unexpected {e}"),
        }
        let bad_label = Batch::new(Tensor::zeros(vec![1, 2]), vec![5]).unwrap();
        assert!(forward(&m, &bad_label).is_err());
    }

    #[test]
    fn quadratic_head_derivatives() {
        let q = DiagonalQuadratic::new("w", vec![1.0, 2.0], vec![3.0, 4.0]).unwrap();
        assert_eq!(q.gradient("w").unwrap().data(), &[3.0, 8.0]);
        let at_min = DiagonalQuadratic::new("w", vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(at_min.gradient("w").unwrap().data(), &[0.0, 0.0]);
        let ones = Tensor::from_vec(vec![1.0, 1.0]).unwrap();
        assert_eq!(q.hvp("w", &ones).unwrap().data(), &[1.0, 2.0]);
        let zero = Tensor::from_vec(vec![0.0, 0.0]).unwrap();
        assert_eq!(q.hvp("w", &zero).unwrap().data(), &[0.0, 0.0]);
        let q3 = DiagonalQuadratic::new("w", vec![1.0, 2.0, 3.0], vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(exact_layer_trace(&q3, "w", Exec::Sequential).unwrap(), 6.0);
        assert!(q.gradient("other").is_err());
    }

    #[test]
    fn weightless_and_unknown_layers_are_rejected() {
        let w = Tensor::new(vec![2, 2], vec![1.0, 0.5, -0.5, 1.0]).unwrap();
        let m = ModelGraph::new(
            2,
            vec![Layer::dense("fc", w, None), Layer::activation("act", Activation::Tanh), Layer::head("head")],
        )
        .unwrap();
        let b = one_hot_batch(0);
        assert!(matches!(gradient(&m, &b, "act"), Err(Error::Weightless(_))));
        assert!(matches!(gradient(&m, &b, "nope"), Err(Error::UnknownLayer(_))));
        let wrong = Tensor::zeros(vec![3]);
        assert!(matches!(hvp(&m, &b, "fc", &wrong), Err(Error::Shape { .. })));
    }

    #[test]
    fn exact_trace_enforces_cap() {
        let q = DiagonalQuadratic::new("w", vec![1.0; EXACT_TRACE_CAP + 1], vec![0.0; EXACT_TRACE_CAP + 1]).unwrap();
        assert!(matches!(exact_layer_trace(&q, "w", Exec::Sequential), Err(Error::SizeCap { .. })));
    }
}
