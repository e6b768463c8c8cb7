use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::network::forward_batches;
use crate::par::Exec;
use crate::quantizer::{apply::quantized_weights, CalibrationSet, QuantOptions, Scales};
use crate::tensor::Tensor;

/// Loss of the model with a subset of weighted layers quantized.
pub trait PairLossEvaluator: Sync {
    fn layer_ids(&self) -> Vec<String>;
    /// `quantized` holds weighted-layer indices; empty means the float model.
    fn loss(&self, quantized: &[usize]) -> Result<f64>;
}

/// Quantizes weights only (activations stay in float) and reports the mean
/// calibration loss.
pub struct WeightQuantLoss<'a> {
    model: &'a ModelGraph,
    calib: &'a CalibrationSet,
    quantized: Vec<Tensor>,
    exec: Exec,
}

impl<'a> WeightQuantLoss<'a> {
    pub fn new(
        model: &'a ModelGraph,
        calib: &'a CalibrationSet,
        bits: u8,
        scales: &Scales,
        opts: &QuantOptions,
        exec: Exec,
    ) -> Result<Self> {
        let quantized = model
            .weighted_ids()
            .into_iter()
            .map(|id| quantized_weights(model, id, bits, scales, opts))
            .collect::<Result<_>>()?;
        Ok(WeightQuantLoss { model, calib, quantized, exec })
    }
}

impl PairLossEvaluator for WeightQuantLoss<'_> {
    fn layer_ids(&self) -> Vec<String> {
        self.model.weighted_ids().into_iter().map(String::from).collect()
    }

    fn loss(&self, quantized: &[usize]) -> Result<f64> {
        let mut view = self.model.clone();
        for &i in quantized {
            view.set_weights(i, self.quantized[i].clone());
        }
        Ok(forward_batches(&view, self.calib.batches(), self.exec)?.loss)
    }
}

/// Counts calls to the wrapped evaluator.
pub struct CountingEvaluator<E> {
    inner: E,
    calls: AtomicUsize,
}

impl<E> CountingEvaluator<E> {
    pub fn new(inner: E) -> Self {
        CountingEvaluator { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<E: PairLossEvaluator> PairLossEvaluator for CountingEvaluator<E> {
    fn layer_ids(&self) -> Vec<String> {
        self.inner.layer_ids()
    }

    fn loss(&self, quantized: &[usize]) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.loss(quantized)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationMatrix {
    pub layer_ids: Vec<String>,
    pub bits_used: u8,
    pub baseline_loss: f64,
    /// Loss with only layer `i` quantized.
    pub single_losses: Vec<f64>,
    /// `excess[i][j] = L(i, j) − max(L(i), L(j))`; zero on the diagonal.
    pub excess: Vec<Vec<f64>>,
}

impl DegradationMatrix {
    pub fn len(&self) -> usize {
        self.layer_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layer_ids.is_empty()
    }

    /// Dense CSV with layer ids as header row and first column.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["layer_id".to_string()];
        header.extend(self.layer_ids.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (id, row) in self.layer_ids.iter().zip(&self.excess) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Evaluates the float model, every single-layer quantization and every
/// pair, `l(l−1)/2 + l + 1` evaluations in all. Evaluations are
/// independent and run under `exec`; the matrix is assembled in a fixed
/// order.
pub fn interlayer_matrix<E: PairLossEvaluator + ?Sized>(eval: &E, bits: u8, exec: Exec) -> Result<DegradationMatrix> {
    let ids = eval.layer_ids();
    let l = ids.len();
    if l < 2 {
        return Err(Error::Config(format!("pairwise degradation needs at least two weighted layers, got {l}")));
    }
    let mut tasks: Vec<Vec<usize>> = vec![vec![]];
    tasks.extend((0..l).map(|i| vec![i]));
    for i in 0..l {
        for j in i + 1..l {
            tasks.push(vec![i, j]);
        }
    }
    let losses = exec.try_map(tasks.len(), |t| {
        let set = &tasks[t];
        eval.loss(set).map_err(|e| {
            let name = |k: Option<&usize>| k.map(|&k| ids[k].clone()).unwrap_or_else(|| "-".into());
            Error::PairEvaluation { first: name(set.first()), second: name(set.get(1)), source: Box::new(e) }
        })
    })?;
    if let Some(i) = losses.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidModel(format!("non-finite loss for quantized set {:?}", tasks[i])));
    }

    let baseline_loss = losses[0];
    let single_losses = losses[1..=l].to_vec();
    let mut excess = vec![vec![0.0; l]; l];
    let mut k = l + 1;
    for i in 0..l {
        for j in i + 1..l {
            let d = losses[k] - single_losses[i].max(single_losses[j]);
            excess[i][j] = d;
            excess[j][i] = d;
            k += 1;
        }
    }
    Ok(DegradationMatrix { layer_ids: ids, bits_used: bits, baseline_loss, single_losses, excess })
}

/// How negative excess degradation is discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipMode {
    /// `Σⱼ max(D[i][j], 0)`
    #[default]
    PerTerm,
    /// `max(Σⱼ D[i][j], 0)`
    FinalSum,
}

pub fn interlayer_score(d: &DegradationMatrix, clip: ClipMode) -> Vec<f64> {
    d.excess
        .iter()
        .map(|row| match clip {
            ClipMode::PerTerm => row.iter().map(|v| v.max(0.0)).sum(),
            ClipMode::FinalSum => row.iter().sum::<f64>().max(0.0),
        })
        .collect()
}
