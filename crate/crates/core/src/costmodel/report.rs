use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{layer_latencies, model_size, CostTable};
use crate::error::Result;
use crate::model::ModelGraph;
use crate::quantizer::QuantConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer_id: String,
    pub weight_bits: u8,
    pub act_bits: u8,
    pub weight_bytes: f64,
    pub latency_us: f64,
}

/// One row of the report; relative values are fractions of the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigReport {
    pub label: String,
    pub target: Option<f64>,
    pub metric: Option<String>,
    pub search: Option<String>,
    pub accuracy_abs: f64,
    pub accuracy_rel: f64,
    pub weight_mb: f64,
    pub weight_rel: f64,
    pub total_mb: f64,
    pub total_rel: f64,
    pub latency_ms: f64,
    pub latency_rel: f64,
    pub precision: String,
    pub layers: Vec<LayerCost>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub baseline: ConfigReport,
    pub configs: Vec<ConfigReport>,
    pub notes: Vec<String>,
}

const MB: f64 = 1e6;

fn precision_label(config: &QuantConfig) -> String {
    let mut w: Vec<u8> = config.iter().map(|(_, b)| b.weight_bits).collect();
    let mut a: Vec<u8> = config.iter().map(|(_, b)| b.act_bits).collect();
    for v in [&mut w, &mut a] {
        v.sort_unstable_by(|x, y| y.cmp(x));
        v.dedup();
    }
    let join = |v: &[u8]| v.iter().map(u8::to_string).collect::<Vec<_>>().join("/");
    format!("{} | {}", join(&w), join(&a))
}

fn row(
    label: &str,
    model: &ModelGraph,
    config: &QuantConfig,
    accuracy: f64,
    table: &CostTable,
    base: Option<&ConfigReport>,
) -> Result<ConfigReport> {
    let size = model_size(model, config)?;
    let lat = layer_latencies(model, config, table)?;
    let total_us: f64 = lat.iter().sum();
    let layers = config
        .iter()
        .zip(&lat)
        .map(|((id, b), &l)| {
            let n = model.layer_weights(id).map(|t| t.len()).unwrap_or(0) as f64;
            LayerCost {
                layer_id: id.to_string(),
                weight_bits: b.weight_bits,
                act_bits: b.act_bits,
                weight_bytes: n * b.weight_bits as f64 / 8.0,
                latency_us: l,
            }
        })
        .collect();
    let weight_mb = size.weight_bytes() / MB;
    let total_mb = size.total_bytes() / MB;
    let latency_ms = total_us / 1e3;
    let rel = |v: f64, b: fn(&ConfigReport) -> f64| base.map_or(1.0, |r| v / b(r));
    Ok(ConfigReport {
        label: label.to_string(),
        target: None,
        metric: None,
        search: None,
        accuracy_abs: accuracy,
        accuracy_rel: rel(accuracy, |r| r.accuracy_abs),
        weight_mb,
        weight_rel: rel(weight_mb, |r| r.weight_mb),
        total_mb,
        total_rel: rel(total_mb, |r| r.total_mb),
        latency_ms,
        latency_rel: rel(latency_ms, |r| r.latency_ms),
        precision: precision_label(config),
        layers,
    })
}

impl CostReport {
    pub fn new(model: &ModelGraph, table: &CostTable, baseline_accuracy: f64) -> Result<Self> {
        let baseline = row("baseline", model, &QuantConfig::baseline(model), baseline_accuracy, table, None)?;
        Ok(CostReport {
            baseline,
            configs: vec![],
            notes: vec![
                "Sizes count weights at their assigned width; biases stay at 16 bits and are included only in the total columns.".into(),
                "Relative size uses weight bytes; MB = 10^6 bytes.".into(),
                "Latency sums per-layer kernel lookups from the cost table and ignores operator fusion.".into(),
            ],
        })
    }

    pub fn add(
        &mut self,
        model: &ModelGraph,
        table: &CostTable,
        config: &QuantConfig,
        accuracy: f64,
        label: (Option<f64>, Option<String>, Option<String>),
    ) -> Result<&ConfigReport> {
        let (target, metric, search) = label;
        let name = match (&metric, target) {
            (Some(m), Some(t)) => format!("{m} @ {t}"),
            (Some(m), None) => m.clone(),
            _ => format!("config {}", self.configs.len() + 1),
        };
        let mut r = row(&name, model, config, accuracy, table, Some(&self.baseline))?;
        r.target = target;
        r.metric = metric;
        r.search = search;
        self.configs.push(r);
        Ok(self.configs.last().expect("just pushed"))
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str("| Config | Accuracy | Relative | Size (MB) | Relative | Latency (ms) | Relative | W | A |\n");
        s.push_str("|---|---:|---:|---:|---:|---:|---:|---|---|\n");
        for r in std::iter::once(&self.baseline).chain(&self.configs) {
            let (w, a) = r.precision.split_once(" | ").unwrap_or((&r.precision, ""));
            let _ = writeln!(
                s,
                "| {} | {:.4} | {:.2}% | {:.6} | {:.2}% | {:.6} | {:.2}% | {} | {} |",
                r.label,
                r.accuracy_abs,
                r.accuracy_rel * 100.0,
                r.weight_mb,
                r.weight_rel * 100.0,
                r.latency_ms,
                r.latency_rel * 100.0,
                w,
                a
            );
        }
        s.push('\n');
        for n in &self.notes {
            let _ = writeln!(s, "- {n}");
        }
        s
    }
}
