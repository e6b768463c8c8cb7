use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ClipMode, TraceNormalization};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Hessian,
    Interlayer,
    Aug,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Hessian => "hessian",
            Metric::Interlayer => "interlayer",
            Metric::Aug => "aug",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hessian" => Ok(Metric::Hessian),
            "interlayer" => Ok(Metric::Interlayer),
            "aug" => Ok(Metric::Aug),
            _ => Err(Error::Config(format!("unknown metric `{s}` (expected hessian, interlayer or aug)"))),
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// `β = mean(e_hessian) / mean(e_interlayer)` and
/// `e_aug = e_hessian + β·e_interlayer`; `β = 0` when the inter-layer
/// scores are all zero.
pub fn combine(e_hessian: &[f64], e_interlayer: &[f64]) -> Result<(f64, Vec<f64>)> {
    if e_hessian.len() != e_interlayer.len() {
        return Err(Error::Config(format!(
            "{} hessian scores but {} inter-layer scores",
            e_hessian.len(),
            e_interlayer.len()
        )));
    }
    let mil = mean(e_interlayer);
    let beta = if mil > 0.0 { mean(e_hessian) / mil } else { 0.0 };
    let beta = if beta.is_finite() { beta } else { 0.0 };
    let aug = e_hessian.iter().zip(e_interlayer).map(|(h, i)| h + beta * i).collect();
    Ok((beta, aug))
}

/// Indices sorted by ascending score; ties keep their original order.
pub fn sensitivity_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub layer_ids: Vec<String>,
    pub e_hessian: Vec<f64>,
    pub e_interlayer: Vec<f64>,
    pub e_aug: Vec<f64>,
    pub beta: f64,
    pub metric_used: Metric,
    pub normalization: TraceNormalization,
    pub clip: ClipMode,
    /// Layer ids, least sensitive first, under `metric_used`.
    pub ordering: Vec<String>,
}

impl SensitivityReport {
    pub fn new(
        layer_ids: Vec<String>,
        e_hessian: Vec<f64>,
        e_interlayer: Vec<f64>,
        metric: Metric,
        normalization: TraceNormalization,
        clip: ClipMode,
    ) -> Result<Self> {
        if layer_ids.len() != e_hessian.len() {
            return Err(Error::Config("score count does not match layer count".into()));
        }
        let (beta, e_aug) = combine(&e_hessian, &e_interlayer)?;
        let mut r = SensitivityReport {
            layer_ids,
            e_hessian,
            e_interlayer,
            e_aug,
            beta,
            metric_used: metric,
            normalization,
            clip,
            ordering: vec![],
        };
        r.ordering = r.order(metric).into_iter().map(|i| r.layer_ids[i].clone()).collect();
        Ok(r)
    }

    pub fn scores(&self, metric: Metric) -> &[f64] {
        match metric {
            Metric::Hessian => &self.e_hessian,
            Metric::Interlayer => &self.e_interlayer,
            Metric::Aug => &self.e_aug,
        }
    }

    /// Weighted-layer indices, least sensitive first.
    pub fn order(&self, metric: Metric) -> Vec<usize> {
        sensitivity_order(self.scores(metric))
    }

    /// `layer_id,e_hessian,e_interlayer,e_aug,rank`, rows in layer order;
    /// rank 1 is the least sensitive layer under `metric_used`.
    pub fn to_csv(&self) -> String {
        let mut rank = vec![0; self.layer_ids.len()];
        for (r, i) in self.order(self.metric_used).into_iter().enumerate() {
            rank[i] = r + 1;
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer_id", "e_hessian", "e_interlayer", "e_aug", "rank"]).expect("in-memory write");
        for i in 0..self.layer_ids.len() {
            w.write_record([
                self.layer_ids[i].clone(),
                self.e_hessian[i].to_string(),
                self.e_interlayer[i].to_string(),
                self.e_aug[i].to_string(),
                rank[i].to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Rebuilds the scores from `sensitivity.csv`. `e_aug` is taken from the
    /// file and `beta` re-derived.
    pub fn from_csv(text: &str, metric: Metric) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let (mut ids, mut h, mut il, mut aug) = (vec![], vec![], vec![], vec![]);
        let num =
            |s: &str| s.parse::<f64>().map_err(|e| Error::Config(format!("bad number `{s}` in sensitivity.csv: {e}")));
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Config(format!("sensitivity.csv: {e}")))?;
            if rec.len() != 5 {
                return Err(Error::Config(format!("sensitivity.csv: expected 5 columns, got {}", rec.len())));
            }
            ids.push(rec[0].to_string());
            h.push(num(&rec[1])?);
            il.push(num(&rec[2])?);
            aug.push(num(&rec[3])?);
        }
        let (beta, _) = combine(&h, &il)?;
        let mut r = SensitivityReport {
            layer_ids: ids,
            e_hessian: h,
            e_interlayer: il,
            e_aug: aug,
            beta,
            metric_used: metric,
            normalization: TraceNormalization::default(),
            clip: ClipMode::default(),
            ordering: vec![],
        };
        r.ordering = r.order(metric).into_iter().map(|i| r.layer_ids[i].clone()).collect();
        Ok(r)
    }
}
