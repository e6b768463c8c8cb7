//! Artifact-producing stages shared by the command line tool and the
//! end-to-end tests. Every artifact lives under `output_dir` with a fixed
//! name; a stage whose inputs are already on disk reads them instead of
//! recomputing them.

mod config;
pub mod demo;
mod manifest;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use config::{PipelineConfig, SYNTHETIC};
pub use manifest::{hash_tree, RunManifest, MANIFEST_FILE};

use crate::container::{load_calibration, load_model, read_json, save_model, write_atomic, write_json};
use crate::costmodel::{model_latency, pareto_indices, synth_cost_table, CostReport, CostTable};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::network::NetworkObjective;
use crate::par::Exec;
use crate::quantizer::{apply_config, compute_scales, CalibrationSet, QuantConfig, Scales};
use crate::rng;
use crate::search::{Algorithm, CalibrationEvaluator, ConfigEvaluator, SearchTrace};
use crate::sensitivity::{
    hessian_scores, interlayer_matrix, interlayer_score, Metric, SensitivityReport, WeightQuantLoss,
};

pub const SENSITIVITY_CSV: &str = "sensitivity.csv";
pub const SENSITIVITY_JSON: &str = "sensitivity.json";
pub const DEGRADATION_CSV: &str = "degradation_matrix.csv";
pub const SCALES_JSON: &str = "scales.json";
pub const FINAL_CONFIG_JSON: &str = "final_config.json";
pub const SEARCH_TRACE_JSON: &str = "search_trace.json";
pub const TRIALS_JSON: &str = "trials.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const FRONTIER_CSV: &str = "frontier.csv";
pub const COST_TABLE_CSV: &str = "cost_table.csv";
pub const QUANTIZED_DIR: &str = "quantized";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub target: f64,
    pub metric: Metric,
    pub search: Algorithm,
    pub accuracy: f64,
    pub relative_accuracy: f64,
    pub evaluations: usize,
    /// Nothing could be quantized, or the evaluation budget ran out.
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub config: QuantConfig,
}

impl SearchResult {
    pub fn label(&self) -> String {
        format!("{}-{}", self.metric, self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalConfigs {
    pub baseline_accuracy: f64,
    pub bit_palette: Vec<u8>,
    pub results: Vec<SearchResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub target: f64,
    pub metric: Metric,
    /// Layer ids, least sensitive first.
    pub ordering: Vec<String>,
    pub trace: SearchTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub target: f64,
    pub metric: Metric,
    pub latency_ms_mean: f64,
    pub latency_ms_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub latency_ms: Vec<f64>,
    pub accuracy: Vec<f64>,
}

/// Mean and sample standard deviation.
fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub exec: Exec,
    model: ModelGraph,
    calib: CalibrationSet,
    stages: Vec<&'static str>,
    timings: BTreeMap<String, f64>,
}

impl Pipeline {
    /// Validates the configuration and loads the model and calibration data.
    pub fn open(cfg: PipelineConfig, exec: Exec) -> Result<Self> {
        cfg.validate()?;
        let model = load_model(&cfg.model_path)?;
        let calib = load_calibration(&cfg.calib_path)?;
        let batch = &calib.batches()[0];
        let manifest = cfg.calib_path.join("manifest.json");
        if batch.dim() != model.input_dim() {
            return Err(Error::data(
                &manifest,
                format!("calibration inputs have {} features, model expects {}", batch.dim(), model.input_dim()),
            ));
        }
        if let Some(&bad) = calib.batches().iter().flat_map(|b| b.labels()).find(|&&l| l >= model.n_classes()) {
            return Err(Error::data(
                &manifest,
                format!("label {bad} outside the model's {} classes", model.n_classes()),
            ));
        }
        std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
        Ok(Pipeline { cfg, exec, model, calib, stages: vec![], timings: BTreeMap::new() })
    }

    pub fn model(&self) -> &ModelGraph {
        &self.model
    }

    pub fn calibration(&self) -> &CalibrationSet {
        &self.calib
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        write_atomic(&self.path(name), text.as_bytes())
    }

    fn timed<T>(&mut self, stage: &'static str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        log::info!("stage {stage}");
        let out = f(self)?;
        self.timings.insert(stage.to_string(), start.elapsed().as_secs_f64() * 1e3);
        if !self.stages.contains(&stage) {
            self.stages.push(stage);
        }
        Ok(out)
    }

    /// Hessian scores on the first `hessian_samples` calibration rows and
    /// the pairwise degradation matrix at the highest quantized width.
    pub fn analyze(&mut self) -> Result<SensitivityReport> {
        self.timed("analyze", |p| {
            let cfg = &p.cfg;
            let all = p.calib.to_batch();
            let n = if cfg.hessian_samples == 0 { all.len() } else { cfg.hessian_samples.min(all.len()) };
            let obj = NetworkObjective::new(&p.model, &all.slice(0, n))?;
            let ids = p.model.weighted_ids();
            let e_hessian = hessian_scores(&obj, &ids, cfg.n_hutchinson, cfg.seed, cfg.normalization, p.exec)?;

            let scales = Scales::weights_only(&p.model, cfg.granularity);
            let eval = WeightQuantLoss::new(
                &p.model,
                &p.calib,
                cfg.calibration_bits(),
                &scales,
                &cfg.quant_options(),
                p.exec,
            )?;
            let matrix = interlayer_matrix(&eval, cfg.calibration_bits(), p.exec)?;
            let e_interlayer = interlayer_score(&matrix, cfg.clip);

            let report = SensitivityReport::new(
                ids.iter().map(|s| s.to_string()).collect(),
                e_hessian,
                e_interlayer,
                cfg.metrics[0],
                cfg.normalization,
                cfg.clip,
            )?;
            p.write_text(SENSITIVITY_CSV, &report.to_csv())?;
            write_json(&p.path(SENSITIVITY_JSON), &report)?;
            p.write_text(DEGRADATION_CSV, &matrix.to_csv())?;
            log::info!("beta = {}", report.beta);
            Ok(report)
        })
    }

    fn sensitivity(&mut self) -> Result<SensitivityReport> {
        let path = self.path(SENSITIVITY_JSON);
        if path.exists() {
            let r: SensitivityReport = read_json(&path)?;
            let ids: Vec<&str> = r.layer_ids.iter().map(String::as_str).collect();
            if ids != self.model.weighted_ids() {
                return Err(Error::data(&path, "layer ids do not match the model"));
            }
            return Ok(r);
        }
        self.analyze()
    }

    /// Weight scales and percentile activation scales.
    pub fn compute_scales(&self) -> Result<Scales> {
        let cfg = &self.cfg;
        compute_scales(
            &self.model,
            &self.calib,
            cfg.calibration_bits(),
            cfg.percentile,
            cfg.granularity,
            &cfg.quant_options(),
            self.exec,
        )
    }

    fn scales(&mut self) -> Result<Scales> {
        let path = self.path(SCALES_JSON);
        if path.exists() {
            return read_json(&path);
        }
        let s = self.compute_scales()?;
        write_json(&path, &s)?;
        Ok(s)
    }

    /// Writes `scales.json`; when search results exist, also exports each
    /// configuration's quantized weights under `quantized/<metric>-<target>/`.
    pub fn quantize(&mut self) -> Result<Scales> {
        self.timed("quantize", |p| {
            let scales = p.compute_scales()?;
            write_json(&p.path(SCALES_JSON), &scales)?;
            let finals = p.path(FINAL_CONFIG_JSON);
            if finals.exists() {
                let finals: FinalConfigs = read_json(&finals)?;
                for r in &finals.results {
                    let dir = p.path(QUANTIZED_DIR).join(r.label());
                    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    let view = apply_config(&p.model, &r.config, &scales, &p.cfg.quant_options())?;
                    save_model(&view, &dir)?;
                    write_json(&dir.join("config.json"), &r.config)?;
                }
            }
            Ok(scales)
        })
    }

    fn cost_table(&self) -> Result<CostTable> {
        if self.cfg.cost_table == SYNTHETIC {
            return synth_cost_table(&self.model, &self.cfg.bit_palette, self.cfg.us_per_mac);
        }
        let path = Path::new(&self.cfg.cost_table);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        CostTable::from_csv(&text).map_err(|e| Error::data(path, e.to_string()))
    }

    /// One search per (metric, target). Infeasible targets yield the baseline
    /// configuration with a warning. A spent evaluation budget is reported
    /// after all artifacts are written.
    pub fn search(&mut self) -> Result<FinalConfigs> {
        let sens = self.sensitivity()?;
        let scales = self.scales()?;
        let table = if self.cfg.trials > 0 { Some(self.cost_table()?) } else { None };
        self.timed("search", |p| {
            let cfg = p.cfg.clone();
            let eval = CalibrationEvaluator {
                model: &p.model,
                calib: &p.calib,
                scales: &scales,
                opts: cfg.quant_options(),
                exec: p.exec,
            };
            let baseline_accuracy = eval.accuracy(&vec![cfg.bit_palette[0]; p.model.weighted_count()])?;
            let mut results = Vec::new();
            let mut traces = Vec::new();
            let mut trials = Vec::new();
            let mut exhausted = false;
            for &metric in &cfg.metrics {
                let ordering = sens.order(metric);
                let ordering_ids: Vec<String> = ordering.iter().map(|&i| sens.layer_ids[i].clone()).collect();
                for &target in &cfg.accuracy_targets {
                    let spec = cfg.search_spec(target, metric);
                    let out = cfg.search.run(&eval, &ordering, &spec)?;
                    let mut warning = None;
                    if out.trace.budget_exceeded {
                        exhausted = true;
                        warning = Some(format!("evaluation budget of {} exhausted; partial result", cfg.max_evals));
                    } else if !out.quantizes_anything() {
                        warning = Some(format!("no layer can be quantized at target {target}; baseline kept"));
                    }
                    if let Some(w) = &warning {
                        log::warn!("{metric} @ {target}: {w}");
                    }
                    results.push(SearchResult {
                        target,
                        metric,
                        search: cfg.search,
                        accuracy: out.accuracy,
                        relative_accuracy: out.accuracy / baseline_accuracy,
                        evaluations: out.trace.steps.len(),
                        flagged: warning.is_some(),
                        warning,
                        config: QuantConfig::from_bits(&p.model, &out.bits)?,
                    });
                    traces.push(TraceRecord { target, metric, ordering: ordering_ids.clone(), trace: out.trace });
                    if let Some(table) = &table {
                        trials.push(p.trials(&scales, table, &ordering, target, metric)?);
                    }
                }
            }
            let finals = FinalConfigs { baseline_accuracy, bit_palette: cfg.bit_palette.clone(), results };
            write_json(&p.path(FINAL_CONFIG_JSON), &finals)?;
            write_json(&p.path(SEARCH_TRACE_JSON), &serde_json::json!({ "traces": traces }))?;
            if !trials.is_empty() {
                write_json(&p.path(TRIALS_JSON), &trials)?;
            }
            if exhausted {
                return Err(Error::BudgetExceeded(cfg.max_evals));
            }
            Ok(finals)
        })
    }

    /// Reruns one search on bootstrap resamples of the calibration set.
    fn trials(
        &self,
        scales: &Scales,
        table: &CostTable,
        ordering: &[usize],
        target: f64,
        metric: Metric,
    ) -> Result<TrialSummary> {
        let all = self.calib.to_batch();
        let batch_size = self.calib.batches()[0].len();
        let mut latency_ms = Vec::new();
        let mut accuracy = Vec::new();
        for t in 0..self.cfg.trials {
            let mut r = rng::stream(self.cfg.seed, "trial", t as u64);
            let idx: Vec<usize> = (0..all.len()).map(|_| r.random_range(0..all.len())).collect();
            let calib = CalibrationSet::from_batch(&all.gather(&idx), batch_size)?;
            let eval = CalibrationEvaluator {
                model: &self.model,
                calib: &calib,
                scales,
                opts: self.cfg.quant_options(),
                exec: self.exec,
            };
            let out = self.cfg.search.run(&eval, ordering, &self.cfg.search_spec(target, metric))?;
            let config = QuantConfig::from_bits(&self.model, &out.bits)?;
            latency_ms.push(model_latency(&self.model, &config, table)? / 1e3);
            accuracy.push(out.accuracy);
        }
        let (latency_ms_mean, latency_ms_std) = mean_std(&latency_ms);
        let (accuracy_mean, accuracy_std) = mean_std(&accuracy);
        Ok(TrialSummary {
            target,
            metric,
            latency_ms_mean,
            latency_ms_std,
            accuracy_mean,
            accuracy_std,
            latency_ms,
            accuracy,
        })
    }

    /// Size, latency and accuracy tables from `final_config.json`.
    pub fn report(&mut self) -> Result<CostReport> {
        self.timed("report", |p| {
            let path = p.path(FINAL_CONFIG_JSON);
            if !path.exists() {
                return Err(Error::data(&path, "missing search artifact; run the search stage first"));
            }
            let finals: FinalConfigs = read_json(&path)?;
            let table = p.cost_table()?;
            if p.cfg.cost_table == SYNTHETIC {
                p.write_text(COST_TABLE_CSV, &table.to_csv())?;
            }
            let mut report = CostReport::new(&p.model, &table, finals.baseline_accuracy)?;
            for r in &finals.results {
                report.add(
                    &p.model,
                    &table,
                    &r.config,
                    r.accuracy,
                    (Some(r.target), Some(r.metric.to_string()), Some(r.search.to_string())),
                )?;
            }
            let mut md = report.to_markdown();
            let trials_path = p.path(TRIALS_JSON);
            if trials_path.exists() {
                let trials: Vec<TrialSummary> = read_json(&trials_path)?;
                md.push_str("\n| Config | Trials | Latency (ms) | Accuracy |\n|---|---:|---:|---:|\n");
                for t in &trials {
                    let _ = writeln!(
                        md,
                        "| {} @ {} | {} | {:.4} ± {:.4} | {:.4} ± {:.4} |",
                        t.metric,
                        t.target,
                        t.latency_ms.len(),
                        t.latency_ms_mean,
                        t.latency_ms_std,
                        t.accuracy_mean,
                        t.accuracy_std
                    );
                }
            }
            write_json(&p.path(REPORT_JSON), &report)?;
            p.write_text(REPORT_MD, &md)?;
            p.write_text(FRONTIER_CSV, &frontier_csv(&report))?;
            Ok(report)
        })
    }

    /// Writes `run_manifest.json` covering every artifact now on disk.
    pub fn finish(&self) -> Result<RunManifest> {
        manifest::write_manifest(&self.cfg, &self.stages, &self.timings)
    }
}

/// `label,target,metric,search,accuracy,latency_ms,on_frontier`, baseline first.
pub fn frontier_csv(report: &CostReport) -> String {
    let rows: Vec<_> = std::iter::once(&report.baseline).chain(&report.configs).collect();
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.accuracy_abs, r.latency_ms)).collect();
    let front = pareto_indices(&points);
    let mut s = String::from("label,target,metric,search,accuracy,latency_ms,on_frontier\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.label,
            r.target.map(|t| t.to_string()).unwrap_or_default(),
            r.metric.as_deref().unwrap_or(""),
            r.search.as_deref().unwrap_or(""),
            r.accuracy_abs,
            r.latency_ms,
            front.contains(&i)
        );
    }
    s
}

/// Writes the demo model and calibration set.
pub fn write_demo(spec: &demo::DemoSpec, model_dir: &Path, calib_dir: &Path, batch_size: usize) -> Result<()> {
    let model = demo::demo_mlp(spec)?;
    let data = demo::gaussian_clusters(spec)?;
    for d in [model_dir, calib_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    save_model(&model, model_dir)?;
    crate::container::save_calibration(&data, spec.classes, batch_size, calib_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
