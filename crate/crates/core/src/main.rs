use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use mpq::container::{load_model, write_atomic};
use mpq::costmodel::synth_cost_table;
use mpq::pipeline::demo::DemoSpec;
use mpq::pipeline::{write_demo, Pipeline, PipelineConfig};
use mpq::sensitivity::Metric;
use mpq::{Error, Exec, Result};

/// Mixed-precision post-training quantization.
#[derive(Parser)]
#[command(name = "mpq", version)]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer sensitivity: sensitivity.csv, sensitivity.json, degradation_matrix.csv.
    Analyze(PipelineArgs),
    /// Bit allocation per accuracy target: final_config.json, search_trace.json.
    Search(PipelineArgs),
    /// Quantization scales, plus quantized weights for each searched config.
    Quantize(PipelineArgs),
    /// Size and latency report: report.json, report.md, frontier.csv.
    Report(PipelineArgs),
    /// analyze, search, quantize and report in sequence.
    Run(PipelineArgs),
    /// Cost table utilities.
    Costtable {
        #[command(subcommand)]
        command: CostCommand,
    },
    /// Writes the synthetic Gaussian-cluster task and its deep tanh MLP.
    Demo(DemoArgs),
}

#[derive(Subcommand)]
enum CostCommand {
    /// Synthetic table: MACs * max(bits)/16 * us_per_mac + 1 us per kernel.
    Gen {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "16,8,4")]
        palette: Vec<u8>,
        #[arg(long, default_value_t = 0.01)]
        us_per_mac: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 2048)]
    samples: usize,
    #[arg(long, default_value_t = 12)]
    depth: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long, default_value_t = 1.5)]
    separation: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
}

fn serde_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON file whose fields override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    percentile: Option<f64>,
    #[arg(long)]
    n_hutchinson: Option<usize>,
    /// Calibration rows used for Hessian estimates (0 = all).
    #[arg(long)]
    hessian_samples: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    palette: Option<Vec<u8>>,
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<f64>>,
    /// hessian, interlayer or aug; comma separated for several.
    #[arg(long, value_delimiter = ',')]
    metric: Option<Vec<Metric>>,
    /// bisection or progressive.
    #[arg(long, value_parser = serde_enum::<mpq::search::Algorithm>)]
    search: Option<mpq::search::Algorithm>,
    /// `synthetic` or a cost-table CSV.
    #[arg(long)]
    cost_table: Option<String>,
    #[arg(long)]
    us_per_mac: Option<f64>,
    #[arg(long)]
    max_evals: Option<usize>,
    /// Bootstrap resamples of the calibration set for error bars.
    #[arg(long)]
    trials: Option<usize>,
    /// per-term or final-sum.
    #[arg(long, value_parser = serde_enum::<mpq::sensitivity::ClipMode>)]
    clip: Option<mpq::sensitivity::ClipMode>,
    /// raw or per-parameter.
    #[arg(long, value_parser = serde_enum::<mpq::sensitivity::TraceNormalization>)]
    normalization: Option<mpq::sensitivity::TraceNormalization>,
    /// cached or always.
    #[arg(long, value_parser = serde_enum::<mpq::search::Revalidation>)]
    revalidation: Option<mpq::search::Revalidation>,
    /// case or nearest.
    #[arg(long, value_parser = serde_enum::<mpq::quantizer::Rounding>)]
    rounding: Option<mpq::quantizer::Rounding>,
    /// symmetric or hardware-int.
    #[arg(long, value_parser = serde_enum::<mpq::quantizer::GridMode>)]
    grid: Option<mpq::quantizer::GridMode>,
    /// per-channel or per-tensor.
    #[arg(long, value_parser = serde_enum::<mpq::quantizer::Granularity>)]
    granularity: Option<mpq::quantizer::Granularity>,
    /// Keep activations in float.
    #[arg(long)]
    weights_only: bool,
    /// Record stage wall times in run_manifest.json (breaks byte determinism).
    #[arg(long)]
    record_timings: bool,
    /// Disable the worker pool.
    #[arg(long)]
    sequential: bool,
}

impl PipelineArgs {
    fn resolve(self) -> Result<(PipelineConfig, Exec)> {
        let mut c = PipelineConfig::default();
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        set!(
            model => model_path, calib => calib_path, out => output_dir, seed => seed,
            percentile => percentile, n_hutchinson => n_hutchinson, hessian_samples => hessian_samples,
            palette => bit_palette, targets => accuracy_targets, metric => metrics, search => search,
            cost_table => cost_table, us_per_mac => us_per_mac, max_evals => max_evals, trials => trials,
            clip => clip, normalization => normalization, revalidation => revalidation,
            rounding => rounding, grid => grid, granularity => granularity,
        );
        c.quantize_activations &= !self.weights_only;
        c.record_timings |= self.record_timings;
        if let Some(path) = &self.config {
            c = c.overlay_file(path)?;
        }
        let exec = if self.sequential { Exec::Sequential } else { Exec::default() };
        Ok((c, exec))
    }
}

#[derive(Clone, Copy)]
enum Stage {
    Analyze,
    Search,
    Quantize,
    Report,
}

fn run_stages(args: PipelineArgs, stages: &[Stage]) -> Result<()> {
    let (cfg, exec) = args.resolve()?;
    let mut p = Pipeline::open(cfg, exec)?;
    let mut result = Ok(());
    for stage in stages {
        result = match stage {
            Stage::Analyze => p.analyze().map(drop),
            Stage::Search => p.search().map(drop),
            Stage::Quantize => p.quantize().map(drop),
            Stage::Report => p.report().map(drop),
        };
        if result.is_err() {
            break;
        }
    }
    match result {
        Ok(()) | Err(Error::BudgetExceeded(_)) => {
            p.finish()?;
            result
        }
        Err(e) => Err(e),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze(a) => run_stages(a, &[Stage::Analyze]),
        Command::Search(a) => run_stages(a, &[Stage::Search]),
        Command::Quantize(a) => run_stages(a, &[Stage::Quantize]),
        Command::Report(a) => run_stages(a, &[Stage::Report]),
        Command::Run(a) => run_stages(a, &[Stage::Analyze, Stage::Search, Stage::Quantize, Stage::Report]),
        Command::Costtable { command: CostCommand::Gen { model, palette, us_per_mac, out } } => {
            let model = load_model(&model)?;
            let table = synth_cost_table(&model, &palette, us_per_mac)?;
            write_atomic(&out, table.to_csv().as_bytes())
        }
        Command::Demo(d) => {
            let spec = DemoSpec {
                seed: d.seed,
                samples: d.samples,
                depth: d.depth,
                width: d.width,
                separation: d.separation,
                ..DemoSpec::default()
            };
            if d.batch_size == 0 {
                return Err(Error::Config("batch size must be positive".into()));
            }
            write_demo(&spec, &d.model, &d.calib, d.batch_size)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
