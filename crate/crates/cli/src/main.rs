use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use elgrid::DetectorConfig;

mod bench;
mod detect;
mod eval;
mod inputs;
mod synth;

#[derive(Debug, Parser)]
#[command(name = "elgrid", version, about = "Locate solar modules and their cell lattice in EL images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect the module and cell crossings in one or more images.
    Detect(detect::DetectArgs),
    /// Score detections against annotated module polygons.
    Eval(eval::EvalArgs),
    /// Time the detector stage by stage.
    Bench(bench::BenchArgs),
    /// Render synthetic modules with ground truth.
    Synth(synth::SynthArgs),
}

/// Detector parameters. Unset flags keep the value from `--config`, or the
/// built-in default.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON file with a full or partial detector configuration.
    #[arg(long)]
    config: Option<std::path::PathBuf>,
    #[arg(long)]
    sigma_factor: Option<f64>,
    #[arg(long)]
    module_threshold: Option<f64>,
    #[arg(long)]
    patch_threshold: Option<f64>,
    #[arg(long)]
    inlier_fraction: Option<f64>,
    #[arg(long)]
    ransac_iterations: Option<usize>,
    #[arg(long)]
    min_inlier_fraction: Option<f64>,
    #[arg(long)]
    patch_px: Option<usize>,
    /// RANSAC seed.
    #[arg(long, env = "EL_GRID_SEED")]
    seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> anyhow::Result<DetectorConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| UsageError(format!("invalid configuration {}: {e}", path.display())))?
            }
            None => DetectorConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(
            sigma_factor,
            module_threshold,
            patch_threshold,
            inlier_fraction,
            ransac_iterations,
            min_inlier_fraction,
            patch_px,
            seed
        );
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}

/// Bad invocation that clap cannot catch by itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn thread_pool(threads: Option<usize>) -> anyhow::Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Detect(a) => detect::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Bench(a) => bench::run(a),
        Command::Synth(a) => synth::run(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
