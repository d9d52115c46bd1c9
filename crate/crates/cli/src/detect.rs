use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::Args;
use elgrid::overlay::render_overlay;
use elgrid::schema::{FailureFile, OutputFile, ResultFile};
use elgrid::{detect, extract_cells, load_image, DetectionResult, DetectorConfig, PipelineError};
use rayon::prelude::*;
use serde::Serialize;

use crate::inputs::{check_unique_ids, expand, image_id};
use crate::{thread_pool, ConfigArgs, UsageError};

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Image file, directory or glob pattern.
    #[arg(long)]
    input: String,
    /// Cells per module column (the short side).
    #[arg(long)]
    rows: usize,
    /// Cells per module row (the long side).
    #[arg(long)]
    cols: usize,
    /// Output directory for result files.
    #[arg(long)]
    out: PathBuf,
    /// Also write `<id>_overlay.png` with the detection drawn on top.
    #[arg(long)]
    overlay: bool,
    /// Print the batch summary as JSON instead of a table.
    #[arg(long)]
    json: bool,
    /// Also write rectified cells of this size to `<id>_cells/`.
    #[arg(long)]
    cells_px: Option<usize>,
    /// Worker threads; 1 processes images one at a time on one core.
    #[arg(long)]
    threads: Option<usize>,
    /// Write zero timings so output depends only on the input.
    #[arg(long)]
    no_timings: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Serialize)]
struct ImageStatus {
    image: String,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    inliers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    ms: f64,
}

#[derive(Debug, Serialize)]
struct Summary {
    images: usize,
    failed: usize,
    mean_ms: f64,
    results: Vec<ImageStatus>,
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn write_extras(args: &DetectArgs, id: &str, img: &elgrid::GrayImage, r: &DetectionResult) -> anyhow::Result<()> {
    if args.overlay {
        let path = args.out.join(format!("{id}_overlay.png"));
        render_overlay(img, r)
            .save(&path)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    if let Some(px) = args.cells_px {
        let dir = args.out.join(format!("{id}_cells"));
        std::fs::create_dir_all(&dir)?;
        let cells = extract_cells(img, &r.h, r.cols, r.rows, px)?;
        for (k, cell) in cells.iter().enumerate() {
            let (i, j) = (k % r.cols, k / r.cols);
            cell.save(dir.join(format!("cell_{j:02}_{i:02}.png")))?;
        }
    }
    Ok(())
}

fn process(args: &DetectArgs, cfg: &DetectorConfig, path: &Path) -> anyhow::Result<ImageStatus> {
    let id = image_id(path);
    let start = Instant::now();
    let outcome = load_image(path)
        .map_err(|e| PipelineError::InvalidInput(e.to_string()))
        .and_then(|img| detect(&img, args.cols, args.rows, cfg).map(|r| (img, r)));
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let json = args.out.join(format!("{id}.json"));
    match outcome {
        Ok((img, r)) => {
            write_json(&json, &OutputFile::Success(Box::new(ResultFile::new(&id, &r, !args.no_timings))))?;
            write_extras(args, &id, &img, &r)?;
            Ok(ImageStatus {
                image: id,
                ok: true,
                inliers: Some(r.crossings.inliers()),
                stage: None,
                error: None,
                ms,
            })
        }
        Err(e) => {
            write_json(&json, &OutputFile::Failure(FailureFile::new(&id, args.cols, args.rows, &e)))?;
            Ok(ImageStatus {
                image: id,
                ok: false,
                inliers: None,
                stage: Some(e.stage().to_string()),
                error: Some(e.to_string()),
                ms,
            })
        }
    }
}

pub fn run(args: DetectArgs) -> anyhow::Result<ExitCode> {
    if args.rows == 0 || args.cols < args.rows {
        return Err(UsageError(format!(
            "expected --cols >= --rows >= 1, got {} and {}",
            args.cols, args.rows
        ))
        .into());
    }
    if args.cells_px.is_some_and(|p| p < 2) {
        return Err(UsageError("--cells-px must be at least 2".into()).into());
    }
    let cfg = args.config.resolve()?;
    let paths = expand(&args.input)?;
    check_unique_ids(&paths)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;

    let pool = thread_pool(args.threads)?;
    let results: Vec<ImageStatus> = pool.install(|| {
        paths
            .par_iter()
            .map(|p| process(&args, &cfg, p))
            .collect::<anyhow::Result<_>>()
    })?;

    let failed = results.iter().filter(|r| !r.ok).count();
    let summary = Summary {
        images: results.len(),
        failed,
        mean_ms: results.iter().map(|r| r.ms).sum::<f64>() / results.len() as f64,
        results,
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        for r in &summary.results {
            match (&r.stage, &r.error) {
                (Some(stage), Some(error)) => println!("{:<24} FAILED  {stage}: {error}", r.image),
                _ => println!(
                    "{:<24} ok      {:>3} inliers  {:>8.1} ms",
                    r.image,
                    r.inliers.unwrap_or(0),
                    r.ms
                ),
            }
        }
        println!(
            "{} images, {} failed, mean {:.1} ms per image",
            summary.images, summary.failed, summary.mean_ms
        );
    }
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
