use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::Args;
use elgrid::eval::{default_thresholds, load_annotation, recall_curve, EvalRecord};
use elgrid::schema::OutputFile;
use elgrid::Point;
use serde::Serialize;

use crate::UsageError;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of detection result files.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of annotation files named `<id>.json`.
    #[arg(long)]
    truth: PathBuf,
    /// CSV with one row per image. Defaults to `<pred>/eval.csv`.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Row<'a> {
    image: &'a str,
    detected: bool,
    iou: f64,
}

fn json_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"))
        .collect();
    out.sort();
    Ok(out)
}

fn load_predictions(dir: &Path) -> anyhow::Result<BTreeMap<String, Option<Vec<Point>>>> {
    let mut out = BTreeMap::new();
    for path in json_files(dir)? {
        let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        let Ok(file) = serde_json::from_str::<OutputFile>(&text) else {
            log::warn!("skipping {}: not a result file", path.display());
            continue;
        };
        let corners = file
            .corners()
            .map(|c| c.iter().map(|&[x, y]| Point::new(x, y)).collect());
        if out.insert(file.image().to_string(), corners).is_some() {
            anyhow::bail!("duplicate result for image {:?}", file.image());
        }
    }
    if out.is_empty() {
        return Err(UsageError(format!("no result files in {}", dir.display())).into());
    }
    Ok(out)
}

pub fn run(args: EvalArgs) -> anyhow::Result<ExitCode> {
    let preds = load_predictions(&args.pred)?;
    let truth_ids: Vec<String> = json_files(&args.truth)?
        .iter()
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    let missing: Vec<&String> = preds.keys().filter(|id| !truth_ids.contains(id)).collect();
    if !missing.is_empty() {
        anyhow::bail!("no annotation for {missing:?}");
    }
    let unscored: Vec<&String> = truth_ids.iter().filter(|id| !preds.contains_key(*id)).collect();
    if !unscored.is_empty() {
        anyhow::bail!("no result for annotated images {unscored:?}");
    }

    let mut records = Vec::with_capacity(preds.len());
    for (id, detected) in &preds {
        let truth = load_annotation(args.truth.join(format!("{id}.json")))?;
        records.push(EvalRecord::new(id.clone(), detected.as_deref(), &truth.points())?);
    }
    let curve = recall_curve(&records, &default_thresholds())?;

    let csv_path = args.csv.unwrap_or_else(|| args.pred.join("eval.csv"));
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("cannot write {}", csv_path.display()))?;
    for r in &records {
        w.serialize(Row {
            image: &r.id,
            detected: r.detected.is_some(),
            iou: r.iou,
        })?;
    }
    w.flush()?;

    println!("{:<24} {:>8}", "image", "IoU");
    for r in &records {
        match r.detected {
            Some(_) => println!("{:<24} {:>8.4}", r.id, r.iou),
            None => println!("{:<24} {:>8}", r.id, "miss"),
        }
    }
    println!();
    for t in [0.5, 0.7, 0.9] {
        println!("recall@{t:.1}  {:.4}", curve.recall_at(t).expect("threshold on the grid"));
    }
    println!("AUC         {:.4}", curve.auc);
    Ok(ExitCode::SUCCESS)
}
