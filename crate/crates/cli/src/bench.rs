use std::process::ExitCode;
use std::time::Instant;

use clap::Args;
use elgrid::pipeline::Timings;
use elgrid::{detect, load_image};

use crate::inputs::{expand, image_id};
use crate::{thread_pool, ConfigArgs, UsageError};

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Image file, directory or glob pattern.
    #[arg(long)]
    input: String,
    #[arg(long, default_value_t = 6)]
    rows: usize,
    #[arg(long, default_value_t = 10)]
    cols: usize,
    /// Runs per image; the median is reported.
    #[arg(long, default_value_t = 5)]
    repeat: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Exclude image loading from the end-to-end time.
    #[arg(long)]
    raw: bool,
    /// Per-image budget for the end-to-end median, in milliseconds.
    #[arg(long, default_value_t = 500.0)]
    budget_ms: f64,
    #[command(flatten)]
    config: ConfigArgs,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Stats {
    module: f64,
    patches: f64,
    ransac: f64,
    total: f64,
    spread: Option<(f64, f64)>,
}

fn summarize(runs: &[(Timings, f64)]) -> Stats {
    let pick = |f: &dyn Fn(&(Timings, f64)) -> f64| median(&mut runs.iter().map(f).collect::<Vec<_>>());
    let totals: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let spread = (runs.len() > 1).then(|| {
        (
            totals.iter().copied().fold(f64::INFINITY, f64::min),
            totals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    });
    Stats {
        module: pick(&|r| r.0.module),
        patches: pick(&|r| r.0.patches),
        ransac: pick(&|r| r.0.ransac),
        total: pick(&|r| r.1),
        spread,
    }
}

pub fn run(args: BenchArgs) -> anyhow::Result<ExitCode> {
    if args.repeat == 0 {
        return Err(UsageError("--repeat must be at least 1".into()).into());
    }
    let cfg = args.config.resolve()?;
    let paths = expand(&args.input)?;
    let pool = thread_pool(Some(args.threads))?;

    println!(
        "{:<24} {:>9} {:>9} {:>9} {:>9} {:>8}",
        "image", "module", "patches", "ransac", "total", "module%"
    );
    let mut totals = Vec::with_capacity(paths.len());
    let mut failures = 0;
    for path in &paths {
        let id = image_id(path);
        let mut runs = Vec::with_capacity(args.repeat);
        let mut failed = None;
        for _ in 0..args.repeat {
            let start = Instant::now();
            let img = load_image(path)?;
            let outcome = pool.install(|| detect(&img, args.cols, args.rows, &cfg));
            let end_to_end = start.elapsed().as_secs_f64() * 1e3;
            match outcome {
                Ok(r) => runs.push((r.timings, if args.raw { r.timings.total } else { end_to_end })),
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = failed {
            failures += 1;
            println!("{id:<24} FAILED  {}: {e}", e.stage());
            continue;
        }
        let s = summarize(&runs);
        print!(
            "{id:<24} {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>7.1}%",
            s.module,
            s.patches,
            s.ransac,
            s.total,
            100.0 * s.module / s.total
        );
        match s.spread {
            Some((lo, hi)) => println!("  [{lo:.2} .. {hi:.2}]"),
            None => println!(),
        }
        totals.push(s.total);
    }
    if totals.is_empty() {
        println!("no image was processed successfully");
        return Ok(ExitCode::from(1));
    }
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    let verdict = if mean <= args.budget_ms { "within" } else { "OVER" };
    println!(
        "{} images, {} threads, {} time: mean {mean:.2} ms per image, {verdict} the {:.0} ms budget",
        totals.len(),
        args.threads,
        if args.raw { "raw" } else { "end-to-end" },
        args.budget_ms
    );
    Ok(if failures == 0 && mean <= args.budget_ms {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
