use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Args;
use elgrid::synth::{render, suite, Scene, SceneSpec};

use crate::UsageError;

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true))]
pub struct SynthArgs {
    /// Scene description as JSON.
    #[arg(long, group = "source")]
    spec: Option<PathBuf>,
    /// Built-in suite: frontal, tilt-sweep or multi-module.
    #[arg(long, group = "source")]
    suite: Option<String>,
    /// Output directory; images go to `images/`, ground truth to `truth/`.
    #[arg(long)]
    out: PathBuf,
    /// Scenes to generate for suites with a variable size.
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, env = "EL_GRID_SEED", default_value_t = 0)]
    seed: u64,
}

fn scenes(args: &SynthArgs) -> anyhow::Result<Vec<Scene>> {
    if let Some(name) = &args.suite {
        return suite(name, args.count, args.seed).map_err(|e| UsageError(e.to_string()).into());
    }
    let path = args.spec.as_ref().expect("clap requires a source");
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let spec: SceneSpec =
        serde_json::from_str(&text).map_err(|e| UsageError(format!("invalid scene {}: {e}", path.display())))?;
    spec.validate().map_err(|e| UsageError(e.to_string()))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    Ok(vec![Scene {
        id,
        seed: args.seed,
        spec,
    }])
}

pub fn run(args: SynthArgs) -> anyhow::Result<ExitCode> {
    let scenes = scenes(&args)?;
    let (images, truth) = (args.out.join("images"), args.out.join("truth"));
    std::fs::create_dir_all(&images)?;
    std::fs::create_dir_all(&truth)?;
    for s in &scenes {
        let (img, gt) = render(&s.spec, s.seed)?;
        img.save(images.join(format!("{}.png", s.id)))?;
        let mut record = gt.annotation();
        record["id"] = s.id.clone().into();
        record["seed"] = s.seed.into();
        record["ground_truth"] = serde_json::to_value(&gt)?;
        record["spec"] = serde_json::to_value(&s.spec)?;
        let path = truth.join(format!("{}.json", s.id));
        std::fs::write(&path, serde_json::to_string_pretty(&record)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
        println!("{}  {}x{} px", s.id, s.spec.width, s.spec.height);
    }
    println!("{} scenes written to {}", scenes.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}
