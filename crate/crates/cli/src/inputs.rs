use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::Context;

use crate::UsageError;

const EXTENSIONS: [&str; 3] = ["png", "tif", "tiff"];

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

/// Expands a file, directory or glob pattern into a sorted list of images.
pub fn expand(pattern: &str) -> anyhow::Result<Vec<PathBuf>> {
    let path = Path::new(pattern);
    let mut out: Vec<PathBuf> = if path.is_dir() {
        std::fs::read_dir(path)
            .with_context(|| format!("cannot list {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect()
    } else if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        glob::glob(pattern)
            .map_err(|e| UsageError(format!("bad pattern {pattern:?}: {e}")))?
            .filter_map(Result::ok)
            .filter(|p| p.is_file())
            .collect()
    };
    out.sort();
    if out.is_empty() {
        return Err(UsageError(format!("no images match {pattern:?}")).into());
    }
    Ok(out)
}

/// File stem used as the image id.
pub fn image_id(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

pub fn check_unique_ids(paths: &[PathBuf]) -> anyhow::Result<()> {
    let mut seen = HashSet::new();
    for p in paths {
        if !seen.insert(image_id(p)) {
            return Err(UsageError(format!("two inputs share the id {:?}", image_id(p))).into());
        }
    }
    Ok(())
}
