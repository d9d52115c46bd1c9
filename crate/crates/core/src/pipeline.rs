//! End-to-end detection: module, initial homography, crossings, refit.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, DetectorConfig};
use crate::crossing::{locate_crossings, refine_crossings, CrossingError, CrossingSet};
use crate::detection::{detect_module, DetectionError, ModuleDetection};
use crate::geometry::{dlt, reprojection_error, GeometryError, Homography, ModelGrid, Point};
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Input,
    Module,
    Initial,
    Patches,
    Ransac,
    Cells,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Input => "input",
            Stage::Module => "module",
            Stage::Initial => "initial",
            Stage::Patches => "patches",
            Stage::Ransac => "ransac",
            Stage::Cells => "cells",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("input: {0}")]
    Config(#[from] ConfigError),
    #[error("input: {0}")]
    InvalidInput(String),
    #[error("module: {0}")]
    Module(#[from] DetectionError),
    #[error("initial: {0}")]
    Initial(GeometryError),
    #[error("ransac: {0}")]
    Crossings(#[from] CrossingError),
    #[error("cells: {0}")]
    Cells(String),
}

impl PipelineError {
    pub fn stage(&self) -> Stage {
        match self {
            PipelineError::Config(_) | PipelineError::InvalidInput(_) => Stage::Input,
            PipelineError::Module(_) => Stage::Module,
            PipelineError::Initial(_) => Stage::Initial,
            PipelineError::Crossings(_) => Stage::Ransac,
            PipelineError::Cells(_) => Stage::Cells,
        }
    }
}

/// Wall-clock time per stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub module: f64,
    pub patches: f64,
    pub ransac: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub cols: usize,
    pub rows: usize,
    /// Image corners matched to model corners `(0,0), (N,0), (N,M), (0,M)`.
    pub corners: [Point; 4],
    pub module: ModuleDetection,
    pub h0: Homography,
    pub h: Homography,
    pub crossings: CrossingSet,
    pub timings: Timings,
    pub config: DetectorConfig,
}

impl DetectionResult {
    /// Normalized reprojection error of `h` over the consensus set.
    pub fn refined_error(&self) -> f64 {
        reprojection_error(&self.h, &self.crossings.consensus(), self.cols, self.rows)
    }

    pub fn initial_error(&self) -> f64 {
        reprojection_error(&self.h0, &self.crossings.consensus(), self.cols, self.rows)
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Runs the full detector on a module with `cols x rows` cells.
///
/// `cols` must be the long side. Corners are assigned so that the first
/// image edge, a long side, runs along the model `x` axis; for square
/// modules the top-left corner comes first.
pub fn detect(img: &GrayImage, cols: usize, rows: usize, cfg: &DetectorConfig) -> Result<DetectionResult, PipelineError> {
    let start = Instant::now();
    cfg.validate()?;
    if rows == 0 || cols < rows {
        return Err(PipelineError::InvalidInput(format!(
            "expected cols >= rows >= 1, got {cols} cols and {rows} rows"
        )));
    }
    let grid = ModelGrid::new(cols, rows).map_err(PipelineError::Initial)?;

    let t = Instant::now();
    let module = detect_module(img, cfg)?;
    let module_ms = ms(t);

    let corners = if cols == rows { module.quad } else { module.corners };
    let h0 = dlt(&grid.corners(), &corners).map_err(PipelineError::Initial)?;

    let t = Instant::now();
    let detections = locate_crossings(img, &h0, &grid, cfg);
    let patches_ms = ms(t);

    let t = Instant::now();
    let mut crossings = refine_crossings(&grid, &detections, &h0, cfg)?;
    let consensus = crossings.consensus();
    if reprojection_error(&h0, &consensus, cols, rows) < reprojection_error(&crossings.homography, &consensus, cols, rows) {
        crossings.homography = h0;
        for e in &mut crossings.entries {
            e.residual = e
                .image
                .and_then(|p| h0.project(e.model).ok().map(|q| (q - p).norm()));
        }
    }
    let ransac_ms = ms(t);

    Ok(DetectionResult {
        cols,
        rows,
        corners,
        module,
        h0,
        h: crossings.homography,
        crossings,
        timings: Timings {
            module: module_ms,
            patches: patches_ms,
            ransac: ransac_ms,
            total: ms(start),
        },
        config: *cfg,
    })
}

/// Rectified `cell_px x cell_px` image of every cell, row by row.
pub fn extract_cells(
    img: &GrayImage,
    h: &Homography,
    cols: usize,
    rows: usize,
    cell_px: usize,
) -> Result<Vec<GrayImage>, PipelineError> {
    if cell_px < 2 {
        return Err(PipelineError::Cells(format!("cell size must be at least 2 px, got {cell_px}")));
    }
    let step = 1.0 / cell_px as f64;
    let mut cells = Vec::with_capacity(cols * rows);
    for j in 0..rows {
        for i in 0..cols {
            let mut data = Vec::with_capacity(cell_px * cell_px);
            for b in 0..cell_px {
                for a in 0..cell_px {
                    let m = Point::new(
                        i as f64 + (a as f64 + 0.5) * step,
                        j as f64 + (b as f64 + 0.5) * step,
                    );
                    let p = h
                        .project(m)
                        .map_err(|e| PipelineError::Cells(e.to_string()))?;
                    data.push(img.bilinear(p.x, p.y) as f32);
                }
            }
            cells.push(GrayImage::new(cell_px, cell_px, data).map_err(|e| PipelineError::Cells(e.to_string()))?);
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_input() {
        let img = GrayImage::filled(64, 64, 0.5).unwrap();
        let cfg = DetectorConfig::default();
        let e = detect(&img, 6, 10, &cfg).unwrap_err();
        assert_eq!(e.stage(), Stage::Input);
        let bad = DetectorConfig {
            sigma_factor: -1.0,
            ..cfg
        };
        assert_eq!(detect(&img, 10, 6, &bad).unwrap_err().stage(), Stage::Input);
        assert_eq!(detect(&img, 10, 6, &cfg).unwrap_err().stage(), Stage::Module);
    }

    #[test]
    fn cell_extraction_counts() {
        let img = GrayImage::filled(100, 100, 0.5).unwrap();
        let h = Homography::identity();
        assert_eq!(extract_cells(&img, &h, 10, 6, 8).unwrap().len(), 60);
        assert!(extract_cells(&img, &h, 10, 6, 0).is_err());
    }
}
