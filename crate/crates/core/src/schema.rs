//! Serialized result files.
//!
//! Coordinates are in pixels, zero-based, x rightward and y downward.
//! Homographies are 9 row-major reals.

use serde::{Deserialize, Serialize};

use crate::config::DetectorConfig;
use crate::pipeline::{DetectionResult, PipelineError, Stage, Timings};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CrossingRecord {
    Hit {
        i: usize,
        j: usize,
        x: f64,
        y: f64,
        inlier: bool,
        residual: f64,
    },
    Miss {
        i: usize,
        j: usize,
        miss: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub schema_version: u32,
    pub image: String,
    pub rows: usize,
    pub cols: usize,
    pub corners: [[f64; 2]; 4],
    pub h0: [f64; 9],
    pub h: [f64; 9],
    pub crossings: Vec<CrossingRecord>,
    pub timings_ms: Timings,
    pub config: DetectorConfig,
}

impl ResultFile {
    /// With `timings` off every timing is written as zero, which makes the
    /// file a pure function of image, grid and configuration.
    pub fn new(image: impl Into<String>, r: &DetectionResult, timings: bool) -> Self {
        let crossings = r
            .crossings
            .entries
            .iter()
            .map(|e| match e.image {
                Some(p) => CrossingRecord::Hit {
                    i: e.i,
                    j: e.j,
                    x: p.x,
                    y: p.y,
                    inlier: e.inlier,
                    residual: e.residual.unwrap_or(f64::NAN),
                },
                None => CrossingRecord::Miss {
                    i: e.i,
                    j: e.j,
                    miss: true,
                },
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            image: image.into(),
            rows: r.rows,
            cols: r.cols,
            corners: r.corners.map(|p| [p.x, p.y]),
            h0: r.h0.to_row_major(),
            h: r.h.to_row_major(),
            crossings,
            timings_ms: if timings { r.timings } else { Timings::default() },
            config: r.config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureFile {
    pub schema_version: u32,
    pub image: String,
    pub rows: usize,
    pub cols: usize,
    pub error: ErrorRecord,
}

impl FailureFile {
    pub fn new(image: impl Into<String>, cols: usize, rows: usize, err: &PipelineError) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            image: image.into(),
            rows,
            cols,
            error: ErrorRecord {
                stage: err.stage(),
                message: err.to_string(),
            },
        }
    }
}

/// Either kind of per-image output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OutputFile {
    Success(Box<ResultFile>),
    Failure(FailureFile),
}

impl OutputFile {
    pub fn image(&self) -> &str {
        match self {
            OutputFile::Success(r) => &r.image,
            OutputFile::Failure(f) => &f.image,
        }
    }

    pub fn corners(&self) -> Option<[[f64; 2]; 4]> {
        match self {
            OutputFile::Success(r) => Some(r.corners),
            OutputFile::Failure(_) => None,
        }
    }
}
