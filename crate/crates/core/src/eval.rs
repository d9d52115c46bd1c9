//! Detection quality: polygon IoU and recall over IoU thresholds.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;

/// Samples per unit length, per axis, for the rasterized IoU fallback.
pub const RASTER_DENSITY: f64 = 4.0;
/// Upper bound on raster samples per axis.
const RASTER_MAX: usize = 4096;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(&'static str),
    #[error("no records to evaluate")]
    Empty,
    #[error("cannot read annotation {path}: {message}")]
    Annotation { path: String, message: String },
}

fn signed_area(p: &[Point]) -> f64 {
    let n = p.len();
    0.5 * (0..n)
        .map(|k| {
            let (a, b) = (p[k], p[(k + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
}

pub fn polygon_area(p: &[Point]) -> f64 {
    signed_area(p).abs()
}

fn check(p: &[Point]) -> Result<(), EvalError> {
    if p.len() < 3 {
        return Err(EvalError::DegeneratePolygon("fewer than three vertices"));
    }
    if p.iter().any(|q| !q.x.is_finite() || !q.y.is_finite()) {
        return Err(EvalError::DegeneratePolygon("non-finite vertex"));
    }
    if !(polygon_area(p) > 1e-12) {
        return Err(EvalError::DegeneratePolygon("zero area"));
    }
    Ok(())
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

pub fn is_convex(p: &[Point]) -> bool {
    let n = p.len();
    let (mut pos, mut neg) = (false, false);
    for k in 0..n {
        let c = cross(p[k], p[(k + 1) % n], p[(k + 2) % n]);
        pos |= c > 0.0;
        neg |= c < 0.0;
    }
    !(pos && neg)
}

fn counter_clockwise(p: &[Point]) -> Vec<Point> {
    let mut v = p.to_vec();
    if signed_area(&v) < 0.0 {
        v.reverse();
    }
    v
}

/// Sutherland-Hodgman clip of `subject` by the convex `clip` polygon; both
/// counter-clockwise.
fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut out = subject.to_vec();
    let n = clip.len();
    for k in 0..n {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[k], clip[(k + 1) % n]);
        let input = std::mem::take(&mut out);
        let m = input.len();
        for e in 0..m {
            let (p, q) = (input[e], input[(e + 1) % m]);
            let (dp, dq) = (cross(a, b, p), cross(a, b, q));
            if dp >= 0.0 {
                out.push(p);
            }
            if (dp >= 0.0) != (dq >= 0.0) {
                let t = dp / (dp - dq);
                out.push(p + (q - p) * t);
            }
        }
    }
    out
}

fn contains(p: &[Point], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = p.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (p[i], p[j]);
        if (a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// IoU by point sampling over the joint bounding box.
pub fn raster_iou(a: &[Point], b: &[Point]) -> f64 {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in a.iter().chain(b) {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let nx = (((x1 - x0) * RASTER_DENSITY).ceil() as usize).clamp(16, RASTER_MAX);
    let ny = (((y1 - y0) * RASTER_DENSITY).ceil() as usize).clamp(16, RASTER_MAX);
    let (mut inter, mut union) = (0usize, 0usize);
    for r in 0..ny {
        let y = y0 + (y1 - y0) * (r as f64 + 0.5) / ny as f64;
        for c in 0..nx {
            let x = x0 + (x1 - x0) * (c as f64 + 0.5) / nx as f64;
            let (ia, ib) = (contains(a, x, y), contains(b, x, y));
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Intersection over union of two simple polygons.
///
/// Exact by convex clipping when both are convex, otherwise rasterized at
/// [`RASTER_DENSITY`] samples per unit.
pub fn polygon_iou(a: &[Point], b: &[Point]) -> Result<f64, EvalError> {
    check(a)?;
    check(b)?;
    if !(is_convex(a) && is_convex(b)) {
        return Ok(raster_iou(a, b));
    }
    let (a, b) = (counter_clockwise(a), counter_clockwise(b));
    let inter = polygon_area(&clip_convex(&a, &b));
    let union = polygon_area(&a) + polygon_area(&b) - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    /// `None` for a miss.
    pub detected: Option<Vec<[f64; 2]>>,
    pub truth: Vec<[f64; 2]>,
    pub iou: f64,
}

fn points(v: &[[f64; 2]]) -> Vec<Point> {
    v.iter().map(|&[x, y]| Point::new(x, y)).collect()
}

impl EvalRecord {
    pub fn new(id: impl Into<String>, detected: Option<&[Point]>, truth: &[Point]) -> Result<Self, EvalError> {
        check(truth)?;
        let iou = match detected {
            // A degenerate detection overlaps nothing.
            Some(d) => polygon_iou(d, truth).unwrap_or(0.0),
            None => 0.0,
        };
        Ok(Self {
            id: id.into(),
            detected: detected.map(|d| d.iter().map(|p| [p.x, p.y]).collect()),
            truth: truth.iter().map(|p| [p.x, p.y]).collect(),
            iou,
        })
    }

    pub fn truth_points(&self) -> Vec<Point> {
        points(&self.truth)
    }
}

/// IoU thresholds `0.5, 0.505, ..., 1.0`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=100).map(|k| (100 + k) as f64 / 200.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallCurve {
    pub thresholds: Vec<f64>,
    pub recall: Vec<f64>,
    /// Trapezoidal area under recall over the threshold axis.
    pub auc: f64,
}

impl RecallCurve {
    pub fn recall_at(&self, t: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&x| (x - t).abs() < 1e-12)
            .map(|k| self.recall[k])
    }
}

pub fn recall(records: &[EvalRecord], t: f64) -> f64 {
    records.iter().filter(|r| r.iou >= t).count() as f64 / records.len() as f64
}

/// Recall at every threshold and its trapezoidal integral.
pub fn recall_curve(records: &[EvalRecord], thresholds: &[f64]) -> Result<RecallCurve, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let recall: Vec<f64> = thresholds.iter().map(|&t| recall(records, t)).collect();
    let auc = thresholds
        .windows(2)
        .zip(recall.windows(2))
        .map(|(t, r)| 0.5 * (t[1] - t[0]) * (r[0] + r[1]))
        .sum();
    Ok(RecallCurve {
        thresholds: thresholds.to_vec(),
        recall,
        auc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub polygon: Vec<[f64; 2]>,
}

impl Annotation {
    pub fn points(&self) -> Vec<Point> {
        points(&self.polygon)
    }
}

pub fn load_annotation(path: impl AsRef<Path>) -> Result<Annotation, EvalError> {
    let path = path.as_ref();
    let err = |message: String| EvalError::Annotation {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}
