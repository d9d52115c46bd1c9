//! Local refinement of cell crossing points on rectified patches.

use rayon::prelude::*;
use thiserror::Error;

use crate::config::DetectorConfig;
use crate::detection::{find_extrema, ExtremumKind};
use crate::geometry::{Correspondence, GeometryError, Homography, ModelGrid, Point};
use crate::image::{profiles, GrayImage, ImageError};
use crate::ransac::{ransac_refit, RansacFit};
use crate::signal::{smoothed_gradient, Signal1D};

/// Patches with more than this share of samples off-image are rejected.
pub const MAX_CLAMPED_FRACTION: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrossingError {
    #[error("patch around model point ({x}, {y}) lies {fraction:.0}% outside the image", fraction = .fraction * 100.0)]
    PatchOutsideImage { x: f64, y: f64, fraction: f64 },
    #[error("patch size {0} is too small")]
    InvalidPatchSize(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Approximate cell size in the image: the length of the projected cell
/// diagonal from `(i, j)` to `(i + 1, j + 1)`.
pub fn cell_size(h: &Homography, i: usize, j: usize) -> Result<f64, GeometryError> {
    let a = h.project(Point::new(i as f64, j as f64))?;
    let b = h.project(Point::new(i as f64 + 1.0, j as f64 + 1.0))?;
    Ok((a - b).norm())
}

/// A rectified sampling of one cell-sized model square around a lattice point.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: GrayImage,
    pub center_model: Point,
    /// Share of samples that fell outside the image and were clamped.
    pub clamped_fraction: f64,
}

impl Patch {
    pub fn size(&self) -> usize {
        self.pixels.width()
    }

    /// Model coordinates of patch position `(u, v)` (in samples).
    pub fn to_model(&self, u: f64, v: f64) -> Point {
        let p = self.size() as f64;
        Point::new(
            self.center_model.x - 0.5 + (u + 0.5) / p,
            self.center_model.y - 0.5 + (v + 0.5) / p,
        )
    }

    /// Patch position of a model point; the center maps to `((P-1)/2, (P-1)/2)`.
    pub fn model_to_patch(&self, m: Point) -> (f64, f64) {
        let p = self.size() as f64;
        (
            (m.x - self.center_model.x + 0.5) * p - 0.5,
            (m.y - self.center_model.y + 0.5) * p - 0.5,
        )
    }
}

/// Samples the unit model square centered on `m` through `h` onto a
/// `patch_px` square grid.
pub fn extract_patch(
    img: &GrayImage,
    h: &Homography,
    m: Point,
    cfg: &DetectorConfig,
) -> Result<Patch, CrossingError> {
    let p = cfg.patch_px;
    if p < 2 {
        return Err(CrossingError::InvalidPatchSize(p));
    }
    let step = 1.0 / p as f64;
    let mut data = Vec::with_capacity(p * p);
    let mut clamped = 0usize;
    for b in 0..p {
        let y = m.y - 0.5 + (b as f64 + 0.5) * step;
        for a in 0..p {
            let x = m.x - 0.5 + (a as f64 + 0.5) * step;
            let v = match h.project(Point::new(x, y)) {
                Ok(q) => {
                    if !img.contains(q.x, q.y) {
                        clamped += 1;
                    }
                    img.bilinear(q.x, q.y)
                }
                Err(_) => {
                    clamped += 1;
                    0.0
                }
            };
            data.push(v as f32);
        }
    }
    let fraction = clamped as f64 / (p * p) as f64;
    if fraction > MAX_CLAMPED_FRACTION {
        return Err(CrossingError::PatchOutsideImage {
            x: m.x,
            y: m.y,
            fraction,
        });
    }
    let pixels = GrayImage::new(p, p, data).map_err(|e| match e {
        ImageError::TooSmall { .. } | ImageError::ZeroArea { .. } => CrossingError::InvalidPatchSize(p),
        _ => unreachable!("bilinear samples stay in range"),
    })?;
    Ok(Patch {
        pixels,
        center_model: m,
        clamped_fraction: fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisCrossing {
    Ridge,
    EdgeLeading,
    EdgeTrailing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossingType {
    pub x_axis: AxisCrossing,
    pub y_axis: AxisCrossing,
}

fn axis_type(k: usize, n: usize) -> AxisCrossing {
    if k == 0 {
        AxisCrossing::EdgeLeading
    } else if k == n {
        AxisCrossing::EdgeTrailing
    } else {
        AxisCrossing::Ridge
    }
}

/// Edge or ridge per axis, from the lattice position alone.
pub fn classify_crossing(i: usize, j: usize, cols: usize, rows: usize) -> CrossingType {
    CrossingType {
        x_axis: axis_type(i, cols),
        y_axis: axis_type(j, rows),
    }
}

/// Center of the dark line through the patch, in samples.
///
/// Every minimum directly followed by a maximum is a dark-line candidate.
/// With an odd number of candidates the middle one is the cell boundary and
/// its position is the gradient zero crossing between the two extrema. An
/// even count cannot be resolved and yields `None`.
pub fn detect_ridge(grad: &Signal1D, cfg: &DetectorConfig) -> Option<f64> {
    let extrema = find_extrema(grad, cfg.patch_threshold);
    let pairs: Vec<(usize, usize)> = extrema
        .windows(2)
        .filter(|w| w[0].kind == ExtremumKind::Minimum && w[1].kind == ExtremumKind::Maximum)
        .map(|w| (w[0].index, w[1].index))
        .collect();
    if pairs.len().is_multiple_of(2) {
        return None;
    }
    let (lo, hi) = pairs[pairs.len() / 2];
    zero_crossing(grad.values(), lo, hi)
}

/// Upward zero crossing of `g` in `[lo, hi]` nearest the middle of the range.
fn zero_crossing(g: &[f64], lo: usize, hi: usize) -> Option<f64> {
    let mid = 0.5 * (lo + hi) as f64;
    (lo..hi)
        .filter(|&n| g[n] <= 0.0 && g[n + 1] > 0.0)
        .map(|n| n as f64 + g[n] / (g[n] - g[n + 1]))
        .min_by(|a, b| (a - mid).abs().total_cmp(&(b - mid).abs()))
}

/// Position of the module edge through the patch, in samples.
///
/// Leading (left/top) edges are maxima, trailing edges minima. The extremum
/// closest to the patch center wins; its position is refined by a parabola
/// through the neighboring gradient samples.
pub fn detect_edge(grad: &Signal1D, side: AxisCrossing, cfg: &DetectorConfig) -> Option<f64> {
    let kind = match side {
        AxisCrossing::EdgeLeading => ExtremumKind::Maximum,
        AxisCrossing::EdgeTrailing => ExtremumKind::Minimum,
        AxisCrossing::Ridge => return None,
    };
    let center = 0.5 * (grad.len() as f64 - 1.0);
    let best = find_extrema(grad, cfg.patch_threshold)
        .into_iter()
        .filter(|e| e.kind == kind)
        .min_by(|a, b| {
            (a.index as f64 - center)
                .abs()
                .total_cmp(&(b.index as f64 - center).abs())
        })?;
    Some(best.index as f64 + parabolic_offset(grad.values(), best.index))
}

fn parabolic_offset(g: &[f64], k: usize) -> f64 {
    if k == 0 || k + 1 >= g.len() {
        return 0.0;
    }
    let (a, b, c) = (g[k - 1], g[k], g[k + 1]);
    let denom = a - 2.0 * b + c;
    if denom.abs() < 1e-300 {
        return 0.0;
    }
    (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
}

fn locate(grad: &Signal1D, side: AxisCrossing, cfg: &DetectorConfig) -> Option<f64> {
    match side {
        AxisCrossing::Ridge => detect_ridge(grad, cfg),
        edge => detect_edge(grad, edge, cfg),
    }
}

/// Crossing position in patch samples, or `None` if either axis misses.
pub fn detect_crossing_in_patch(
    patch: &Patch,
    ty: CrossingType,
    cfg: &DetectorConfig,
) -> Option<(f64, f64)> {
    let sigma = cfg.sigma_factor * patch.size() as f64;
    let (rows, cols) = profiles(&patch.pixels);
    let gx = smoothed_gradient(&cols, sigma).ok()?;
    let u = locate(&gx, ty.x_axis, cfg)?;
    let gy = smoothed_gradient(&rows, sigma).ok()?;
    let v = locate(&gy, ty.y_axis, cfg)?;
    Some((u, v))
}

/// Detected crossing in image coordinates, mapped back through the patch's
/// sampling grid and `h`.
pub fn detect_crossing(
    patch: &Patch,
    h: &Homography,
    ty: CrossingType,
    cfg: &DetectorConfig,
) -> Option<Point> {
    let (u, v) = detect_crossing_in_patch(patch, ty, cfg)?;
    h.project(patch.to_model(u, v)).ok()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingEntry {
    pub i: usize,
    pub j: usize,
    pub model: Point,
    /// Detected image position; `None` for a miss.
    pub image: Option<Point>,
    pub inlier: bool,
    /// Distance between detection and its projection under the refined
    /// homography.
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossingSet {
    /// One entry per lattice point, in [`ModelGrid::index`] order.
    pub entries: Vec<CrossingEntry>,
    pub homography: Homography,
    pub fit: RansacFit,
    /// Cell size used for the inlier threshold.
    pub cell_px: f64,
}

impl CrossingSet {
    pub fn detected(&self) -> usize {
        self.entries.iter().filter(|e| e.image.is_some()).count()
    }

    pub fn inliers(&self) -> usize {
        self.entries.iter().filter(|e| e.inlier).count()
    }

    /// Correspondences flagged as inliers.
    pub fn consensus(&self) -> Vec<Correspondence> {
        self.entries
            .iter()
            .filter(|e| e.inlier)
            .filter_map(|e| e.image.map(|p| Correspondence::new(e.model, p)))
            .collect()
    }
}

/// Detects the crossing at every lattice point; misses are `None`. Patches
/// are processed in parallel, results keep lattice order.
pub fn locate_crossings(
    img: &GrayImage,
    h0: &Homography,
    grid: &ModelGrid,
    cfg: &DetectorConfig,
) -> Vec<Option<Point>> {
    let (cols, rows) = (grid.cols(), grid.rows());
    let lattice: Vec<(usize, usize)> = grid.indices().collect();
    lattice
        .par_iter()
        .map(|&(i, j)| {
            let m = Point::new(i as f64, j as f64);
            let patch = extract_patch(img, h0, m, cfg).ok()?;
            detect_crossing(&patch, h0, classify_crossing(i, j, cols, rows), cfg)
        })
        .collect()
}

/// Cell size at the module center under `h`.
pub fn central_cell_size(h: &Homography, grid: &ModelGrid) -> Result<f64, GeometryError> {
    cell_size(h, grid.cols() / 2, grid.rows() / 2)
}

/// Robustly fits a homography to the detected crossings.
pub fn refine_crossings(
    grid: &ModelGrid,
    detections: &[Option<Point>],
    h0: &Homography,
    cfg: &DetectorConfig,
) -> Result<CrossingSet, CrossingError> {
    let cell_px = central_cell_size(h0, grid)?;
    let lattice: Vec<(usize, usize)> = grid.indices().collect();
    let cs: Vec<Correspondence> = lattice
        .iter()
        .zip(detections)
        .filter_map(|(&(i, j), d)| d.map(|p| Correspondence::new(Point::new(i as f64, j as f64), p)))
        .collect();
    let fit = ransac_refit(&cs, grid.cols(), grid.rows(), cell_px, &cfg.ransac())?;
    let homography = fit.homography;
    let mut flags = fit.inliers.iter();
    let entries = lattice
        .iter()
        .zip(detections)
        .map(|(&(i, j), d)| {
            let model = Point::new(i as f64, j as f64);
            let inlier = d.is_some() && *flags.next().expect("one flag per detection");
            let residual = d.and_then(|p| homography.project(model).ok().map(|q| (q - p).norm()));
            CrossingEntry {
                i,
                j,
                model,
                image: *d,
                inlier,
                residual,
            }
        })
        .collect();
    Ok(CrossingSet {
        entries,
        homography,
        fit,
        cell_px,
    })
}

/// Patch search at every lattice point followed by the robust refit.
pub fn detect_all_crossings(
    img: &GrayImage,
    h0: &Homography,
    grid: &ModelGrid,
    cfg: &DetectorConfig,
) -> Result<CrossingSet, CrossingError> {
    let detections = locate_crossings(img, h0, grid, cfg);
    refine_crossings(grid, &detections, h0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Axis;
    use nalgebra::Matrix3;

    fn cfg() -> DetectorConfig {
        DetectorConfig::default()
    }

    fn scale(s: f64) -> Homography {
        Homography::from_matrix(Matrix3::new(s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0)).unwrap()
    }

    #[test]
    fn cell_size_is_projected_diagonal() {
        assert!((cell_size(&scale(100.0), 3, 2).unwrap() - 100.0 * 2f64.sqrt()).abs() < 1e-9);
        assert!((cell_size(&Homography::identity(), 0, 0).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn classification() {
        use AxisCrossing::*;
        let t = |x, y| CrossingType { x_axis: x, y_axis: y };
        assert_eq!(classify_crossing(0, 0, 10, 6), t(EdgeLeading, EdgeLeading));
        assert_eq!(classify_crossing(3, 0, 10, 6), t(Ridge, EdgeLeading));
        assert_eq!(classify_crossing(3, 2, 10, 6), t(Ridge, Ridge));
        assert_eq!(classify_crossing(10, 6, 10, 6), t(EdgeTrailing, EdgeTrailing));
    }

    #[test]
    fn patch_geometry() {
        let img = GrayImage::from_fn(400, 300, |x, y| ((x + y) % 7) as f32 / 7.0).unwrap();
        let patch = extract_patch(&img, &scale(50.0), Point::new(3.0, 2.0), &cfg()).unwrap();
        assert_eq!(patch.size(), 64);
        assert_eq!(patch.clamped_fraction, 0.0);
        let (u, v) = patch.model_to_patch(Point::new(3.0, 2.0));
        assert!((u - 31.5).abs() < 1e-12 && (v - 31.5).abs() < 1e-12);
        let m = patch.to_model(u, v);
        assert!((m - Point::new(3.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn patch_outside_image() {
        let img = GrayImage::filled(100, 100, 0.5).unwrap();
        let r = extract_patch(&img, &scale(50.0), Point::new(20.0, 20.0), &cfg());
        assert!(matches!(r, Err(CrossingError::PatchOutsideImage { .. })));
        // A corner patch of a module touching the origin is three quarters out.
        let r = extract_patch(&img, &scale(50.0), Point::new(0.0, 0.0), &cfg());
        assert!(matches!(r, Err(CrossingError::PatchOutsideImage { .. })));
    }

    fn grad_of(profile: &[f64]) -> Signal1D {
        smoothed_gradient(&Signal1D::new(profile.to_vec(), Axis::X), 0.64).unwrap()
    }

    fn lines(n: usize, dark: &[(f64, f64)]) -> Vec<f64> {
        (0..n)
            .map(|k| {
                let x = k as f64;
                if dark.iter().any(|&(c, w)| (x - c).abs() <= w / 2.0) {
                    0.2
                } else {
                    0.8
                }
            })
            .collect()
    }

    #[test]
    fn ridge_middle_of_three() {
        let g = grad_of(&lines(64, &[(15.0, 2.0), (31.5, 3.0), (48.0, 2.0)]));
        let r = detect_ridge(&g, &cfg()).unwrap();
        assert!((r - 31.5).abs() < 1.0, "{r}");
    }

    #[test]
    fn single_ridge_and_even_count() {
        let g = grad_of(&lines(64, &[(31.5, 3.0)]));
        assert!((detect_ridge(&g, &cfg()).unwrap() - 31.5).abs() < 1.0);
        let g = grad_of(&lines(64, &[(20.0, 3.0), (40.0, 2.0)]));
        assert_eq!(detect_ridge(&g, &cfg()), None);
        let g = grad_of(&[0.5; 64]);
        assert_eq!(detect_ridge(&g, &cfg()), None);
    }

    #[test]
    fn edge_closest_to_center() {
        let step: Vec<f64> = (0..64).map(|k| if k >= 32 { 0.9 } else { 0.05 }).collect();
        let e = detect_edge(&grad_of(&step), AxisCrossing::EdgeLeading, &cfg()).unwrap();
        assert!((e - 31.5).abs() < 1.0, "{e}");
        assert_eq!(detect_edge(&grad_of(&step), AxisCrossing::EdgeTrailing, &cfg()), None);

        let mut g = vec![0.0; 64];
        g[21] = 1.0;
        g[34] = 1.0;
        let e = detect_edge(&Signal1D::new(g, Axis::X), AxisCrossing::EdgeLeading, &cfg()).unwrap();
        assert_eq!(e, 34.0);
    }

    #[test]
    fn blank_patch_misses() {
        let img = GrayImage::filled(200, 200, 1.0).unwrap();
        let patch = extract_patch(&img, &scale(50.0), Point::new(2.0, 2.0), &cfg()).unwrap();
        let ty = classify_crossing(2, 2, 3, 3);
        assert_eq!(detect_crossing(&patch, &scale(50.0), ty, &cfg()), None);
    }
}
