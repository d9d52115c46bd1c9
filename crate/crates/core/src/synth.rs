//! Procedural EL-like module scenes with exact ground truth.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Homography, ModelGrid, Point};
use crate::image::{GrayImage, ImageError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("module is not fully visible in the image")]
    ModuleNotVisible,
    #[error("tilt angle {0} deg is degenerate; it must lie strictly between -90 and 90")]
    DegenerateTilt(f64),
    #[error("unknown suite {0:?}; expected frontal, tilt-sweep or multi-module")]
    UnknownSuite(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

fn d_cell_brightness() -> f64 {
    0.7
}
fn d_cell_jitter() -> f64 {
    0.05
}
fn d_ridge_width() -> f64 {
    0.03
}
fn d_ridge_level() -> f64 {
    0.25
}
fn d_busbars() -> usize {
    2
}
fn d_busbar_width() -> f64 {
    0.025
}
fn d_busbar_level() -> f64 {
    0.25
}
fn d_background() -> f64 {
    0.05
}

/// Scene description.
///
/// Widths are in cell units, levels are intensities in `[0, 1]`. Busbars run
/// parallel to the model `y` axis (`busbars`) and to the `x` axis
/// (`horizontal_busbars`), evenly spaced inside every cell. `neighbors` are
/// model-space offsets of additional modules with the same layout, usually
/// cut by the image border.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub cols: usize,
    pub rows: usize,
    pub width: usize,
    pub height: usize,
    /// Model-to-image map of the primary module.
    pub homography: Homography,
    #[serde(default = "d_cell_brightness")]
    pub cell_brightness: f64,
    #[serde(default = "d_cell_jitter")]
    pub cell_jitter: f64,
    #[serde(default = "d_ridge_width")]
    pub ridge_width: f64,
    #[serde(default = "d_ridge_level")]
    pub ridge_level: f64,
    #[serde(default = "d_busbars")]
    pub busbars: usize,
    #[serde(default)]
    pub horizontal_busbars: usize,
    #[serde(default = "d_busbar_width")]
    pub busbar_width: f64,
    #[serde(default = "d_busbar_level")]
    pub busbar_level: f64,
    #[serde(default = "d_background")]
    pub background: f64,
    /// Standard deviation of the additive Gaussian noise.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub neighbors: Vec<[f64; 2]>,
}

impl SceneSpec {
    /// Default appearance for a `cols x rows` module under `homography`.
    pub fn new(cols: usize, rows: usize, width: usize, height: usize, homography: Homography) -> Self {
        Self {
            cols,
            rows,
            width,
            height,
            homography,
            cell_brightness: d_cell_brightness(),
            cell_jitter: d_cell_jitter(),
            ridge_width: d_ridge_width(),
            ridge_level: d_ridge_level(),
            busbars: d_busbars(),
            horizontal_busbars: 0,
            busbar_width: d_busbar_width(),
            busbar_level: d_busbar_level(),
            background: d_background(),
            noise: 0.0,
            neighbors: Vec::new(),
        }
    }

    /// Difference between mean cell brightness and background.
    pub fn contrast(&self) -> f64 {
        self.cell_brightness - self.background
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.cols == 0 || self.rows == 0 {
            return bad(format!("grid {}x{} is empty", self.cols, self.rows));
        }
        if self.width < 2 || self.height < 2 {
            return bad(format!("image {}x{} is too small", self.width, self.height));
        }
        let levels = [
            self.cell_brightness,
            self.ridge_level,
            self.busbar_level,
            self.background,
        ];
        if levels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("intensity levels must lie in [0, 1]".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise sigma must be non-negative, got {}", self.noise));
        }
        if !(self.cell_jitter >= 0.0) {
            return bad("cell jitter must be non-negative".into());
        }
        if !(self.background < self.ridge_level && self.ridge_level < self.cell_brightness - self.cell_jitter) {
            return bad("expected background < ridge level < cell brightness".into());
        }
        for (name, w) in [("ridge", self.ridge_width), ("busbar", self.busbar_width)] {
            if !(w > 0.0 && w < 0.5) {
                return bad(format!("{name} width must lie in (0, 0.5), got {w}"));
            }
        }
        if self.busbars > 16 || self.horizontal_busbars > 16 {
            return bad("at most 16 busbars per cell".into());
        }
        Ok(())
    }
}

/// Exact geometry of a rendered scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cols: usize,
    pub rows: usize,
    pub homography: Homography,
    /// Projections of `(0,0), (N,0), (N,M), (0,M)`.
    pub corners: [[f64; 2]; 4],
    /// Projected lattice points in lattice index order.
    pub lattice: Vec<[f64; 2]>,
    /// Corner quadrilaterals of the neighbor modules, unclipped.
    pub neighbors: Vec<[[f64; 2]; 4]>,
}

impl GroundTruth {
    pub fn corner_points(&self) -> [Point; 4] {
        self.corners.map(|[x, y]| Point::new(x, y))
    }

    pub fn lattice_points(&self) -> Vec<Point> {
        self.lattice.iter().map(|&[x, y]| Point::new(x, y)).collect()
    }

    pub fn neighbor_polygons(&self) -> Vec<[Point; 4]> {
        self.neighbors
            .iter()
            .map(|q| q.map(|[x, y]| Point::new(x, y)))
            .collect()
    }

    /// Annotation in the evaluation format.
    pub fn annotation(&self) -> serde_json::Value {
        serde_json::json!({ "polygon": self.corners })
    }
}

fn corner_quad(h: &Homography, cols: usize, rows: usize, offset: [f64; 2]) -> Result<[[f64; 2]; 4], GeometryError> {
    let (n, m) = (cols as f64, rows as f64);
    let model = [(0.0, 0.0), (n, 0.0), (n, m), (0.0, m)];
    let mut out = [[0.0; 2]; 4];
    for (o, (x, y)) in out.iter_mut().zip(model) {
        let p = h.project(Point::new(x + offset[0], y + offset[1]))?;
        *o = [p.x, p.y];
    }
    Ok(out)
}

/// Ground truth of a scene without rendering it.
pub fn ground_truth(spec: &SceneSpec) -> Result<GroundTruth, SynthError> {
    spec.validate()?;
    let h = spec.homography;
    let corners = corner_quad(&h, spec.cols, spec.rows, [0.0, 0.0])?;
    let (maxx, maxy) = ((spec.width - 1) as f64, (spec.height - 1) as f64);
    let visible = corners
        .iter()
        .all(|&[x, y]| (0.0..=maxx).contains(&x) && (0.0..=maxy).contains(&y));
    // All four corners in front of the camera keeps the projected module
    // convex.
    let m = h.matrix();
    let (n, r) = (spec.cols as f64, spec.rows as f64);
    let ws: Vec<f64> = [(0.0, 0.0), (n, 0.0), (n, r), (0.0, r)]
        .iter()
        .map(|&(x, y)| m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)])
        .collect();
    let same_side = ws.iter().all(|&w| w > 0.0) || ws.iter().all(|&w| w < 0.0);
    if !visible || !same_side {
        return Err(SynthError::ModuleNotVisible);
    }
    let grid = ModelGrid::new(spec.cols, spec.rows)?;
    let lattice = grid
        .points()
        .into_iter()
        .map(|p| h.project(p).map(|q| [q.x, q.y]))
        .collect::<Result<_, _>>()?;
    let neighbors = spec
        .neighbors
        .iter()
        .filter_map(|&o| corner_quad(&h, spec.cols, spec.rows, o).ok())
        .collect();
    Ok(GroundTruth {
        cols: spec.cols,
        rows: spec.rows,
        homography: h,
        corners,
        lattice,
        neighbors,
    })
}

struct Module {
    offset: [f64; 2],
    cells: Vec<f64>,
}

struct Shader<'a> {
    spec: &'a SceneSpec,
    modules: Vec<Module>,
}

fn near_band(f: f64, count: usize, half_width: f64) -> bool {
    (0..count).any(|k| (f - (k as f64 + 0.5) / count as f64).abs() <= half_width)
}

impl Shader<'_> {
    fn shade(&self, x: f64, y: f64) -> f64 {
        let s = self.spec;
        let (n, m) = (s.cols as f64, s.rows as f64);
        for module in &self.modules {
            let (u, v) = (x - module.offset[0], y - module.offset[1]);
            if !(u >= 0.0 && u < n && v >= 0.0 && v < m) {
                continue;
            }
            let ridge = |t: f64, count: f64| {
                let k = t.round();
                k > 0.0 && k < count && (t - k).abs() <= 0.5 * s.ridge_width
            };
            if ridge(u, n) || ridge(v, m) {
                return s.ridge_level;
            }
            let (ci, cj) = (u.floor() as usize, v.floor() as usize);
            let (fu, fv) = (u - ci as f64, v - cj as f64);
            let half = 0.5 * s.busbar_width;
            if near_band(fu, s.busbars, half) || near_band(fv, s.horizontal_busbars, half) {
                return s.busbar_level;
            }
            return module.cells[cj.min(s.rows - 1) * s.cols + ci.min(s.cols - 1)];
        }
        s.background
    }
}

/// Rasterizes the scene with 2x2 supersampling and adds noise.
///
/// Per-cell brightness jitter and noise are drawn from a ChaCha8 stream
/// seeded with `seed`; the ground truth does not depend on it.
pub fn render(spec: &SceneSpec, seed: u64) -> Result<(GrayImage, GroundTruth), SynthError> {
    let truth = ground_truth(spec)?;
    let inv = spec.homography.inverse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jittered = || {
        (0..spec.cols * spec.rows)
            .map(|_| {
                let j = if spec.cell_jitter > 0.0 {
                    rng.random_range(-spec.cell_jitter..=spec.cell_jitter)
                } else {
                    0.0
                };
                (spec.cell_brightness + j).clamp(0.0, 1.0)
            })
            .collect::<Vec<f64>>()
    };
    let mut modules = vec![Module {
        offset: [0.0, 0.0],
        cells: jittered(),
    }];
    for &offset in &spec.neighbors {
        modules.push(Module {
            offset,
            cells: jittered(),
        });
    }
    let shader = Shader { spec, modules };
    let hm = *inv.matrix();
    let sample = |x: f64, y: f64| {
        let w = hm[(2, 0)] * x + hm[(2, 1)] * y + hm[(2, 2)];
        if w.abs() < 1e-300 {
            return spec.background;
        }
        let u = (hm[(0, 0)] * x + hm[(0, 1)] * y + hm[(0, 2)]) / w;
        let v = (hm[(1, 0)] * x + hm[(1, 1)] * y + hm[(1, 2)]) / w;
        shader.shade(u, v)
    };
    const SUB: [f64; 2] = [-0.25, 0.25];
    let mut data = vec![0f32; spec.width * spec.height];
    data.par_chunks_mut(spec.width).enumerate().for_each(|(py, row)| {
        for (px, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for dy in SUB {
                for dx in SUB {
                    acc += sample(px as f64 + dx, py as f64 + dy);
                }
            }
            *out = (0.25 * acc) as f32;
        }
    });
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).expect("validated noise sigma");
        for v in &mut data {
            *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
        }
    }
    Ok((GrayImage::new(spec.width, spec.height, data)?, truth))
}

/// How a module is placed in the image by [`perspective_from_tilt`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Framing {
    pub cols: usize,
    pub rows: usize,
    pub width: usize,
    pub height: usize,
    /// Share of the image extent the module's bounding box fills along the
    /// tighter axis.
    pub fill: f64,
    /// Lay the long module side vertically.
    pub portrait: bool,
}

/// Below this cosine of the tilt the plane is nearly edge-on.
const EDGE_ON_COSINE: f64 = 1e-2;

/// Homography of the module plane rotated by `angle` degrees about the
/// vertical image axis, seen by a pinhole camera at distance `focal` module
/// widths, then scaled and translated so that the module is centered.
pub fn perspective_from_tilt(angle: f64, focal: f64, framing: &Framing) -> Result<Homography, SynthError> {
    if !(angle.abs() < 90.0) {
        return Err(SynthError::DegenerateTilt(angle));
    }
    if !(focal > 0.5) {
        return Err(SynthError::InvalidSpec(format!(
            "focal length {focal} must exceed half the module width"
        )));
    }
    let (n, m) = (framing.cols as f64, framing.rows as f64);
    if !(n > 0.0 && m > 0.0) {
        return Err(SynthError::InvalidSpec("empty grid".into()));
    }
    let theta = angle.to_radians();
    if theta.cos() < EDGE_ON_COSINE {
        log::warn!("tilt of {angle} deg is nearly edge-on; the homography is badly conditioned");
    }
    let long = n.max(m);
    // Model to plane, centered, long side of unit length.
    let to_plane = if framing.portrait {
        Matrix3::new(0.0, -1.0 / long, m / (2.0 * long), 1.0 / long, 0.0, -n / (2.0 * long), 0.0, 0.0, 1.0)
    } else {
        Matrix3::new(1.0 / long, 0.0, -n / (2.0 * long), 0.0, 1.0 / long, -m / (2.0 * long), 0.0, 0.0, 1.0)
    };
    let camera = Matrix3::new(
        theta.cos(),
        0.0,
        0.0,
        0.0,
        1.0,
        0.0,
        theta.sin(),
        0.0,
        focal,
    );
    let raw = Homography::from_matrix(camera * to_plane)?;
    let corners = [(0.0, 0.0), (n, 0.0), (n, m), (0.0, m)]
        .map(|(x, y)| raw.project(Point::new(x, y)));
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in corners {
        let c = c?;
        lo = Point::new(lo.x.min(c.x), lo.y.min(c.y));
        hi = Point::new(hi.x.max(c.x), hi.y.max(c.y));
    }
    let (bw, bh) = (hi.x - lo.x, hi.y - lo.y);
    let (w, h) = ((framing.width - 1) as f64, (framing.height - 1) as f64);
    let s = framing.fill * (w / bw).min(h / bh);
    let (cx, cy) = (0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y));
    let place = Matrix3::new(s, 0.0, 0.5 * w - s * cx, 0.0, s, 0.5 * h - s * cy, 0.0, 0.0, 1.0);
    Ok(Homography::from_matrix(place * raw.matrix())?)
}

/// Ratio of the projected heights of the near and far vertical module
/// edges at `angle` degrees, from the pinhole model.
pub fn foreshortening_ratio(angle: f64, focal: f64) -> f64 {
    let a = 0.5 * angle.to_radians().sin();
    (focal + a) / (focal - a)
}

/// In-plane rotation by `angle` degrees, scaling by `scale` pixels per cell
/// and translation placing the model center at `center`.
pub fn similarity(cols: usize, rows: usize, scale: f64, angle: f64, center: Point) -> Homography {
    let (s, c) = angle.to_radians().sin_cos();
    let (mx, my) = (0.5 * cols as f64, 0.5 * rows as f64);
    let m = Matrix3::new(
        scale * c,
        -scale * s,
        center.x - scale * (c * mx - s * my),
        scale * s,
        scale * c,
        center.y - scale * (s * mx + c * my),
        0.0,
        0.0,
        1.0,
    );
    Homography::from_matrix(m).expect("similarity is regular")
}

/// A named scene with its render seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub seed: u64,
    pub spec: SceneSpec,
}

pub const SUITES: [&str; 3] = ["frontal", "tilt-sweep", "multi-module"];

/// Axis-aligned or nearly axis-aligned 10x6 modules with noise up to 5% of
/// the cell/background contrast.
pub fn frontal_suite(count: usize, seed: u64) -> Vec<Scene> {
    let (w, h) = (1600, 1200);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let fill = rng.random_range(0.55..0.7);
            let scale = fill * (w - 1) as f64 / 10.0;
            let slack_x = 0.5 * ((w - 1) as f64 - 10.0 * scale) - 10.0;
            let slack_y = 0.5 * ((h - 1) as f64 - 6.0 * scale) - 10.0;
            let center = Point::new(
                0.5 * (w - 1) as f64 + rng.random_range(-0.5..0.5) * slack_x,
                0.5 * (h - 1) as f64 + rng.random_range(-0.5..0.5) * slack_y,
            );
            let angle = rng.random_range(-0.5..0.5);
            let mut spec = SceneSpec::new(10, 6, w, h, similarity(10, 6, scale, angle, center));
            spec.noise = rng.random_range(0.0..=0.05) * spec.contrast();
            Scene {
                id: format!("frontal-{k:03}"),
                seed: seed.wrapping_add(k as u64),
                spec,
            }
        })
        .collect()
}

/// Relative focal length used by the tilt sweep.
pub const TILT_FOCAL: f64 = 2.0;

/// Portrait 10x6 module rotated about the vertical axis in 10 degree steps
/// from 0 to 80 degrees.
pub fn tilt_sweep(seed: u64) -> Vec<Scene> {
    let framing = Framing {
        cols: 10,
        rows: 6,
        width: 1600,
        height: 1200,
        fill: 0.8,
        portrait: true,
    };
    (0..9)
        .map(|k| {
            let angle = 10.0 * k as f64;
            let h = perspective_from_tilt(angle, TILT_FOCAL, &framing).expect("angle below 90");
            let mut spec = SceneSpec::new(10, 6, framing.width, framing.height, h);
            spec.noise = 0.01;
            Scene {
                id: format!("tilt-{:02}", 10 * k),
                seed: seed.wrapping_add(k as u64),
                spec,
            }
        })
        .collect()
}

/// One fully visible module with one or two neighbors cut by the image
/// border.
pub fn multi_module_suite(count: usize, seed: u64) -> Vec<Scene> {
    let (w, h) = (1400, 700);
    let cell = 60.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let center = Point::new(
                0.5 * (w - 1) as f64 + rng.random_range(-60.0..60.0),
                0.5 * (h - 1) as f64 + rng.random_range(-40.0..40.0),
            );
            let mut spec = SceneSpec::new(10, 6, w, h, similarity(10, 6, cell, 0.0, center));
            let gap = rng.random_range(0.6..1.0);
            let dx = 10.0 + gap;
            let dy = 6.0 + gap;
            let candidates = [[dx, 0.0], [-dx, 0.0], [0.0, dy], [0.0, -dy]];
            let first = rng.random_range(0..candidates.len());
            spec.neighbors.push(candidates[first]);
            if rng.random_bool(0.5) {
                // The opposite side keeps both neighbors cut by the border.
                spec.neighbors.push(candidates[first ^ 1]);
            }
            spec.noise = 0.01;
            Scene {
                id: format!("multi-{k:03}"),
                seed: seed.wrapping_add(k as u64),
                spec,
            }
        })
        .collect()
}

/// Built-in suite by name.
pub fn suite(name: &str, count: usize, seed: u64) -> Result<Vec<Scene>, SynthError> {
    match name {
        "frontal" => Ok(frontal_suite(count, seed)),
        "tilt-sweep" => Ok(tilt_sweep(seed)),
        "multi-module" => Ok(multi_module_suite(count, seed)),
        other => Err(SynthError::UnknownSuite(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_square() {
        let h = similarity(1, 1, 20.0, 0.0, Point::new(24.5, 24.5));
        let mut spec = SceneSpec::new(1, 1, 50, 50, h);
        spec.cell_jitter = 0.0;
        spec.busbars = 0;
        let (img, truth) = render(&spec, 1).unwrap();
        let expected = [[14.5, 14.5], [34.5, 14.5], [34.5, 34.5], [14.5, 34.5]];
        for (c, e) in truth.corners.iter().zip(expected) {
            assert!((c[0] - e[0]).abs() < 1e-9 && (c[1] - e[1]).abs() < 1e-9, "{c:?}");
        }
        assert_eq!(img.get(24, 24), 0.7);
        assert_eq!(img.get(2, 2), 0.05);
    }

    #[test]
    fn lattice_size() {
        let h = similarity(10, 6, 50.0, 0.0, Point::new(400.0, 300.0));
        let truth = ground_truth(&SceneSpec::new(10, 6, 800, 600, h)).unwrap();
        assert_eq!(truth.lattice.len(), 77);
    }

    #[test]
    fn invisible_module_is_rejected() {
        let h = similarity(10, 6, 100.0, 0.0, Point::new(400.0, 300.0));
        assert!(matches!(
            render(&SceneSpec::new(10, 6, 800, 600, h), 0),
            Err(SynthError::ModuleNotVisible)
        ));
    }

    #[test]
    fn spec_validation() {
        let h = similarity(2, 2, 10.0, 0.0, Point::new(20.0, 20.0));
        let mut spec = SceneSpec::new(2, 2, 40, 40, h);
        spec.noise = -1.0;
        assert!(spec.validate().is_err());
        spec.noise = 0.0;
        spec.ridge_level = 0.01;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn tilt_limits() {
        let f = Framing {
            cols: 10,
            rows: 6,
            width: 800,
            height: 600,
            fill: 0.8,
            portrait: false,
        };
        assert!(matches!(perspective_from_tilt(90.0, 2.0, &f), Err(SynthError::DegenerateTilt(_))));
        assert!(perspective_from_tilt(-95.0, 2.0, &f).is_err());
        let h = perspective_from_tilt(0.0, 2.0, &f).unwrap();
        let m = h.matrix() / h.matrix()[(2, 2)];
        assert!(m[(2, 0)].abs() < 1e-15 && m[(2, 1)].abs() < 1e-15);
        assert!((m[(0, 0)] - m[(1, 1)]).abs() < 1e-9 && m[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn suites_have_expected_sizes() {
        assert_eq!(tilt_sweep(0).len(), 9);
        assert_eq!(frontal_suite(5, 0).len(), 5);
        for s in multi_module_suite(10, 3) {
            assert!((1..=2).contains(&s.spec.neighbors.len()));
            ground_truth(&s.spec).unwrap();
        }
        for s in frontal_suite(20, 7).iter().chain(&tilt_sweep(0)) {
            ground_truth(&s.spec).unwrap();
        }
        assert!(suite("nope", 1, 0).is_err());
    }
}
