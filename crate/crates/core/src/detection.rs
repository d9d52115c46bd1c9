//! Coarse module localization from row and column sums.
//!
//! A bright module on a dark background turns into a rising edge followed by
//! a falling edge in both 1-D profiles. The extrema of the smoothed profile
//! gradients give the module's extent per axis; the width of each gradient
//! peak tells how far the corresponding module edge is slanted. Together the
//! peak extents bound the module between an outer and an inner axis-aligned
//! box, and the image content between the two boxes decides where exactly
//! the four corners lie.

use thiserror::Error;

use crate::config::DetectorConfig;
use crate::geometry::Point;
use crate::image::{profiles, GrayImage};
use crate::signal::{smoothed_gradient, Signal1D, SignalError};

/// A peak has vanished once `|grad|` drops below this fraction of its value.
pub const VANISH_FRACTION: f64 = 0.1;
/// Relative score margin below which two corner hypotheses are ambiguous.
pub const AMBIGUITY_MARGIN: f64 = 0.05;
/// Minimum normalized contrast between module interior and surroundings.
pub const MIN_CONTRAST: f64 = 0.2;
/// Hypotheses whose corners all lie within this fraction of the outer box
/// diagonal of each other are treated as the same answer.
const DISTINCT_FRACTION: f64 = 0.02;
const STRIP_ALONG: usize = 48;
const STRIP_ACROSS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("no module found: {0}")]
    NoModuleFound(&'static str),
    #[error("degenerate bounding box: inner box has non-positive area")]
    DegenerateBox,
    #[error("ambiguous module orientation (score margin {margin:.3})")]
    AmbiguousOrientation { margin: f64 },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtremumKind {
    Maximum,
    Minimum,
}

/// Extent of a gradient peak: the outermost samples still above the vanish
/// level, and the interpolated positions where the level is crossed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub left: usize,
    pub right: usize,
    pub left_crossing: f64,
    pub right_crossing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremum {
    pub index: usize,
    pub kind: ExtremumKind,
    pub value: f64,
    pub span: Span,
    /// Smoothing sigma of the signal the extremum was found on.
    pub sigma: Option<f64>,
}

impl Extremum {
    /// Extent of the unsmoothed edge that produced this peak.
    ///
    /// A straight module edge slanted across `W` samples shows up in the
    /// profile gradient as a box of width `W`; smoothing widens it. The
    /// measured vanish crossings are shrunk by the amount a Gaussian of the
    /// signal's sigma adds to a box, so an unslanted edge yields an empty
    /// extent.
    pub fn support(&self) -> (f64, f64) {
        let (l, r) = (self.span.left_crossing, self.span.right_crossing);
        let Some(sigma) = self.sigma else {
            return (l, r);
        };
        let half = 0.5 * (r - l);
        let width = box_width_for_half_extent(half, sigma);
        let shrink = half - 0.5 * width;
        (l + shrink, r - shrink)
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Root of `f` on `[lo, hi]` by the Illinois variant of false position.
/// `f(lo)` and `f(hi)` must differ in sign.
fn illinois(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let (mut a, mut fa) = (lo, f(lo));
    let (mut b, mut fb) = (hi, f(hi));
    for _ in 0..200 {
        let x = b - fb * (b - a) / (fb - fa);
        let fx = f(x);
        if fx == 0.0 || !x.is_finite() {
            return x;
        }
        if (fx > 0.0) != (fb > 0.0) {
            a = b;
            fa = fb;
        } else {
            fa *= 0.5;
        }
        b = x;
        fb = fx;
        if (b - a).abs() < tol {
            break;
        }
    }
    b
}

/// Distance from the center at which a unit box of `width`, blurred by a
/// Gaussian of `sigma`, falls to [`VANISH_FRACTION`] of its peak.
fn vanish_half_extent(width: f64, sigma: f64) -> f64 {
    let a = 0.5 * width / sigma;
    if a < 1e-6 {
        // The blurred box tends to the Gaussian itself.
        return sigma * (-2.0 * VANISH_FRACTION.ln()).sqrt();
    }
    let blurred = |c: f64| normal_cdf(c + a) - normal_cdf(c - a);
    let level = VANISH_FRACTION * blurred(0.0);
    illinois(|c| blurred(c) - level, 0.0, a + 10.0, 1e-12) * sigma
}

/// Inverts [`vanish_half_extent`] in the width.
fn box_width_for_half_extent(half: f64, sigma: f64) -> f64 {
    if !(half > vanish_half_extent(0.0, sigma)) {
        return 0.0;
    }
    illinois(|w| vanish_half_extent(w, sigma) - half, 0.0, 2.0 * half, 1e-9 * sigma)
}

/// Walks outward from `index` while `|grad|` stays at or above
/// [`VANISH_FRACTION`] of the peak and keeps its sign. Clamps at the ends.
pub fn peak_span(grad: &Signal1D, index: usize) -> Span {
    let g = grad.values();
    let n = g.len();
    let peak = g[index];
    let sign = peak.signum();
    let level = VANISH_FRACTION * peak.abs();
    let keeps = |v: f64| v * sign >= level && v.signum() == sign;
    // Interpolated position between the last kept sample and the next one.
    let crossing = |kept: usize, next: usize| {
        let a = g[kept] * sign - level;
        let b = g[next] * sign - level;
        let t = if a - b > 0.0 { a / (a - b) } else { 0.0 };
        kept as f64 + t * (next as f64 - kept as f64)
    };

    let mut right = index;
    while right + 1 < n && keeps(g[right + 1]) {
        right += 1;
    }
    let right_crossing = if right + 1 < n {
        crossing(right, right + 1)
    } else {
        right as f64
    };
    let mut left = index;
    while left > 0 && keeps(g[left - 1]) {
        left -= 1;
    }
    let left_crossing = if left > 0 {
        crossing(left, left - 1)
    } else {
        0.0
    };
    Span {
        left,
        right,
        left_crossing,
        right_crossing,
    }
}

/// Thresholded extrema with one survivor per supra-threshold run.
///
/// A sample is a maximum candidate if it exceeds `k` standard deviations of
/// the gradient, a minimum candidate if it falls below minus that. Each
/// maximal run of consecutive candidates of one kind keeps only its
/// strongest sample (ties go to the lower index). Ordered by index.
pub fn find_extrema(grad: &Signal1D, k: f64) -> Vec<Extremum> {
    let g = grad.values();
    let threshold = k * grad.std_dev();
    if !(threshold > 0.0) {
        return Vec::new();
    }
    let classify = |v: f64| {
        if v > threshold {
            Some(ExtremumKind::Maximum)
        } else if v < -threshold {
            Some(ExtremumKind::Minimum)
        } else {
            None
        }
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < g.len() {
        let Some(kind) = classify(g[i]) else {
            i += 1;
            continue;
        };
        let mut best = i;
        let mut j = i + 1;
        while j < g.len() && classify(g[j]) == Some(kind) {
            if g[j].abs() > g[best].abs() {
                best = j;
            }
            j += 1;
        }
        out.push(Extremum {
            index: best,
            kind,
            value: g[best],
            span: peak_span(grad, best),
            sigma: grad.sigma(),
        });
        i = j;
    }
    out
}

/// Picks the rising/falling edge pair of the one fully visible module.
///
/// Consecutive extrema of the same kind collapse to the strongest of them;
/// among the remaining maximum-then-minimum pairs the widest one wins.
pub fn select_module(extrema: &[Extremum]) -> Result<(Extremum, Extremum), DetectionError> {
    let mut collapsed: Vec<Extremum> = Vec::new();
    for e in extrema {
        match collapsed.last_mut() {
            Some(last) if last.kind == e.kind => {
                if e.value.abs() > last.value.abs() {
                    *last = *e;
                }
            }
            _ => collapsed.push(*e),
        }
    }
    collapsed
        .windows(2)
        .filter(|w| w[0].kind == ExtremumKind::Maximum && w[1].kind == ExtremumKind::Minimum)
        .fold(None::<(Extremum, Extremum)>, |best, w| match best {
            Some((a, b)) if b.index - a.index >= w[1].index - w[0].index => Some((a, b)),
            _ => Some((w[0], w[1])),
        })
        .ok_or(DetectionError::NoModuleFound("no rising edge followed by a falling edge"))
}

/// Outer and inner axis-aligned module bounds, in pixel coordinates.
///
/// `left_*`/`right_*` come from the column-sum gradient (rising and falling
/// module edge along `x`), `top_*`/`bottom_*` from the row-sum gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBoxPair {
    pub left_outer: f64,
    pub left_inner: f64,
    pub right_inner: f64,
    pub right_outer: f64,
    pub top_outer: f64,
    pub top_inner: f64,
    pub bottom_inner: f64,
    pub bottom_outer: f64,
    /// Spans narrower than this are indistinguishable from a sharp edge.
    pub resolution: f64,
}

impl BoundingBoxPair {
    /// Outer box corners, ordered as
    /// `[(x1-, y2+), (x2+, y2+), (x2+, y1-), (x1-, y1-)]`.
    pub fn outer(&self) -> [Point; 4] {
        [
            Point::new(self.left_outer, self.bottom_outer),
            Point::new(self.right_outer, self.bottom_outer),
            Point::new(self.right_outer, self.top_outer),
            Point::new(self.left_outer, self.top_outer),
        ]
    }

    /// Inner box corners, ordered as
    /// `[(x1+, y2-), (x2-, y2-), (x2-, y1+), (x1+, y1+)]`.
    pub fn inner(&self) -> [Point; 4] {
        [
            Point::new(self.left_inner, self.bottom_inner),
            Point::new(self.right_inner, self.bottom_inner),
            Point::new(self.right_inner, self.top_inner),
            Point::new(self.left_inner, self.top_inner),
        ]
    }

    pub fn outer_diagonal(&self) -> f64 {
        (self.right_outer - self.left_outer).hypot(self.bottom_outer - self.top_outer)
    }

    fn candidates(&self, outer: f64, inner: f64) -> Vec<f64> {
        if (outer - inner).abs() <= self.resolution {
            vec![0.5 * (outer + inner)]
        } else {
            vec![outer, inner]
        }
    }

    /// True if every span is below the resolution, i.e. `B1 = B2` up to
    /// tolerance.
    pub fn coincident(&self) -> bool {
        [
            self.left_inner - self.left_outer,
            self.right_outer - self.right_inner,
            self.top_inner - self.top_outer,
            self.bottom_outer - self.bottom_inner,
        ]
        .iter()
        .all(|d| d.abs() <= self.resolution)
    }
}

/// Assembles both boxes from the per-axis edge pairs.
pub fn bounding_boxes(
    ex_x: (&Extremum, &Extremum),
    ex_y: (&Extremum, &Extremum),
) -> Result<BoundingBoxPair, DetectionError> {
    let (x1, x2) = ex_x;
    let (y1, y2) = ex_y;
    let (left_outer, left_inner) = x1.support();
    let (right_inner, right_outer) = x2.support();
    let (top_outer, top_inner) = y1.support();
    let (bottom_inner, bottom_outer) = y2.support();
    if !(left_inner < right_inner && top_inner < bottom_inner) {
        return Err(DetectionError::DegenerateBox);
    }
    let resolution = [x1.sigma, x2.sigma, y1.sigma, y2.sigma]
        .into_iter()
        .flatten()
        .fold(1.0, f64::max);
    Ok(BoundingBoxPair {
        left_outer,
        left_inner,
        right_inner,
        right_outer,
        top_outer,
        top_inner,
        bottom_inner,
        bottom_outer,
        resolution,
    })
}

/// Diagnostics attached to a module detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Confidence {
    /// Weaker of the two edge peaks on the column-sum gradient, in standard
    /// deviations of that gradient.
    pub x_prominence: f64,
    pub y_prominence: f64,
    /// `(inside - outside) / (inside + outside)` mean intensity, if the image
    /// has room around the module to measure it.
    pub contrast: Option<f64>,
    /// Relative score margin of the chosen corner hypothesis over the best
    /// distinct alternative; 1 when there was no alternative.
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModuleDetection {
    /// `b1..b4`, clockwise in the image, with `(b1, b2)` a long side.
    pub corners: [Point; 4],
    /// The same corners as top-left, top-right, bottom-right, bottom-left.
    pub quad: [Point; 4],
    pub confidence: Confidence,
}

/// Orders a clockwise `[tl, tr, br, bl]` quadrilateral so that the first
/// edge is a long side.
pub fn orient_long_side(quad: [Point; 4]) -> [Point; 4] {
    let [tl, tr, br, bl] = quad;
    let horizontal = (tr - tl).norm() + (bl - br).norm();
    let vertical = (br - tr).norm() + (tl - bl).norm();
    if horizontal >= vertical {
        [tl, tr, br, bl]
    } else {
        [tr, br, bl, tl]
    }
}

struct RingSample {
    p: Point,
    value: f64,
    weight: f64,
}

fn sample_rect(
    img: &GrayImage,
    x: (f64, f64),
    y: (f64, f64),
    nx: usize,
    ny: usize,
    out: &mut Vec<RingSample>,
) {
    let weight = (x.1 - x.0) * (y.1 - y.0) / (nx * ny) as f64;
    for b in 0..ny {
        let v = y.0 + (y.1 - y.0) * (b as f64 + 0.5) / ny as f64;
        for a in 0..nx {
            let u = x.0 + (x.1 - x.0) * (a as f64 + 0.5) / nx as f64;
            out.push(RingSample {
                p: Point::new(u, v),
                value: img.bilinear(u, v),
                weight,
            });
        }
    }
}

/// Samples the strips between outer and inner box that carry information,
/// i.e. those across a span wider than the resolution.
fn ring_samples(img: &GrayImage, b: &BoundingBoxPair) -> Vec<RingSample> {
    let mut out = Vec::new();
    let wide = |d: f64| d > b.resolution;
    let xs = (b.left_outer, b.right_outer);
    let inner_y = (b.top_inner, b.bottom_inner);
    if wide(b.top_inner - b.top_outer) {
        sample_rect(img, xs, (b.top_outer, b.top_inner), STRIP_ALONG, STRIP_ACROSS, &mut out);
    }
    if wide(b.bottom_outer - b.bottom_inner) {
        sample_rect(img, xs, (b.bottom_inner, b.bottom_outer), STRIP_ALONG, STRIP_ACROSS, &mut out);
    }
    if wide(b.left_inner - b.left_outer) {
        sample_rect(img, (b.left_outer, b.left_inner), inner_y, STRIP_ACROSS, STRIP_ALONG, &mut out);
    }
    if wide(b.right_outer - b.right_inner) {
        sample_rect(img, (b.right_inner, b.right_outer), inner_y, STRIP_ACROSS, STRIP_ALONG, &mut out);
    }
    out
}

fn cross(o: &Point, a: &Point, b: &Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Strictly convex and clockwise in image coordinates (y down).
fn convex_clockwise(q: &[Point; 4]) -> bool {
    (0..4).all(|k| cross(&q[k], &q[(k + 1) % 4], &q[(k + 2) % 4]) > 0.0)
}

fn inside(q: &[Point; 4], p: &Point) -> bool {
    (0..4).all(|k| cross(&q[k], &q[(k + 1) % 4], p) >= 0.0)
}

/// Between-class variance of the ring samples split by the hypothesis,
/// counted only when the inside is brighter.
fn separation(q: &[Point; 4], samples: &[RingSample]) -> f64 {
    let (mut w_in, mut s_in, mut w_all, mut s_all) = (0.0, 0.0, 0.0, 0.0);
    for s in samples {
        w_all += s.weight;
        s_all += s.weight * s.value;
        if inside(q, &s.p) {
            w_in += s.weight;
            s_in += s.weight * s.value;
        }
    }
    let w_out = w_all - w_in;
    if w_in <= 0.0 || w_out <= 0.0 {
        return 0.0;
    }
    let mean_in = s_in / w_in;
    let mean_out = (s_all - s_in) / w_out;
    if mean_in <= mean_out {
        return 0.0;
    }
    w_in * w_out / (w_all * w_all) * (mean_in - mean_out).powi(2)
}

/// Resolves which mix of outer and inner box coordinates the true corners
/// take.
///
/// Each corner takes its `x` from the adjacent column span and its `y` from
/// the adjacent row span, either at the span's outer or inner end (spans
/// below the resolution contribute a single midpoint). Every convex
/// combination is scored by how well it separates bright from dark samples
/// in the strips between the two boxes. If the runner-up among geometrically
/// distinct hypotheses comes within [`AMBIGUITY_MARGIN`] of the best score
/// the orientation is reported ambiguous.
pub fn disambiguate_corners(
    img: &GrayImage,
    boxes: &BoundingBoxPair,
) -> Result<ModuleDetection, DetectionError> {
    let b = boxes;
    let left = b.candidates(b.left_outer, b.left_inner);
    let right = b.candidates(b.right_outer, b.right_inner);
    let top = b.candidates(b.top_outer, b.top_inner);
    let bottom = b.candidates(b.bottom_outer, b.bottom_inner);

    let detection = |quad: [Point; 4], margin: f64| ModuleDetection {
        corners: orient_long_side(quad),
        quad,
        confidence: Confidence {
            x_prominence: f64::NAN,
            y_prominence: f64::NAN,
            contrast: None,
            margin,
        },
    };

    if b.coincident() {
        let quad = [
            Point::new(left[0], top[0]),
            Point::new(right[0], top[0]),
            Point::new(right[0], bottom[0]),
            Point::new(left[0], bottom[0]),
        ];
        return Ok(detection(quad, 1.0));
    }

    let samples = ring_samples(img, b);
    let mut scored: Vec<([Point; 4], f64)> = Vec::new();
    for &tlx in &left {
        for &tly in &top {
            for &trx in &right {
                for &try_ in &top {
                    for &brx in &right {
                        for &bry in &bottom {
                            for &blx in &left {
                                for &bly in &bottom {
                                    let q = [
                                        Point::new(tlx, tly),
                                        Point::new(trx, try_),
                                        Point::new(brx, bry),
                                        Point::new(blx, bly),
                                    ];
                                    if convex_clockwise(&q) {
                                        scored.push((q, separation(&q, &samples)));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let Some(&(best_quad, best_score)) = scored
        .iter()
        .fold(None, |acc: Option<&([Point; 4], f64)>, s| match acc {
            Some(a) if a.1 >= s.1 => Some(a),
            _ => Some(s),
        })
    else {
        return Err(DetectionError::AmbiguousOrientation { margin: 0.0 });
    };
    if !(best_score > 0.0) {
        return Err(DetectionError::AmbiguousOrientation { margin: 0.0 });
    }
    let distinct = DISTINCT_FRACTION * b.outer_diagonal();
    let runner_up = scored
        .iter()
        .filter(|(q, _)| {
            q.iter()
                .zip(&best_quad)
                .any(|(a, c)| (a - c).norm() > distinct)
        })
        .map(|(_, s)| *s)
        .fold(0.0, f64::max);
    let margin = (best_score - runner_up) / best_score;
    if margin < AMBIGUITY_MARGIN {
        return Err(DetectionError::AmbiguousOrientation { margin });
    }
    Ok(detection(best_quad, margin))
}

/// Mean-intensity contrast between the inner box and a band around the
/// outer box, or `None` when the band falls entirely outside the image.
fn surround_contrast(img: &GrayImage, b: &BoundingBoxPair) -> Option<f64> {
    let (w, h) = ((img.width() - 1) as f64, (img.height() - 1) as f64);
    let band = 0.05 * (b.right_outer - b.left_outer).max(b.bottom_outer - b.top_outer);
    let mut inner = Vec::new();
    sample_rect(
        img,
        (b.left_inner, b.right_inner),
        (b.top_inner, b.bottom_inner),
        32,
        32,
        &mut inner,
    );
    let mean_in = inner.iter().map(|s| s.value).sum::<f64>() / inner.len() as f64;

    let mut outside = Vec::new();
    let x0 = (b.left_outer - band).max(0.0);
    let x1 = (b.right_outer + band).min(w);
    let y0 = (b.top_outer - band).max(0.0);
    let y1 = (b.bottom_outer + band).min(h);
    let strips = [
        ((x0, x1), (y0, b.top_outer), STRIP_ALONG, 4),
        ((x0, x1), (b.bottom_outer, y1), STRIP_ALONG, 4),
        ((x0, b.left_outer), (b.top_outer, b.bottom_outer), 4, STRIP_ALONG),
        ((b.right_outer, x1), (b.top_outer, b.bottom_outer), 4, STRIP_ALONG),
    ];
    for (xs, ys, nx, ny) in strips {
        if xs.1 - xs.0 >= 1.0 && ys.1 - ys.0 >= 1.0 {
            sample_rect(img, xs, ys, nx, ny, &mut outside);
        }
    }
    if outside.is_empty() {
        return None;
    }
    let mean_out = outside.iter().map(|s| s.value).sum::<f64>() / outside.len() as f64;
    let total = mean_in + mean_out;
    Some(if total > 0.0 {
        (mean_in - mean_out) / total
    } else {
        0.0
    })
}

/// The edge pair of one profile gradient, plus its prominence.
fn axis_pair(grad: &Signal1D, k: f64) -> Result<(Extremum, Extremum, f64), DetectionError> {
    let extrema = find_extrema(grad, k);
    let (a, b) = select_module(&extrema)?;
    let std = grad.std_dev();
    Ok((a, b, a.value.abs().min(b.value.abs()) / std))
}

/// Locates the module and its four corners.
pub fn detect_module(img: &GrayImage, cfg: &DetectorConfig) -> Result<ModuleDetection, DetectionError> {
    let sigma = cfg.sigma_factor * img.width().max(img.height()) as f64;
    let (rows, cols) = profiles(img);
    let grad_x = smoothed_gradient(&cols, sigma)?;
    let grad_y = smoothed_gradient(&rows, sigma)?;
    let (x1, x2, x_prominence) = axis_pair(&grad_x, cfg.module_threshold)?;
    let (y1, y2, y_prominence) = axis_pair(&grad_y, cfg.module_threshold)?;
    let boxes = bounding_boxes((&x1, &x2), (&y1, &y2))?;
    let mut det = disambiguate_corners(img, &boxes)?;
    let contrast = surround_contrast(img, &boxes);
    if contrast.is_some_and(|c| c < MIN_CONTRAST) {
        return Err(DetectionError::NoModuleFound(
            "module candidate is not brighter than its surroundings",
        ));
    }
    det.confidence.x_prominence = x_prominence;
    det.confidence.y_prominence = y_prominence;
    det.confidence.contrast = contrast;
    Ok(det)
}
