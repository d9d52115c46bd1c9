//! Model lattice, projective transforms and DLT homography estimation.
//!
//! The model plane measures lengths in cells: the module occupies
//! `[0, N] x [0, M]` with the origin at its upper-left corner and `y`
//! pointing down. Crossing points sit on the integer lattice.

use nalgebra::{DMatrix, Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = Point2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid module grid {cols}x{rows}: need cols >= rows >= 1")]
    InvalidGrid { cols: usize, rows: usize },
    #[error("homography is singular or non-finite")]
    Singular,
    #[error("point maps to infinity")]
    PointAtInfinity,
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("need at least 4 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("model and image point lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("insufficient consensus: best set has {best} of {total} correspondences, {required} required")]
    InsufficientConsensus {
        best: usize,
        total: usize,
        required: usize,
    },
}

/// The `(N + 1) x (M + 1)` lattice of crossing points of an `N x M` module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelGrid {
    cols: usize,
    rows: usize,
}

impl ModelGrid {
    pub fn new(cols: usize, rows: usize) -> Result<Self, GeometryError> {
        if rows == 0 || cols < rows {
            return Err(GeometryError::InvalidGrid { cols, rows });
        }
        Ok(Self { cols, rows })
    }

    /// Number of cell columns `N`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of cell rows `M`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cell_count(&self) -> usize {
        self.cols * self.rows
    }

    pub fn len(&self) -> usize {
        (self.cols + 1) * (self.rows + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Lattice index of point `(i, j)`; rows of the lattice are contiguous.
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * (self.cols + 1) + i
    }

    /// `(i, j)` lattice coordinates in index order.
    pub fn indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..=self.rows).flat_map(move |j| (0..=self.cols).map(move |i| (i, j)))
    }

    pub fn points(&self) -> Vec<Point> {
        self.indices()
            .map(|(i, j)| Point::new(i as f64, j as f64))
            .collect()
    }

    /// Model corners `(0,0), (N,0), (N,M), (0,M)`.
    pub fn corners(&self) -> [Point; 4] {
        let (n, m) = (self.cols as f64, self.rows as f64);
        [
            Point::new(0.0, 0.0),
            Point::new(n, 0.0),
            Point::new(n, m),
            Point::new(0.0, m),
        ]
    }
}

/// Free-function constructor mirroring [`ModelGrid::new`].
pub fn model_grid(cols: usize, rows: usize) -> Result<ModelGrid, GeometryError> {
    ModelGrid::new(cols, rows)
}

/// A projective map from the model plane to the image plane.
///
/// Stored with unit Frobenius norm and a non-negative bottom-right entry so
/// that equal maps serialize identically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Self::from_matrix(Matrix3::identity()).expect("identity is regular")
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let norm = m.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(GeometryError::Singular);
        }
        // Already normalized input is kept bit-exact so serialization
        // round-trips.
        let mut m = if (norm - 1.0).abs() > 4.0 * f64::EPSILON { m / norm } else { m };
        let sign_ref = if m[(2, 2)] != 0.0 {
            m[(2, 2)]
        } else {
            m.iter().copied().find(|v| *v != 0.0).unwrap_or(1.0)
        };
        if sign_ref < 0.0 {
            m = -m;
        }
        if m.determinant().abs() < 1e-14 {
            return Err(GeometryError::Singular);
        }
        Ok(Self(m))
    }

    pub fn from_row_major(h: [f64; 9]) -> Result<Self, GeometryError> {
        Self::from_matrix(Matrix3::from_row_slice(&h))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let inv = self.0.try_inverse().ok_or(GeometryError::Singular)?;
        Self::from_matrix(inv)
    }

    /// `self` applied after `other`.
    pub fn compose(&self, other: &Homography) -> Result<Self, GeometryError> {
        Self::from_matrix(self.0 * other.0)
    }

    /// Ratio of the largest to the smallest singular value.
    pub fn condition_number(&self) -> f64 {
        let s = self.0.singular_values();
        let max = s.max();
        let min = s.min();
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// Maps a model point to cartesian image coordinates.
    #[inline]
    pub fn project(&self, p: Point) -> Result<Point, GeometryError> {
        let m = &self.0;
        let x = m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)];
        let y = m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)];
        let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
        let norm = (x * x + y * y + w * w).sqrt();
        if !(w.abs() > 1e-12 * norm) || !norm.is_finite() {
            return Err(GeometryError::PointAtInfinity);
        }
        Ok(Point::new(x / w, y / w))
    }
}

impl Serialize for Homography {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let h = <[f64; 9]>::deserialize(d)?;
        Homography::from_row_major(h).map_err(serde::de::Error::custom)
    }
}

/// Free-function form of [`Homography::project`].
pub fn project(h: &Homography, m: Point) -> Result<Point, GeometryError> {
    h.project(m)
}

/// A model-to-image point pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub model: Point,
    pub image: Point,
    pub inlier: bool,
}

impl Correspondence {
    pub fn new(model: Point, image: Point) -> Self {
        Self {
            model,
            image,
            inlier: false,
        }
    }
}

/// Similarity that moves the centroid to the origin and scales the mean
/// distance from it to `sqrt(2)`.
fn normalizing_transform(points: &[Point]) -> Result<Matrix3<f64>, GeometryError> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > 1e-300) || !mean_dist.is_finite() {
        return Err(GeometryError::DegenerateConfiguration("coincident points"));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn apply(t: &Matrix3<f64>, p: &Point) -> (f64, f64) {
    let v = t * Vector3::new(p.x, p.y, 1.0);
    (v.x / v.z, v.y / v.z)
}

/// Estimates the homography mapping `model[k]` to `image[k]` by the
/// normalized direct linear transform.
///
/// Both point sets are normalized first; the solution is the right singular
/// vector of the stacked `2n x 9` design matrix with the smallest singular
/// value. Fails when the design matrix has more than a one-dimensional
/// (numerical) null space, e.g. for collinear model points.
pub fn dlt(model: &[Point], image: &[Point]) -> Result<Homography, GeometryError> {
    if model.len() != image.len() {
        return Err(GeometryError::LengthMismatch(model.len(), image.len()));
    }
    let n = model.len();
    if n < 4 {
        return Err(GeometryError::TooFewCorrespondences(n));
    }
    if model
        .iter()
        .chain(image)
        .any(|p| !p.x.is_finite() || !p.y.is_finite())
    {
        return Err(GeometryError::DegenerateConfiguration("non-finite point"));
    }
    let t_model = normalizing_transform(model)?;
    let t_image = normalizing_transform(image)?;

    // Pad to a square system so the full right singular basis is available.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (k, (pm, pi)) in model.iter().zip(image).enumerate() {
        let (x, y) = apply(&t_model, pm);
        let (u, v) = apply(&t_image, pi);
        let r = 2 * k;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = u * x;
        a[(r, 7)] = u * y;
        a[(r, 8)] = u;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = v * x;
        a[(r + 1, 7)] = v * y;
        a[(r + 1, 8)] = v;
    }

    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or(GeometryError::DegenerateConfiguration("svd failed"))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let largest = sv[order[0]];
    let second_smallest = sv[order[7]];
    if !(largest > 0.0) || second_smallest < 1e-9 * largest {
        return Err(GeometryError::DegenerateConfiguration(
            "rank-deficient design matrix",
        ));
    }
    let h = v_t.row(order[8]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_image_inv = t_image.try_inverse().ok_or(GeometryError::Singular)?;
    Homography::from_matrix(t_image_inv * hn * t_model)
}

/// Convenience wrapper taking correspondences.
pub fn dlt_correspondences(cs: &[Correspondence]) -> Result<Homography, GeometryError> {
    let model: Vec<Point> = cs.iter().map(|c| c.model).collect();
    let image: Vec<Point> = cs.iter().map(|c| c.image).collect();
    dlt(&model, &image)
}

/// Model error `(1 / NM) * sum ||H m - x||^2` over the supplied
/// correspondences, normalized by the cell count `N * M` (not by the number
/// of points). Unprojectable points count as infinite error.
pub fn reprojection_error(h: &Homography, cs: &[Correspondence], cols: usize, rows: usize) -> f64 {
    let sum: f64 = cs
        .iter()
        .map(|c| match h.project(c.model) {
            Ok(p) => (p - c.image).norm_squared(),
            Err(_) => f64::INFINITY,
        })
        .sum();
    sum / (cols * rows) as f64
}

/// True if the three points are collinear up to `tol` relative to the squared
/// extent of the triangle.
pub(crate) fn collinear(a: &Point, b: &Point, c: &Point) -> bool {
    let ab = b - a;
    let ac = c - a;
    let cross = ab.x * ac.y - ab.y * ac.x;
    let scale = ab.norm_squared().max(ac.norm_squared());
    cross.abs() <= 1e-9 * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pts(v: &[(f64, f64)]) -> Vec<Point> {
        v.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn grid_sizes_and_order() {
        let g = model_grid(1, 1).unwrap();
        assert_eq!(g.points(), pts(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]));
        let g = model_grid(10, 6).unwrap();
        assert_eq!(g.len(), 77);
        assert_eq!(g.points().len(), 77);
        assert_eq!(g.index(3, 2), 2 * 11 + 3);
        assert_eq!(g.points()[g.index(3, 2)], Point::new(3.0, 2.0));
        assert!(matches!(
            model_grid(2, 3),
            Err(GeometryError::InvalidGrid { .. })
        ));
        assert!(model_grid(0, 0).is_err());
    }

    #[test]
    fn project_identity_and_scaling() {
        let p = Homography::identity().project(Point::new(3.0, 4.0)).unwrap();
        assert_relative_eq!(p, Point::new(3.0, 4.0), epsilon = 1e-12);
        let s = Homography::from_matrix(Matrix3::new(2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0))
            .unwrap();
        assert_relative_eq!(
            s.project(Point::new(1.0, 1.0)).unwrap(),
            Point::new(2.0, 2.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn point_at_infinity() {
        let h = Homography::from_matrix(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0))
            .unwrap();
        assert_eq!(
            h.project(Point::new(-1.0, 3.0)),
            Err(GeometryError::PointAtInfinity)
        );
    }

    #[test]
    fn normalization_is_canonical() {
        let m = Matrix3::new(2.0, 0.1, 3.0, 0.0, 2.0, 1.0, 0.01, 0.0, 1.0);
        let a = Homography::from_matrix(m).unwrap();
        let b = Homography::from_matrix(m * -7.5).unwrap();
        assert_relative_eq!(a.matrix(), b.matrix(), epsilon = 1e-15);
        assert_relative_eq!(a.matrix().norm(), 1.0, epsilon = 1e-15);
        assert!(a.matrix()[(2, 2)] >= 0.0);
        assert!(Homography::from_matrix(Matrix3::zeros()).is_err());
        assert!(Homography::from_matrix(Matrix3::new(
            1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 1.0
        ))
        .is_err());
    }

    #[test]
    fn row_major_serialization() {
        let h = Homography::from_row_major([1.0, 2.0, 3.0, 0.0, 1.0, 4.0, 0.0, 0.0, 1.0]).unwrap();
        let r = h.to_row_major();
        let s = (1.0f64 + 4.0 + 9.0 + 1.0 + 16.0 + 1.0).sqrt();
        assert_relative_eq!(r[1], 2.0 / s, epsilon = 1e-15);
        let json = serde_json::to_string(&h).unwrap();
        let back: Homography = serde_json::from_str(&json).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn dlt_identity() {
        let square = pts(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        let h = dlt(&square, &square).unwrap();
        assert_relative_eq!(h.matrix(), Homography::identity().matrix(), epsilon = 1e-10);
        let cs: Vec<_> = square
            .iter()
            .map(|p| Correspondence::new(*p, *p))
            .collect();
        assert!(reprojection_error(&h, &cs, 1, 1) < 1e-20);
    }

    #[test]
    fn dlt_rejects_collinear_and_short_input() {
        let line = pts(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]);
        let img = pts(&[(0.0, 1.0), (1.0, 2.0), (2.0, 3.5), (3.0, 5.0)]);
        assert!(matches!(
            dlt(&line, &img),
            Err(GeometryError::DegenerateConfiguration(_))
        ));
        assert_eq!(
            dlt(&line[..3], &img[..3]),
            Err(GeometryError::TooFewCorrespondences(3))
        );
        assert!(matches!(
            dlt(&line, &img[..3]),
            Err(GeometryError::LengthMismatch(4, 3))
        ));
        let same = pts(&[(1.0, 1.0); 4]);
        assert!(dlt(&same, &img).is_err());
    }

    #[test]
    fn reprojection_error_normalizes_by_cell_count() {
        let h = Homography::identity();
        let c = [Correspondence::new(Point::new(0.0, 0.0), Point::new(3.0, 4.0))];
        assert_relative_eq!(reprojection_error(&h, &c, 1, 1), 25.0, epsilon = 1e-12);
        // 10x6: one offset point still divides by N*M = 60.
        assert_relative_eq!(reprojection_error(&h, &c, 10, 6), 25.0 / 60.0, epsilon = 1e-12);
    }

    #[test]
    fn collinearity() {
        let a = Point::new(0.0, 0.0);
        assert!(collinear(&a, &Point::new(1.0, 1.0), &Point::new(5.0, 5.0)));
        assert!(!collinear(&a, &Point::new(1.0, 0.0), &Point::new(0.0, 1.0)));
    }
}
