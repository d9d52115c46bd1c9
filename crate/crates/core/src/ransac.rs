//! Robust homography refit from crossing-point correspondences.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{collinear, dlt, reprojection_error, Correspondence, GeometryError, Homography, Point};

const MINIMAL_SAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Number of minimal samples drawn.
    pub iterations: usize,
    /// Inlier threshold as a fraction of the cell size.
    pub inlier_fraction: f64,
    /// Minimum share of correspondences the best consensus set must hold.
    pub min_inlier_fraction: f64,
    /// Stop sampling once the consensus set exceeds this share.
    pub early_exit_fraction: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            inlier_fraction: 0.05,
            min_inlier_fraction: 0.25,
            early_exit_fraction: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    pub homography: Homography,
    /// Inlier flag per input correspondence, evaluated under `homography`.
    pub inliers: Vec<bool>,
    /// Model error over the flagged inliers, normalized by `N * M`.
    pub error: f64,
    /// Inlier distance threshold in pixels.
    pub threshold: f64,
    /// Minimal samples actually drawn.
    pub iterations: usize,
    /// Size of the best minimal-sample consensus set.
    pub consensus: usize,
}

impl RansacFit {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn consensus(h: &Homography, cs: &[Correspondence], threshold: f64, mask: &mut [bool]) -> usize {
    let t2 = threshold * threshold;
    let mut count = 0;
    for (c, m) in cs.iter().zip(mask.iter_mut()) {
        *m = match h.project(c.model) {
            Ok(p) => (p - c.image).norm_squared() <= t2,
            Err(_) => false,
        };
        count += *m as usize;
    }
    count
}

fn any_three_collinear(p: &[Point; 4]) -> bool {
    collinear(&p[0], &p[1], &p[2])
        || collinear(&p[0], &p[1], &p[3])
        || collinear(&p[0], &p[2], &p[3])
        || collinear(&p[1], &p[2], &p[3])
}

/// Finds the largest set of correspondences consistent with one homography
/// and refits on it.
///
/// Each iteration draws four correspondences, fits them by DLT and counts the
/// points whose projection lies within `inlier_fraction * cell_px` of the
/// detection. Samples with three collinear model points are skipped; they
/// still count as iterations. The final homography is the DLT over the best
/// consensus set (falling back to the sample fit if that is worse on the same
/// set), and inlier flags are recomputed under it.
pub fn ransac_refit(
    cs: &[Correspondence],
    cols: usize,
    rows: usize,
    cell_px: f64,
    cfg: &RansacConfig,
) -> Result<RansacFit, GeometryError> {
    let n = cs.len();
    if n < 4 {
        return Err(GeometryError::InsufficientConsensus {
            best: 0,
            total: n,
            required: 4,
        });
    }
    let threshold = cfg.inlier_fraction * cell_px;
    // A minimal sample always agrees with itself; support must go beyond it.
    let required = ((cfg.min_inlier_fraction * n as f64).ceil() as usize).max(MINIMAL_SAMPLE + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Homography, Vec<bool>)> = None;
    let mut mask = vec![false; n];
    let mut drawn = 0;

    for _ in 0..cfg.iterations {
        drawn += 1;
        let idx = sample(&mut rng, n, MINIMAL_SAMPLE);
        let pick = [idx.index(0), idx.index(1), idx.index(2), idx.index(3)];
        let model = pick.map(|k| cs[k].model);
        if any_three_collinear(&model) {
            continue;
        }
        let image = pick.map(|k| cs[k].image);
        let Ok(h) = dlt(&model, &image) else {
            continue;
        };
        let count = consensus(&h, cs, threshold, &mut mask);
        if best.as_ref().is_none_or(|(b, _, _)| count > *b) {
            best = Some((count, h, mask.clone()));
            if count as f64 > cfg.early_exit_fraction * n as f64 {
                break;
            }
        }
    }

    let (count, sample_h, best_mask) = match best {
        Some(b) if b.0 >= required => b,
        other => {
            return Err(GeometryError::InsufficientConsensus {
                best: other.map_or(0, |b| b.0),
                total: n,
                required,
            })
        }
    };

    let members: Vec<Correspondence> = cs
        .iter()
        .zip(&best_mask)
        .filter(|(_, &m)| m)
        .map(|(c, _)| *c)
        .collect();
    let homography = match dlt_members(&members) {
        Some(refit)
            if reprojection_error(&refit, &members, cols, rows)
                <= reprojection_error(&sample_h, &members, cols, rows) =>
        {
            refit
        }
        _ => sample_h,
    };

    let mut inliers = vec![false; n];
    consensus(&homography, cs, threshold, &mut inliers);
    let flagged: Vec<Correspondence> = cs
        .iter()
        .zip(&inliers)
        .filter(|(_, &m)| m)
        .map(|(c, _)| *c)
        .collect();
    let error = reprojection_error(&homography, &flagged, cols, rows);
    Ok(RansacFit {
        homography,
        inliers,
        error,
        threshold,
        iterations: drawn,
        consensus: count,
    })
}

fn dlt_members(members: &[Correspondence]) -> Option<Homography> {
    let model: Vec<Point> = members.iter().map(|c| c.model).collect();
    let image: Vec<Point> = members.iter().map(|c| c.image).collect();
    dlt(&model, &image).ok()
}
