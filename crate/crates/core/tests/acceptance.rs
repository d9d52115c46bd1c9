//! End-to-end acceptance checks against synthetic ground truth.
//!
//! Every test prints one `criterion N: PASS|FAIL` line. The tests share a
//! lock so that the timing check does not compete with the others for CPU.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::Instant;

use elgrid::eval::polygon_iou;
use elgrid::geometry::{dlt, reprojection_error};
use elgrid::ransac::{ransac_refit, RansacConfig};
use elgrid::schema::ResultFile;
use elgrid::synth::{frontal_suite, multi_module_suite, render, similarity, tilt_sweep, GroundTruth, SceneSpec};
use elgrid::{detect, Correspondence, DetectionResult, DetectorConfig, GrayImage, Homography, ModelGrid, Point};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Written to the stderr handle directly so the line survives output capture.
fn report(n: u32, title: &str, pass: bool, detail: &str) {
    let line = format!(
        "criterion {n}: {} ({title}) {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

/// Side length of the central cell under the true homography.
fn cell_side(truth: &GroundTruth) -> f64 {
    let h = truth.homography;
    let (i, j) = ((truth.cols / 2) as f64, (truth.rows / 2) as f64);
    (h.project(Point::new(i, j)).unwrap() - h.project(Point::new(i + 1.0, j)).unwrap()).norm()
}

fn lattice_rmse(r: &DetectionResult, truth: &GroundTruth) -> f64 {
    let grid = ModelGrid::new(truth.cols, truth.rows).unwrap();
    let sum: f64 = grid
        .points()
        .iter()
        .zip(truth.lattice_points())
        .map(|(m, p)| (r.h.project(*m).unwrap() - p).norm_squared())
        .sum();
    (sum / grid.len() as f64).sqrt()
}

#[test]
fn criterion_1_frontal_accuracy() {
    let _guard = serial();
    let start = Instant::now();
    let cfg = DetectorConfig::default();
    let mut failures = Vec::new();
    let (mut worst_corner, mut worst_rmse, mut min_inliers) = (0.0f64, 0.0f64, usize::MAX);
    let scenes = frontal_suite(20, 2024);
    for s in &scenes {
        assert!(s.spec.noise <= 0.05 * s.spec.contrast() + 1e-12);
        let (img, truth) = render(&s.spec, s.seed).unwrap();
        let r = match detect(&img, 10, 6, &cfg) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("{}: {e}", s.id));
                continue;
            }
        };
        let tc = truth.corner_points();
        let diag = (tc[0] - tc[2]).norm().max((tc[1] - tc[3]).norm());
        let corner = r
            .corners
            .iter()
            .zip(&tc)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
            / diag;
        let inliers = r.crossings.inliers();
        let rmse = lattice_rmse(&r, &truth) / cell_side(&truth);
        worst_corner = worst_corner.max(corner);
        worst_rmse = worst_rmse.max(rmse);
        min_inliers = min_inliers.min(inliers);
        if corner >= 0.02 || (inliers as f64) < 0.95 * 77.0 || rmse > 0.01 {
            failures.push(format!(
                "{}: corner {corner:.4} diag, {inliers} inliers, rmse {rmse:.4} cell",
                s.id
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 30.0;
    report(
        1,
        "frontal oracle accuracy",
        pass,
        &format!(
            "worst corner {:.2}% of diagonal, min inliers {min_inliers}/77, worst RMSE {:.3}% of cell, {secs:.1} s",
            100.0 * worst_corner,
            100.0 * worst_rmse
        ),
    );
    assert!(failures.is_empty(), "{failures:#?}");
    assert!(secs < 30.0, "suite took {secs:.1} s");
}

#[test]
fn criterion_2_tilt_robustness() {
    let _guard = serial();
    let cfg = DetectorConfig::default();
    let mut lines = Vec::new();
    let mut pass = true;
    for s in tilt_sweep(7) {
        let angle: u32 = s.id.trim_start_matches("tilt-").parse().unwrap();
        let (img, truth) = render(&s.spec, s.seed).unwrap();
        let outcome = catch_unwind(AssertUnwindSafe(|| detect(&img, 10, 6, &cfg)));
        let status = match outcome {
            Err(_) => {
                pass = false;
                "panic".to_string()
            }
            Ok(Ok(r)) => {
                let iou = polygon_iou(&r.corners, &truth.corner_points()).unwrap();
                if angle <= 60 && iou < 0.85 {
                    pass = false;
                }
                format!("iou {iou:.3}")
            }
            Ok(Err(e)) => {
                if angle <= 60 {
                    pass = false;
                }
                format!("error at stage {}", e.stage())
            }
        };
        lines.push(format!("{angle}deg {status}"));
    }
    report(2, "rotation robustness", pass, &lines.join(", "));
    assert!(pass, "{lines:?}");
}

#[test]
fn criterion_3_multi_module_selection() {
    let _guard = serial();
    let cfg = DetectorConfig::default();
    let mut failures = Vec::new();
    let (mut min_iou, mut max_neighbor) = (1.0f64, 0.0f64);
    for s in multi_module_suite(10, 99) {
        let (img, truth) = render(&s.spec, s.seed).unwrap();
        let r = match detect(&img, 10, 6, &cfg) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("{}: {e}", s.id));
                continue;
            }
        };
        let iou = polygon_iou(&r.corners, &truth.corner_points()).unwrap();
        let neighbor = truth
            .neighbor_polygons()
            .iter()
            .map(|q| polygon_iou(&r.corners, q).unwrap())
            .fold(0.0, f64::max);
        min_iou = min_iou.min(iou);
        max_neighbor = max_neighbor.max(neighbor);
        if iou < 0.85 || neighbor > 0.2 {
            failures.push(format!("{}: iou {iou:.3}, neighbor iou {neighbor:.3}", s.id));
        }
    }
    report(
        3,
        "multi-module selection",
        failures.is_empty(),
        &format!("min IoU {min_iou:.3}, max neighbor IoU {max_neighbor:.3}"),
    );
    assert!(failures.is_empty(), "{failures:#?}");
}

fn perspective_truth() -> Homography {
    Homography::from_matrix(Matrix3::new(
        92.0, 7.0, 310.0, -5.0, 88.0, 240.0, 0.012, -0.004, 1.0,
    ))
    .unwrap()
}

#[test]
fn criterion_4_ransac_robustness() {
    let _guard = serial();
    let h = perspective_truth();
    let grid = ModelGrid::new(10, 6).unwrap();
    let side = (h.project(Point::new(5.0, 3.0)).unwrap() - h.project(Point::new(6.0, 3.0)).unwrap()).norm();
    let cell = elgrid::crossing::central_cell_size(&h, &grid).unwrap();
    let threshold = 0.05 * cell;
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for trial in 0..25u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let truth: Vec<Point> = grid.points().iter().map(|&m| h.project(m).unwrap()).collect();
        let mut outlier = vec![false; grid.len()];
        for k in rand::seq::index::sample(&mut rng, grid.len(), 23) {
            outlier[k] = true;
        }
        let cs: Vec<Correspondence> = grid
            .points()
            .iter()
            .zip(&truth)
            .zip(&outlier)
            .map(|((&m, &p), &bad)| {
                let offset = if bad {
                    let angle = rng.random_range(0.0..std::f64::consts::TAU);
                    let dist = rng.random_range(3.0..20.0) * threshold;
                    nalgebra::Vector2::new(angle.cos(), angle.sin()) * dist
                } else {
                    nalgebra::Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 0.001 * side
                };
                Correspondence::new(m, p + offset)
            })
            .collect();
        let cfg = RansacConfig {
            seed: trial,
            ..Default::default()
        };
        let fit = ransac_refit(&cs, 10, 6, cell, &cfg).unwrap();
        let again = ransac_refit(&cs, 10, 6, cell, &cfg).unwrap();
        let clean = grid
            .points()
            .iter()
            .zip(&truth)
            .zip(&outlier)
            .filter(|(_, &bad)| !bad)
            .map(|((&m, &p), _)| (fit.homography.project(m).unwrap() - p).norm())
            .fold(0.0, f64::max)
            / side;
        worst = worst.max(clean);
        let flagged = outlier.iter().zip(&fit.inliers).all(|(&bad, &inl)| !bad || !inl);
        if clean > 0.005 || !flagged || fit != again {
            failures.push(format!(
                "trial {trial}: clean error {clean:.5} cell, outliers flagged {flagged}, deterministic {}",
                fit == again
            ));
        }
    }
    report(
        4,
        "RANSAC robustness",
        failures.is_empty(),
        &format!("25 trials, worst clean-point error {:.4}% of cell", 100.0 * worst),
    );
    assert!(failures.is_empty(), "{failures:#?}");
}

fn normalized(h: &Homography) -> Matrix3<f64> {
    let m = *h.matrix();
    m / m.norm()
}

#[test]
fn criterion_5_dlt_roundtrip() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..1000 {
        let m = Matrix3::new(
            rng.random_range(40.0..160.0),
            rng.random_range(-30.0..30.0),
            rng.random_range(0.0..1000.0),
            rng.random_range(-30.0..30.0),
            rng.random_range(40.0..160.0),
            rng.random_range(0.0..1000.0),
            rng.random_range(-0.03..0.03),
            rng.random_range(-0.03..0.03),
            1.0,
        );
        let h = Homography::from_matrix(m).unwrap();
        let n = rng.random_range(4..=16);
        let model: Vec<Point> = (0..n)
            .map(|_| Point::new(rng.random_range(0.0..10.0), rng.random_range(0.0..6.0)))
            .collect();
        let image: Vec<Point> = model.iter().map(|&p| h.project(p).unwrap()).collect();
        let est = dlt(&model, &image).unwrap();
        let err = (normalized(&est) - normalized(&h)).norm();
        worst = worst.max(err);
        failures += (err >= 1e-8) as usize;
    }
    report(
        5,
        "DLT round trip",
        failures == 0,
        &format!("1000 trials, worst relative error {worst:.2e}"),
    );
    assert_eq!(failures, 0, "worst relative error {worst:e}");
}

#[test]
fn criterion_6_error_normalization_and_threshold() {
    let _guard = serial();
    let h = Homography::from_matrix(Matrix3::new(100.0, 0.0, 50.0, 0.0, 100.0, 40.0, 0.0, 0.0, 1.0)).unwrap();
    let grid = ModelGrid::new(10, 6).unwrap();
    let mut cs: Vec<Correspondence> = grid
        .points()
        .iter()
        .map(|&m| Correspondence::new(m, h.project(m).unwrap()))
        .collect();
    cs[0].image.x += 3.0;
    cs[0].image.y += 4.0;
    cs[40].image.x -= 6.0;
    cs[40].image.y += 8.0;
    // (25 + 100) / (10 * 6), not divided by the 77 points.
    let err = reprojection_error(&h, &cs, 10, 6);
    let norm_ok = (err - 125.0 / 60.0).abs() < 1e-12;

    let cell = 140.0;
    let threshold = 0.05 * cell;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cs: Vec<Correspondence> = grid
        .points()
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let p = h.project(m).unwrap();
            let offset = if k % 3 == 0 {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                rng.random_range(0.5..1.5) * threshold * nalgebra::Vector2::new(angle.cos(), angle.sin())
            } else {
                nalgebra::Vector2::zeros()
            };
            Correspondence::new(m, p + offset)
        })
        .collect();
    let fit = ransac_refit(&cs, 10, 6, cell, &RansacConfig::default()).unwrap();
    let consistent = cs.iter().zip(&fit.inliers).all(|(c, &inl)| {
        let d = (fit.homography.project(c.model).unwrap() - c.image).norm();
        inl == (d <= threshold)
    });
    let both = fit.inliers.iter().any(|&b| b) && fit.inliers.iter().any(|&b| !b);
    let threshold_ok = fit.threshold == threshold && consistent && both;
    report(
        6,
        "model error and inlier rule",
        norm_ok && threshold_ok,
        &format!("error {err:.6} (expected {:.6}), threshold {} px", 125.0 / 60.0, fit.threshold),
    );
    assert!(norm_ok, "error {err}");
    assert_eq!(fit.threshold, threshold);
    assert!(consistent && both, "inlier flags {:?}", fit.inliers);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn criterion_7_timing() {
    let _guard = serial();
    let (w, h) = (2500, 2000);
    let mut spec = SceneSpec::new(10, 6, w, h, similarity(10, 6, 150.0, 0.3, Point::new(1249.5, 999.5)));
    spec.noise = 0.02;
    let (img, _) = render(&spec, 11).unwrap();
    let cfg = DetectorConfig::default();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let runs: Vec<_> = pool.install(|| {
        detect(&img, 10, 6, &cfg).unwrap();
        (0..5).map(|_| detect(&img, 10, 6, &cfg).unwrap().timings).collect()
    });
    let total = median(runs.iter().map(|t| t.total).collect());
    let module = median(runs.iter().map(|t| t.module).collect());
    let share = module / total;
    let pass = total <= 500.0 && share <= 0.2;
    report(
        7,
        "single-thread timing",
        pass,
        &format!(
            "median total {total:.1} ms, module {module:.1} ms ({:.1}% of total)",
            100.0 * share
        ),
    );
    assert!(total <= 500.0, "median total {total} ms");
    assert!(share <= 0.2, "module share {share}");
}

#[test]
fn criterion_8_determinism() {
    let _guard = serial();
    let s = &frontal_suite(1, 8)[0];
    let cfg = DetectorConfig {
        seed: 17,
        ..Default::default()
    };
    let run = || {
        let (img, _) = render(&s.spec, s.seed).unwrap();
        let r = detect(&img, 10, 6, &cfg).unwrap();
        serde_json::to_string(&ResultFile::new(&s.id, &r, false)).unwrap()
    };
    let (a, b) = (run(), run());
    report(8, "determinism", a == b, &format!("{} bytes of JSON", a.len()));
    assert_eq!(a, b);
}

fn random_image(rng: &mut ChaCha8Rng) -> GrayImage {
    let w = rng.random_range(2..=96);
    let h = rng.random_range(2..=96);
    match rng.random_range(0..6) {
        0 => GrayImage::filled(w, h, 0.0).unwrap(),
        1 => GrayImage::filled(w, h, 1.0).unwrap(),
        2 => GrayImage::from_fn(w, h, |_, _| rng.random::<f32>()).unwrap(),
        3 => {
            let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
            let (x1, y1) = (rng.random_range(x0..=w), rng.random_range(y0..=h));
            let hi = rng.random::<f32>();
            GrayImage::from_fn(w, h, |x, y| {
                if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
                    hi
                } else {
                    0.05
                }
            })
            .unwrap()
        }
        4 => {
            let (a, b) = (rng.random::<f32>(), rng.random::<f32>());
            GrayImage::from_fn(w, h, |x, y| (a * x as f32 / w as f32 + b * y as f32 / h as f32) * 0.5).unwrap()
        }
        _ => {
            let mut spec = SceneSpec::new(3, 2, w.max(8), h.max(8), Homography::identity());
            spec.cell_jitter = 0.0;
            let cellpx = (spec.width.min(spec.height) as f64 / 4.0).max(1.0);
            spec.homography = similarity(3, 2, cellpx, rng.random_range(-20.0..20.0), Point::new(spec.width as f64 / 2.0, spec.height as f64 / 2.0));
            spec.noise = rng.random_range(0.0..0.2);
            match render(&spec, rng.random()) {
                Ok((img, _)) => img,
                Err(_) => GrayImage::from_fn(w, h, |_, _| rng.random::<f32>()).unwrap(),
            }
        }
    }
}

#[test]
fn criterion_9_totality() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = DetectorConfig::default();
    let (mut ok, mut errors, mut panics) = (0, 0, 0);
    for _ in 0..1000 {
        let img = random_image(&mut rng);
        let cols = rng.random_range(1..=10);
        let rows = rng.random_range(1..=cols);
        match catch_unwind(AssertUnwindSafe(|| detect(&img, cols, rows, &cfg))) {
            Ok(Ok(_)) => ok += 1,
            Ok(Err(e)) => {
                let _ = e.stage();
                errors += 1;
            }
            Err(_) => panics += 1,
        }
    }
    report(
        9,
        "totality fuzz",
        panics == 0,
        &format!("1000 images: {ok} detected, {errors} typed errors, {panics} panics"),
    );
    assert_eq!(panics, 0);
}
