use elgrid::image::{col_sum, profiles, row_sum};
use elgrid::signal::smoothed_gradient;
use elgrid::{Axis, GrayImage, Signal1D};
use proptest::prelude::*;

fn image_strategy() -> impl Strategy<Value = GrayImage> {
    (2usize..70, 2usize..70).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0f32..=1.0, w * h).prop_map(move |d| GrayImage::new(w, h, d).unwrap())
    })
}

fn pair_strategy() -> impl Strategy<Value = (GrayImage, GrayImage)> {
    (2usize..50, 2usize..50).prop_flat_map(|(w, h)| {
        (
            prop::collection::vec(0.0f32..=1.0, w * h),
            prop::collection::vec(0.0f32..=1.0, w * h),
        )
            .prop_map(move |(a, b)| (GrayImage::new(w, h, a).unwrap(), GrayImage::new(w, h, b).unwrap()))
    })
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #[test]
    fn profile_totals_agree(img in image_strategy()) {
        let (rows, cols) = profiles(&img);
        let naive: f64 = img.data().iter().map(|&v| v as f64).sum();
        let tol = 1e-4 * (img.width() * img.height()) as f64;
        prop_assert!((rows.values().iter().sum::<f64>() - naive).abs() <= tol);
        prop_assert!((cols.values().iter().sum::<f64>() - naive).abs() <= tol);
        prop_assert!((img.total() - naive).abs() <= tol);
    }

    #[test]
    fn profiles_match_naive_sums(img in image_strategy()) {
        let (w, h) = (img.width(), img.height());
        let rows: Vec<f64> = (0..h).map(|y| (0..w).map(|x| img.get(x, y) as f64).sum()).collect();
        let cols: Vec<f64> = (0..w).map(|x| (0..h).map(|y| img.get(x, y) as f64).sum()).collect();
        prop_assert_eq!(row_sum(&img).len(), h);
        prop_assert_eq!(col_sum(&img).len(), w);
        prop_assert!(close(row_sum(&img).values(), &rows, 1e-4 * w as f64));
        prop_assert!(close(col_sum(&img).values(), &cols, 1e-4 * h as f64));
    }

    #[test]
    fn profiles_are_linear((a, b) in pair_strategy(), s in 0.0f32..=1.0) {
        let (w, h) = (a.width(), a.height());
        let mix = GrayImage::from_fn(w, h, |x, y| s * a.get(x, y) + (1.0 - s) * b.get(x, y)).unwrap();
        let (ra, ca) = profiles(&a);
        let (rb, cb) = profiles(&b);
        let (rm, cm) = profiles(&mix);
        let s = s as f64;
        let rows: Vec<f64> = ra.values().iter().zip(rb.values()).map(|(x, y)| s * x + (1.0 - s) * y).collect();
        let cols: Vec<f64> = ca.values().iter().zip(cb.values()).map(|(x, y)| s * x + (1.0 - s) * y).collect();
        prop_assert!(close(rm.values(), &rows, 1e-4 * w as f64));
        prop_assert!(close(cm.values(), &cols, 1e-4 * h as f64));
    }

    #[test]
    fn bilinear_is_exact_on_affine_images(
        w in 3usize..40,
        h in 3usize..40,
        gx in -0.01f64..0.01,
        gy in -0.01f64..0.01,
        fu in 0.0f64..1.0,
        fv in 0.0f64..1.0,
    ) {
        let f = |x: f64, y: f64| 0.5 + gx * x + gy * y;
        let img = GrayImage::from_fn(w, h, |x, y| f(x as f64, y as f64) as f32).unwrap();
        let (u, v) = (fu * (w - 1) as f64, fv * (h - 1) as f64);
        prop_assert!((img.bilinear(u, v) - f(u, v)).abs() < 1e-6);
        prop_assert!(img.contains(u, v));
    }
}

fn signal_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 3..300)
}

proptest! {
    #[test]
    fn gradient_anticommutes_with_reversal(v in signal_strategy(), sigma in 0.3f64..20.0) {
        let s = Signal1D::new(v, Axis::X);
        let forward = smoothed_gradient(&s, sigma).unwrap();
        let backward = smoothed_gradient(&s.reversed(), sigma).unwrap();
        let n = s.len();
        for i in 0..n {
            prop_assert!((forward.values()[i] + backward.values()[n - 1 - i]).abs() < 1e-9);
        }
    }

    #[test]
    fn mirror_symmetric_signal_has_odd_gradient(half in prop::collection::vec(0.0f64..50.0, 2..150), sigma in 0.5f64..10.0) {
        let mut v = half.clone();
        v.extend(half.iter().rev());
        let n = v.len();
        let g = smoothed_gradient(&Signal1D::new(v, Axis::Y), sigma).unwrap();
        for i in 0..n {
            prop_assert!((g.values()[i] + g.values()[n - 1 - i]).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_is_linear(a in signal_strategy(), c in -5.0f64..5.0, offset in -50.0f64..50.0, sigma in 0.5f64..10.0) {
        let scaled: Vec<f64> = a.iter().map(|x| c * x + offset).collect();
        let g = smoothed_gradient(&Signal1D::new(a, Axis::X), sigma).unwrap();
        let gs = smoothed_gradient(&Signal1D::new(scaled, Axis::X), sigma).unwrap();
        for (x, y) in g.values().iter().zip(gs.values()) {
            prop_assert!((c * x - y).abs() < 1e-8 * (1.0 + x.abs() * c.abs()));
        }
    }

    #[test]
    fn ramp_gradient_is_its_slope(n in 20usize..200, slope in -3.0f64..3.0, sigma in 0.5f64..3.0) {
        let v: Vec<f64> = (0..n).map(|i| slope * i as f64).collect();
        let g = smoothed_gradient(&Signal1D::new(v, Axis::X), sigma).unwrap();
        let r = g.kernel_radius();
        for i in r..n.saturating_sub(r) {
            prop_assert!((g.values()[i] - slope).abs() < 1e-9);
        }
    }
}
