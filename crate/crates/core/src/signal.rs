//! 1-D statistics accumulated from an image, and their smoothed gradients.

use thiserror::Error;

use crate::image::GrayImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("signal has {0} samples, at least 3 are required")]
    TooShort(usize),
    #[error("smoothing sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
}

/// The axis a signal is indexed by.
///
/// A row sum (`sum_x I[x, y]`) is indexed by `y` and runs along [`Axis::Y`];
/// a column sum runs along [`Axis::X`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signal1D {
    values: Vec<f64>,
    axis: Axis,
    source: (usize, usize),
    sigma: Option<f64>,
}

impl Signal1D {
    /// Wraps arbitrary samples, e.g. for tests or hand-built profiles.
    pub fn new(values: Vec<f64>, axis: Axis) -> Self {
        let n = values.len();
        let source = match axis {
            Axis::X => (n, 0),
            Axis::Y => (0, n),
        };
        Self {
            values,
            axis,
            source,
            sigma: None,
        }
    }

    pub(crate) fn from_image(values: Vec<f64>, axis: Axis, img: &GrayImage) -> Self {
        Self {
            values,
            axis,
            source: (img.width(), img.height()),
            sigma: None,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    /// `(width, height)` of the image the signal was accumulated from.
    pub fn source_dims(&self) -> (usize, usize) {
        self.source
    }

    /// Gaussian sigma of the smoothing that produced this signal, if any.
    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    /// Half-width of the smoothing kernel; 1 for unsmoothed signals.
    pub fn kernel_radius(&self) -> usize {
        self.sigma.map_or(1, kernel_radius)
    }

    pub fn reversed(&self) -> Signal1D {
        let mut out = self.clone();
        out.values.reverse();
        out
    }

    /// Population standard deviation of the samples.
    pub fn std_dev(&self) -> f64 {
        let n = self.values.len();
        if n == 0 {
            return 0.0;
        }
        let mean = self.values.iter().sum::<f64>() / n as f64;
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        var.sqrt()
    }
}

pub fn kernel_radius(sigma: f64) -> usize {
    ((3.0 * sigma).ceil() as usize).max(1)
}

/// Antisymmetric derivative-of-Gaussian weights `w[j]`, `j = 1..=radius`,
/// scaled so that a unit ramp has gradient exactly 1.
fn dog_weights(sigma: f64) -> Vec<f64> {
    let r = kernel_radius(sigma);
    let mut w: Vec<f64> = (1..=r)
        .map(|j| {
            let j = j as f64;
            j * (-j * j / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let ramp: f64 = w.iter().enumerate().map(|(k, wk)| 2.0 * (k + 1) as f64 * wk).sum();
    for wk in &mut w {
        *wk /= ramp;
    }
    w
}

/// First derivative of the Gaussian-smoothed signal.
///
/// Evaluated directly as a convolution with a sampled derivative-of-Gaussian
/// kernel of radius `ceil(3 sigma)`; samples past either end replicate the
/// boundary value. Output has the input's length.
pub fn smoothed_gradient(sig: &Signal1D, sigma: f64) -> Result<Signal1D, SignalError> {
    let n = sig.len();
    if n < 3 {
        return Err(SignalError::TooShort(n));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(SignalError::InvalidSigma(sigma));
    }
    let w = dog_weights(sigma);
    let r = w.len();
    let s = sig.values();
    let at = |i: isize| s[i.clamp(0, n as isize - 1) as usize];
    let boundary = |i: usize| -> f64 {
        let i = i as isize;
        w.iter()
            .enumerate()
            .map(|(k, wk)| {
                let d = k as isize + 1;
                wk * (at(i + d) - at(i - d))
            })
            .sum()
    };
    let mut out = vec![0.0; n];
    if n > 2 * r {
        // One pass per group of four kernel taps over the interior keeps
        // the loop vectorizable.
        let m = n - 2 * r;
        let interior = &mut out[r..n - r];
        let mut k = 0;
        while k + 4 <= r {
            let (w0, w1, w2, w3) = (w[k], w[k + 1], w[k + 2], w[k + 3]);
            let d = k + 1;
            let a0 = &s[r + d..][..m];
            let a1 = &s[r + d + 1..][..m];
            let a2 = &s[r + d + 2..][..m];
            let a3 = &s[r + d + 3..][..m];
            let b0 = &s[r - d..][..m];
            let b1 = &s[r - d - 1..][..m];
            let b2 = &s[r - d - 2..][..m];
            let b3 = &s[r - d - 3..][..m];
            for x in 0..m {
                interior[x] += (w0 * (a0[x] - b0[x]) + w1 * (a1[x] - b1[x]))
                    + (w2 * (a2[x] - b2[x]) + w3 * (a3[x] - b3[x]));
            }
            k += 4;
        }
        for (k, wk) in w.iter().enumerate().skip(k) {
            let d = k + 1;
            let ahead = &s[r + d..n - r + d];
            let behind = &s[r - d..n - r - d];
            for ((o, a), b) in interior.iter_mut().zip(ahead).zip(behind) {
                *o += wk * (a - b);
            }
        }
        for i in (0..r).chain(n - r..n) {
            out[i] = boundary(i);
        }
    } else {
        for (i, o) in out.iter_mut().enumerate() {
            *o = boundary(i);
        }
    }
    Ok(Signal1D {
        values: out,
        axis: sig.axis,
        source: sig.source,
        sigma: Some(sigma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(v: Vec<f64>) -> Signal1D {
        Signal1D::new(v, Axis::X)
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = smoothed_gradient(&sig(vec![5.0; 5]), 1.0).unwrap();
        assert!(g.values().iter().all(|v| v.abs() < 1e-9));
        assert_eq!(g.len(), 5);
    }

    #[test]
    fn ramp_has_unit_gradient_away_from_ends() {
        let g = smoothed_gradient(&sig((0..20).map(f64::from).collect()), 1.0).unwrap();
        let r = kernel_radius(1.0);
        for v in &g.values()[r..20 - r] {
            assert!((v - 1.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn errors() {
        assert_eq!(
            smoothed_gradient(&sig(vec![1.0, 2.0]), 1.0),
            Err(SignalError::TooShort(2))
        );
        assert!(matches!(
            smoothed_gradient(&sig(vec![1.0; 4]), 0.0),
            Err(SignalError::InvalidSigma(_))
        ));
        assert!(smoothed_gradient(&sig(vec![1.0; 4]), f64::NAN).is_err());
    }

    #[test]
    fn tiny_sigma_still_has_a_kernel() {
        let g = smoothed_gradient(&sig(vec![0.0, 0.0, 1.0, 1.0]), 0.05).unwrap();
        assert!(g.values()[1] > 0.0 && g.values()[2] > 0.0);
        assert_eq!(g.kernel_radius(), 1);
    }

    #[test]
    fn std_dev_is_population() {
        assert!((sig(vec![1.0, 3.0]).std_dev() - 1.0).abs() < 1e-12);
        assert_eq!(sig(vec![]).std_dev(), 0.0);
    }
}
