use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative diagonal jitter added before every factorization.
pub const JITTER: f64 = 1e-10;

/// Squared-exponential covariance `k(x, x') = s * exp(-|x - x'|^2 / (2 l^2))`.
///
/// `signal_scale` is the prior variance `k(x, x)`; the same value plays the
/// role of the normalizer used by the inducing-point criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    signal_scale: f64,
    length_scale: f64,
}

impl Kernel {
    pub fn new(signal_scale: f64, length_scale: f64) -> Result<Self> {
        if !(signal_scale.is_finite() && signal_scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "signal_scale must be positive, got {signal_scale}"
            )));
        }
        if !(length_scale.is_finite() && length_scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "length_scale must be positive, got {length_scale}"
            )));
        }
        Ok(Kernel {
            signal_scale,
            length_scale,
        })
    }

    pub fn signal_scale(&self) -> f64 {
        self.signal_scale
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    /// `theta = 2 l^2`, the denominator of the unit-height correlation.
    pub fn theta(&self) -> f64 {
        2.0 * self.length_scale * self.length_scale
    }

    pub fn prior_variance(&self) -> f64 {
        self.signal_scale
    }

    pub fn jitter(&self) -> f64 {
        JITTER * self.signal_scale
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.signal_scale * self.correlation(x, y)
    }

    /// Unit-height correlation `exp(-|x - y|^2 / theta)`.
    pub fn correlation(&self, x: &[f64], y: &[f64]) -> f64 {
        (-sq_dist(x, y) / self.theta()).exp()
    }

    /// Derivative of `k(x, y)` with respect to coordinate `dim` of `y`.
    pub fn grad_second(&self, x: &[f64], y: &[f64], dim: usize) -> f64 {
        self.eval(x, y) * 2.0 * (x[dim] - y[dim]) / self.theta()
    }
}

pub fn kernel_eval(kernel: &Kernel, x: &[f64], y: &[f64]) -> f64 {
    kernel.eval(x, y)
}

pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_distance_is_signal_scale() {
        let k = Kernel::new(1.0, 1.0).unwrap();
        assert_eq!(k.eval(&[0.3, -1.2], &[0.3, -1.2]), 1.0);
    }

    #[test]
    fn decays_to_zero() {
        let k = Kernel::new(2.0, 1.0).unwrap();
        assert!(k.eval(&[0.0, 0.0], &[1e3, 0.0]) < 1e-300);
    }

    #[test]
    fn one_length_scale_apart() {
        let k = Kernel::new(0.90, 0.85).unwrap();
        assert_relative_eq!(
            k.eval(&[0.0, 0.0], &[0.85, 0.0]),
            0.90 * (-0.5f64).exp(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Kernel::new(0.0, 1.0).is_err());
        assert!(Kernel::new(1.0, -1.0).is_err());
        assert!(Kernel::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let k = Kernel::new(1.3, 0.7).unwrap();
        let x = [0.2, -0.4];
        let y = [0.5, 0.1];
        let h = 1e-6;
        for d in 0..2 {
            let mut yp = y;
            let mut ym = y;
            yp[d] += h;
            ym[d] -= h;
            let fd = (k.eval(&x, &yp) - k.eval(&x, &ym)) / (2.0 * h);
            assert_relative_eq!(k.grad_second(&x, &y, d), fd, max_relative = 1e-7);
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(
            s in 0.1f64..5.0, l in 0.1f64..3.0,
            a in prop::array::uniform2(-5.0f64..5.0),
            b in prop::array::uniform2(-5.0f64..5.0),
        ) {
            let k = Kernel::new(s, l).unwrap();
            prop_assert_eq!(k.eval(&a, &b), k.eval(&b, &a));
            prop_assert!(k.eval(&a, &b) <= k.eval(&a, &a));
            prop_assert!(k.eval(&a, &b) >= 0.0);
        }
    }
}
