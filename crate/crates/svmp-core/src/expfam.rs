//! Natural-parameter algebra for the univariate Gaussian family.
//!
//! A factor q(x) = N(mu, sigma^2) is stored by its natural parameters
//! (precision, mean*precision) against the sufficient statistics
//! phi(x) = (-x^2/2, x), so that lambda . phi(x) reproduces the Gaussian
//! exponent and the standard-normal prior is (1, 0). The update loops need
//! exactly five pieces of algebra: moment conversion, convex blending of
//! natural parameters, KL to the standard normal, the log partition
//! function, and its Hessian (the Fisher information matrix).

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Natural parameters (precision, mean*precision) of one Gaussian factor.
///
/// Validity (finite, precision > 0) is checked once at construction;
/// the optimizer's inner loops build values through `raw` and rely on
/// divergence detection to spot runaway states instead.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianNatural {
    precision: f64,
    mean_times_precision: f64,
}

/// Mean/variance view of a Gaussian factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianNatural {
    pub fn new(precision: f64, mean_times_precision: f64) -> Result<Self> {
        if !precision.is_finite() || precision <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "precision",
                reason: format!("must be finite and > 0, got {precision}"),
            });
        }
        if !mean_times_precision.is_finite() {
            return Err(Error::InvalidParameter {
                name: "mean_times_precision",
                reason: format!("must be finite, got {mean_times_precision}"),
            });
        }
        Ok(Self { precision, mean_times_precision })
    }

    /// Construct without validation. Update loops may transiently produce
    /// overflowed values here; `detect_divergence` is the checkpoint.
    pub(crate) fn raw(precision: f64, mean_times_precision: f64) -> Self {
        Self { precision, mean_times_precision }
    }

    /// The standard-normal factor (1, 0).
    pub fn standard_normal() -> Self {
        Self { precision: 1.0, mean_times_precision: 0.0 }
    }

    pub fn precision(&self) -> f64 {
        self.precision
    }

    pub fn mean_times_precision(&self) -> f64 {
        self.mean_times_precision
    }

    /// (mean, variance) = (mtp / precision, 1 / precision).
    pub fn moments(&self) -> Moments {
        Moments {
            mean: self.mean_times_precision / self.precision,
            variance: 1.0 / self.precision,
        }
    }

    pub fn from_moments(m: Moments) -> Result<Self> {
        if !m.variance.is_finite() || m.variance <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "variance",
                reason: format!("must be finite and > 0, got {}", m.variance),
            });
        }
        let precision = 1.0 / m.variance;
        Self::new(precision, m.mean * precision)
    }

    /// Convex combination (1 - rho) * self + rho * temp, the damped
    /// natural-gradient step. rho = 1 lands exactly on `temp`.
    pub fn blend(&self, temp: &Self, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "rho",
                reason: format!("must lie in (0, 1], got {rho}"),
            });
        }
        Ok(self.mix(temp, rho))
    }

    /// Blend arithmetic with rho assumed valid.
    pub(crate) fn mix(&self, temp: &Self, rho: f64) -> Self {
        if rho == 1.0 {
            return *temp;
        }
        Self {
            precision: (1.0 - rho) * self.precision + rho * temp.precision,
            mean_times_precision: (1.0 - rho) * self.mean_times_precision
                + rho * temp.mean_times_precision,
        }
    }

    /// KL(q || N(0,1)) = (sigma^2 + mu^2 - 1 - ln sigma^2) / 2, in nats.
    pub fn kl_to_standard_normal(&self) -> f64 {
        let m = self.moments();
        0.5 * (m.variance + m.mean * m.mean - 1.0 - m.variance.ln())
    }

    /// Log partition function
    /// A(lambda) = mtp^2 / (2 precision) - ln(precision) / 2 + ln(2 pi) / 2.
    /// Its gradient is the expected sufficient statistics
    /// (-(sigma^2 + mu^2) / 2, mu) and its Hessian is the Fisher matrix.
    pub fn log_partition(&self) -> f64 {
        0.5 * self.mean_times_precision * self.mean_times_precision / self.precision
            - 0.5 * self.precision.ln()
            + 0.5 * (2.0 * PI).ln()
    }

    /// Expected sufficient statistics E[phi(x)] = (-(sigma^2 + mu^2)/2, mu).
    pub fn expected_statistics(&self) -> [f64; 2] {
        let m = self.moments();
        [-0.5 * (m.variance + m.mean * m.mean), m.mean]
    }

    /// Closed-form Fisher information matrix, the covariance of phi(x):
    /// [[sigma^4/2 + mu^2 sigma^2, -mu sigma^2], [-mu sigma^2, sigma^2]].
    pub fn fisher(&self) -> FisherMatrix {
        let m = self.moments();
        let v = m.variance;
        FisherMatrix {
            e11: 0.5 * v * v + m.mean * m.mean * v,
            e12: -m.mean * v,
            e22: v,
        }
    }
}

impl Moments {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !variance.is_finite() || variance <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "variance",
                reason: format!("must be finite and > 0, got {variance}"),
            });
        }
        Ok(Self { mean, variance })
    }

    /// E[x^2] = variance + mean^2.
    pub fn second_moment(&self) -> f64 {
        self.variance + self.mean * self.mean
    }
}

/// Symmetric 2x2 Fisher information matrix of one factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FisherMatrix {
    e11: f64,
    e12: f64,
    e22: f64,
}

impl FisherMatrix {
    pub fn from_entries(e11: f64, e12: f64, e22: f64) -> Self {
        Self { e11, e12, e22 }
    }

    /// Entry by (row, col) in {0, 1}; the off-diagonal entries coincide.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        match (row, col) {
            (0, 0) => self.e11,
            (1, 1) => self.e22,
            (0, 1) | (1, 0) => self.e12,
            _ => panic!("FisherMatrix index out of range: ({row}, {col})"),
        }
    }

    pub fn determinant(&self) -> f64 {
        self.e11 * self.e22 - self.e12 * self.e12
    }

    pub fn trace(&self) -> f64 {
        self.e11 + self.e22
    }

    /// Eigenvalues (max, min); real because the matrix is symmetric.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let half_tr = 0.5 * self.trace();
        let disc = (half_tr * half_tr - self.determinant()).max(0.0).sqrt();
        (half_tr + disc, half_tr - disc)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.e11 > 0.0 && self.determinant() > 0.0
    }

    /// lambda_max / lambda_min.
    pub fn condition_number(&self) -> f64 {
        let (hi, lo) = self.eigenvalues();
        hi / lo
    }

    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.e11 * v[0] + self.e12 * v[1],
            self.e12 * v[0] + self.e22 * v[1],
        ]
    }

    /// Solve G x = rhs by the closed-form 2x2 inverse.
    pub fn solve(&self, rhs: [f64; 2]) -> [f64; 2] {
        let det = self.determinant();
        [
            (self.e22 * rhs[0] - self.e12 * rhs[1]) / det,
            (self.e11 * rhs[1] - self.e12 * rhs[0]) / det,
        ]
    }
}
