use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{FracError, Result};

/// Normalization constant of the fractional Laplacian,
/// `C_{n,s} = 4^s s Γ(n/2 + s) / (π^{n/2} Γ(1 - s))`,
/// chosen so that the Fourier symbol of `(-Δ)^s` is `|ξ|^{2s}`.
pub fn c_ns(n: usize, s: f64) -> f64 {
    4f64.powf(s) * s * gamma(n as f64 / 2.0 + s) / (std::f64::consts::PI.powf(n as f64 / 2.0) * gamma(1.0 - s))
}

/// Parameters shared by every operator evaluation: dimension, fractional
/// order, ellipticity bounds and quadrature cutoffs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OperatorConfig {
    /// Space dimension, `n >= 2`.
    pub n: usize,
    /// Fractional order in `(0, 1)`.
    pub s: f64,
    /// Lower eigenvalue bound `θ > 0` of the admissible matrices.
    pub theta: f64,
    /// Upper eigenvalue bound `Θ >= θ`.
    pub big_theta: f64,
    /// Normalization constant of `(-Δ)^s`; defaults to [`c_ns`].
    pub c_ns: f64,
    /// Inner quadrature cutoff (length units).
    pub near_radius: f64,
    /// Outer truncation radius (length units).
    pub far_radius: f64,
}

impl OperatorConfig {
    pub fn new(n: usize, s: f64, theta: f64, big_theta: f64) -> Self {
        OperatorConfig {
            n,
            s,
            theta,
            big_theta,
            c_ns: c_ns(n, s),
            near_radius: 0.05,
            far_radius: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(FracError::InvalidConfig(format!("n = {} must be >= 2", self.n)));
        }
        if self.n > 3 {
            return Err(FracError::UnsupportedDimension(self.n));
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(FracError::InvalidConfig(format!("s = {} must lie in (0,1)", self.s)));
        }
        if !(self.theta > 0.0 && self.big_theta >= self.theta) {
            return Err(FracError::InvalidConfig(format!(
                "eigenvalue bounds must satisfy 0 < θ <= Θ, got θ = {}, Θ = {}",
                self.theta, self.big_theta
            )));
        }
        if self.c_ns <= 0.0 {
            return Err(FracError::InvalidConfig("c_ns must be positive".into()));
        }
        if self.near_radius <= 0.0 || self.far_radius <= self.near_radius {
            return Err(FracError::InvalidConfig(
                "quadrature radii must satisfy 0 < near < far".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_ns_closed_forms() {
        // n = 2, s = 1/2: C = 4^{1/2} (1/2) Γ(3/2) / (π Γ(1/2)) = 1/(2π).
        let c = c_ns(2, 0.5);
        assert!((c - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-14);
        // n = 3, s = 1/2: Γ(2) = 1, Γ(1/2) = √π, so C = 1/π².
        let c3 = c_ns(3, 0.5);
        assert!((c3 - 1.0 / std::f64::consts::PI.powi(2)).abs() < 1e-14);
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let mut cfg = OperatorConfig::new(2, 0.5, 0.5, 2.0);
        assert!(cfg.validate().is_ok());
        cfg.s = 1.0;
        assert!(cfg.validate().is_err());
        cfg.s = 0.5;
        cfg.theta = 3.0;
        assert!(cfg.validate().is_err());
        cfg.theta = 0.5;
        cfg.n = 1;
        assert!(cfg.validate().is_err());
    }
}
