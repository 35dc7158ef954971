//! Dirichlet problem instances: domain geometry, nonlinearity, exterior data.

use serde::{Deserialize, Serialize};

use crate::config::OperatorConfig;
use crate::controls::ControlSetSpec;
use crate::error::{FracError, Result};
use crate::grid::{AxisBox, ExteriorRule};
use crate::nonlin::Nonlinearity;

/// Piecewise-linear graph function for epigraph domains.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PiecewiseLinear {
    /// Breakpoints in the first exterior coordinate, strictly increasing.
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if n == 0 {
            return 0.0;
        }
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let k = self.xs.partition_point(|&v| v <= x).min(n - 1);
        let (x0, x1) = (self.xs[k - 1], self.xs[k]);
        let (y0, y1) = (self.ys[k - 1], self.ys[k]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// Domain geometry of a Dirichlet problem, truncated to the sampling box.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Ball { radius: f64, center: Vec<f64> },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Slab `0 < x_n < height` truncating the upper half-space.
    Strip { height: f64 },
    /// `x_n > φ(x')`; φ depends on the first exterior coordinate only.
    Epigraph { phi: PiecewiseLinear },
    /// `|x'| < radius`, truncated in `x_n` by the box.
    Cylinder { radius: f64 },
}

impl Geometry {
    pub fn ball(radius: f64) -> Geometry {
        Geometry::Ball { radius, center: vec![] }
    }

    /// Is the point an interior point of the domain?
    pub fn contains(&self, x: &[f64]) -> bool {
        let n = x.len();
        match self {
            Geometry::Ball { radius, center } => {
                let d2: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(k, &xi)| {
                        let c = center.get(k).copied().unwrap_or(0.0);
                        (xi - c) * (xi - c)
                    })
                    .sum();
                d2 < radius * radius
            }
            Geometry::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&xi, (&l, &h))| xi > l && xi < h),
            Geometry::Strip { height } => x[n - 1] > 0.0 && x[n - 1] < *height,
            Geometry::Epigraph { phi } => x[n - 1] > phi.eval(x[0]),
            Geometry::Cylinder { radius } => {
                let r2: f64 = x[..n - 1].iter().map(|v| v * v).sum();
                r2 < radius * radius
            }
        }
    }

    /// Vertical distance to the domain boundary, used by the asymptotic
    /// binning (exact for strips and half-spaces).
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        let n = x.len();
        match self {
            Geometry::Ball { radius, center } => {
                let d: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(k, &xi)| {
                        let c = center.get(k).copied().unwrap_or(0.0);
                        (xi - c) * (xi - c)
                    })
                    .sum::<f64>()
                    .sqrt();
                radius - d
            }
            Geometry::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&xi, (&l, &h))| (xi - l).min(h - xi))
                .fold(f64::INFINITY, f64::min),
            Geometry::Strip { .. } => x[n - 1],
            Geometry::Epigraph { phi } => x[n - 1] - phi.eval(x[0]),
            Geometry::Cylinder { radius } => {
                let r: f64 = x[..n - 1].iter().map(|v| v * v).sum::<f64>().sqrt();
                radius - r
            }
        }
    }

    /// Bounding box of the interior region clipped to `grid`.
    pub fn bounding(&self, grid: &AxisBox) -> (Vec<f64>, Vec<f64>) {
        let n = grid.dim();
        match self {
            Geometry::Ball { radius, center } => {
                let lo = (0..n)
                    .map(|k| center.get(k).copied().unwrap_or(0.0) - radius)
                    .collect();
                let hi = (0..n)
                    .map(|k| center.get(k).copied().unwrap_or(0.0) + radius)
                    .collect();
                (lo, hi)
            }
            Geometry::Box { lo, hi } => (lo.clone(), hi.clone()),
            Geometry::Strip { height } => {
                let mut lo = grid.lo.clone();
                let mut hi = grid.hi.clone();
                lo[n - 1] = 0.0;
                hi[n - 1] = *height;
                (lo, hi)
            }
            Geometry::Epigraph { .. } | Geometry::Cylinder { .. } => {
                (grid.lo.clone(), grid.hi.clone())
            }
        }
    }
}

/// A full Dirichlet problem instance `-F_s u = f(u)` with exterior data.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProblemSpec {
    pub geometry: Geometry,
    pub config: OperatorConfig,
    pub controls: ControlSetSpec,
    pub f: Nonlinearity,
    pub exterior_data: ExteriorRule,
    /// Sampling box; must contain the geometry with margin >= 2h.
    pub grid_box: AxisBox,
    pub h: f64,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.h <= 0.0 {
            return Err(FracError::InvalidConfig("h must be positive".into()));
        }
        let (lo, hi) = self.geometry.bounding(&self.grid_box);
        let needs_margin = matches!(self.geometry, Geometry::Ball { .. } | Geometry::Box { .. });
        if needs_margin && !crate::grid::fits_with_margin(&self.grid_box, &lo, &hi, self.h) {
            return Err(FracError::GeometryTooLarge(2.0 * self.h));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<ProblemSpec> {
        let spec: ProblemSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::ControlSetSpec;

    #[test]
    fn json_round_trip() {
        let spec = ProblemSpec {
            geometry: Geometry::Ball { radius: 1.0, center: vec![0.0, 0.0] },
            config: OperatorConfig::new(2, 0.5, 0.5, 2.0),
            controls: ControlSetSpec::bellman(2, 0.5, 2.0, 3, 4),
            f: Nonlinearity::constant(1.0),
            exterior_data: ExteriorRule::Zero,
            grid_box: AxisBox::cube(2, 1.2),
            h: 0.05,
        };
        let text = spec.to_json();
        let back = ProblemSpec::from_json(&text).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn margin_validation() {
        let spec = ProblemSpec {
            geometry: Geometry::Ball { radius: 1.0, center: vec![0.0, 0.0] },
            config: OperatorConfig::new(2, 0.5, 0.5, 2.0),
            controls: ControlSetSpec::singleton(2),
            f: Nonlinearity::constant(0.0),
            exterior_data: ExteriorRule::Zero,
            grid_box: AxisBox::cube(2, 1.05),
            h: 0.05,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn geometry_membership() {
        let ball = Geometry::Ball { radius: 1.0, center: vec![0.0, 0.0] };
        assert!(ball.contains(&[0.5, 0.0]));
        assert!(!ball.contains(&[1.0, 0.1]));
        let strip = Geometry::Strip { height: 2.0 };
        assert!(strip.contains(&[5.0, 1.0]));
        assert!(!strip.contains(&[0.0, -0.1]));
        let epi = Geometry::Epigraph {
            phi: PiecewiseLinear { xs: vec![-1.0, 0.0, 1.0], ys: vec![1.0, 0.0, 1.0] },
        };
        assert!(epi.contains(&[0.0, 0.5]));
        assert!(!epi.contains(&[-1.0, 0.5]));
        assert!((epi.boundary_distance(&[0.5, 1.0]) - 0.5).abs() < 1e-12);
    }
}
