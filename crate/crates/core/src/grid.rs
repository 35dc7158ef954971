//! Uniform lattice samples with an analytic exterior continuation.

use serde::{Deserialize, Serialize};

use crate::error::{FracError, Result};
use crate::expr::Expr;

/// Axis-aligned box, the sampling region of a [`GridFunction`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        AxisBox { lo, hi }
    }

    pub fn cube(n: usize, half_width: f64) -> Self {
        AxisBox { lo: vec![-half_width; n], hi: vec![half_width; n] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&xi, (&lo, &hi))| xi >= lo && xi <= hi)
    }

    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }

    /// Distance from `x` to the nearest face, negative outside.
    pub fn margin(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&xi, (&lo, &hi))| (xi - lo).min(hi - xi))
            .fold(f64::INFINITY, f64::min)
    }
}

/// How a grid function continues outside its sampling box.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExteriorRule {
    Zero,
    Constant { c: f64 },
    Analytic { expr: Expr },
    /// Even reflection across the hyperplane `x[axis] = level`.
    ReflectPlane { axis: usize, level: f64 },
    /// Piecewise-constant continuation for slab truncations of half-space
    /// problems: `below` for `x[axis] <= 0`, `above` for `x[axis] >= height`,
    /// `sides` elsewhere outside the box.
    SlabSplit { axis: usize, below: f64, above: f64, sides: f64, height: f64 },
}

impl ExteriorRule {
    /// The exterior as an expression, when it has one.
    pub fn as_expr(&self) -> Option<Expr> {
        match self {
            ExteriorRule::Zero => Some(Expr::default()),
            ExteriorRule::Constant { c } => Some(Expr::constant(*c)),
            ExteriorRule::Analytic { expr } => Some(expr.clone()),
            ExteriorRule::ReflectPlane { .. } | ExteriorRule::SlabSplit { .. } => None,
        }
    }

    /// Largest absolute value the rule can take (used for membership bounds).
    pub fn sup_abs(&self) -> Option<f64> {
        match self {
            ExteriorRule::Zero => Some(0.0),
            ExteriorRule::Constant { c } => Some(c.abs()),
            ExteriorRule::SlabSplit { below, above, sides, .. } => {
                Some(below.abs().max(above.abs()).max(sides.abs()))
            }
            _ => None,
        }
    }
}

/// Lattice sample of a function on a box together with the rule for values
/// outside the box. This is the object every operator acts on.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridFunction {
    pub bounds: AxisBox,
    pub h: f64,
    /// Nodes per axis; node `(i_0, ..)` sits at `lo + i * h`.
    pub dims: Vec<usize>,
    /// Row-major values, last axis fastest.
    pub values: Vec<f64>,
    pub exterior: ExteriorRule,
    /// Set when the function was sampled from a closed form; evaluation then
    /// bypasses interpolation so quadrature error is not polluted by `O(h^2)`
    /// interpolation error.
    pub analytic: Option<Expr>,
}

impl GridFunction {
    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn node_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let mut f = 0;
        for (d, &i) in self.dims.iter().zip(idx) {
            debug_assert!(i < *d);
            f = f * d + i;
        }
        f
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for k in (0..self.dims.len()).rev() {
            idx[k] = flat % self.dims[k];
            flat /= self.dims[k];
        }
        idx
    }

    pub fn node_coord(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .zip(&self.bounds.lo)
            .map(|(&i, &lo)| lo + i as f64 * self.h)
            .collect()
    }

    /// Nearest node to `x`, when `x` lies on the lattice up to `tol`.
    pub fn node_at(&self, x: &[f64], tol: f64) -> Option<Vec<usize>> {
        let mut idx = Vec::with_capacity(x.len());
        for (k, &xi) in x.iter().enumerate() {
            let t = (xi - self.bounds.lo[k]) / self.h;
            let i = t.round();
            if (t - i).abs() > tol || i < 0.0 || i as usize >= self.dims[k] {
                return None;
            }
            idx.push(i as usize);
        }
        Some(idx)
    }

    /// Multilinear interpolation of the lattice values; `x` must be inside
    /// the box.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for k in 0..n {
            let t = (x[k] - self.bounds.lo[k]) / self.h;
            let mut i = t.floor() as isize;
            i = i.clamp(0, self.dims[k] as isize - 2);
            base[k] = i as usize;
            frac[k] = (t - i as f64).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut flat = 0;
            for k in 0..n {
                let bit = (corner >> k) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                flat = flat * self.dims[k] + base[k] + bit;
            }
            acc += w * self.values[flat];
        }
        acc
    }

    fn exterior_value(&self, x: &[f64]) -> f64 {
        match &self.exterior {
            ExteriorRule::Zero => 0.0,
            ExteriorRule::Constant { c } => *c,
            ExteriorRule::Analytic { expr } => expr.eval(x),
            ExteriorRule::ReflectPlane { axis, level } => {
                let mut y = x.to_vec();
                y[*axis] = 2.0 * level - y[*axis];
                if self.bounds.contains(&y) {
                    self.interp_or_analytic(&y)
                } else {
                    0.0
                }
            }
            ExteriorRule::SlabSplit { axis, below, above, sides, height } => {
                if x[*axis] <= 0.0 {
                    *below
                } else if x[*axis] >= *height {
                    *above
                } else {
                    *sides
                }
            }
        }
    }

    fn interp_or_analytic(&self, x: &[f64]) -> f64 {
        match &self.analytic {
            Some(e) => e.eval(x),
            None => self.interpolate(x),
        }
    }

    /// Pointwise evaluation anywhere in space.
    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.bounds.contains(x) {
            self.interp_or_analytic(x)
        } else {
            self.exterior_value(x)
        }
    }

    /// Pointwise sum; boxes and spacings must match and both exteriors must
    /// have expression form.
    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        if self.bounds != other.bounds || self.h != other.h {
            return Err(FracError::InvalidConfig(
                "grid functions must share box and spacing to be added".into(),
            ));
        }
        let ea = self.exterior.as_expr().ok_or_else(|| {
            FracError::InvalidConfig("reflect_plane exterior cannot be combined".into())
        })?;
        let eb = other.exterior.as_expr().ok_or_else(|| {
            FracError::InvalidConfig("reflect_plane exterior cannot be combined".into())
        })?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        let analytic = match (&self.analytic, &other.analytic) {
            (Some(a), Some(b)) => Some(a.add(b)),
            _ => None,
        };
        Ok(GridFunction {
            bounds: self.bounds.clone(),
            h: self.h,
            dims: self.dims.clone(),
            values,
            exterior: ExteriorRule::Analytic { expr: ea.add(&eb) },
            analytic,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV rows `i,j(,k),x,y(,z),value`; lengths in abstract units.
    pub fn to_csv(&self) -> String {
        let n = self.dim();
        let mut out = String::new();
        let idx_cols = ["i", "j", "k"][..n].join(",");
        let coord_cols = ["x[len]", "y[len]", "z[len]"][..n].join(",");
        out.push_str(&format!("{},{},value\n", idx_cols, coord_cols));
        for flat in 0..self.node_count() {
            let idx = self.multi_index(flat);
            let x = self.node_coord(&idx);
            let mut row = String::new();
            for i in &idx {
                row.push_str(&format!("{},", i));
            }
            for c in &x {
                row.push_str(&format!("{},", c));
            }
            row.push_str(&format!("{}\n", self.values[flat]));
            out.push_str(&row);
        }
        out
    }
}

fn build_dims(bounds: &AxisBox, h: f64) -> Result<Vec<usize>> {
    if h <= 0.0 {
        return Err(FracError::InvalidConfig("grid spacing must be positive".into()));
    }
    let mut dims = Vec::with_capacity(bounds.dim());
    for (lo, hi) in bounds.lo.iter().zip(&bounds.hi) {
        let len = hi - lo;
        let m = len / h;
        if (m - m.round()).abs() > 1e-9 * (1.0 + m.abs()) {
            return Err(FracError::InvalidConfig(format!(
                "h = {h} does not divide the box edge {len}"
            )));
        }
        dims.push(m.round() as usize + 1);
    }
    Ok(dims)
}

/// Samples an expression on the lattice and attaches the matching analytic
/// exterior.
pub fn grid_function_from_expr(bounds: AxisBox, h: f64, expr: Expr) -> Result<GridFunction> {
    let dims = build_dims(&bounds, h)?;
    let mut gf = GridFunction {
        bounds,
        h,
        dims,
        values: Vec::new(),
        exterior: ExteriorRule::Analytic { expr: expr.clone() },
        analytic: Some(expr.clone()),
    };
    let count = gf.node_count();
    let mut values = Vec::with_capacity(count);
    for flat in 0..count {
        let idx = gf.multi_index(flat);
        let x = gf.node_coord(&idx);
        let v = expr.eval(&x);
        if !v.is_finite() {
            return Err(FracError::NonFiniteSample {
                tag: expr.atoms.first().map(|a| a.tag().to_string()).unwrap_or_default(),
                index: idx,
            });
        }
        values.push(v);
    }
    gf.values = values;
    Ok(gf)
}

/// `make_grid_function`: realizes a tagged closed form on a lattice.
pub fn make_grid_function(
    bounds: AxisBox,
    h: f64,
    tag: &str,
    params: &serde_json::Value,
) -> Result<GridFunction> {
    let expr = Expr::from_tag(bounds.dim(), tag, params)?;
    grid_function_from_expr(bounds, h, expr)
}

/// Result of the weighted-tail membership test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MembershipReport {
    pub member: bool,
    /// Finite bound on the exterior integral when `member`.
    pub tail_bound: Option<f64>,
    pub growth_exponent: Option<f64>,
}

/// Decides membership in the weighted space
/// `∫ |u(y)| / (1 + |y|^{n+2s}) dy < ∞` from the exterior tag alone.
pub fn check_ls_membership(gf: &GridFunction, s: f64) -> Result<MembershipReport> {
    let n = gf.dim();
    let expr = match gf.exterior.as_expr() {
        Some(e) => e,
        None => {
            // Reflected and slab exteriors are bounded.
            let sup = gf.exterior.sup_abs().unwrap_or_else(|| gf.max_abs());
            let bound =
                Expr::constant(sup.max(gf.max_abs())).ls_tail_bound(n, s, gf.bounds.diameter());
            return Ok(MembershipReport {
                member: true,
                tail_bound: bound,
                growth_exponent: Some(0.0),
            });
        }
    };
    let from_radius = 0.5 * gf.bounds.diameter();
    let bound = expr.ls_tail_bound(n, s, from_radius.max(1.0));
    Ok(MembershipReport {
        member: bound.is_some(),
        tail_bound: bound,
        growth_exponent: expr.growth_exponent(),
    })
}

/// Checks that a geometry bounding box fits inside the grid with a margin of
/// at least `2h` on every side.
pub fn fits_with_margin(grid: &AxisBox, inner_lo: &[f64], inner_hi: &[f64], h: f64) -> bool {
    grid.lo
        .iter()
        .zip(inner_lo)
        .all(|(&g, &i)| i - g >= 2.0 * h - 1e-12)
        && grid
            .hi
            .iter()
            .zip(inner_hi)
            .all(|(&g, &i)| g - i >= 2.0 * h - 1e-12)
}

pub use crate::expr::dot as vdot;

#[cfg(test)]
mod tests {
    use super::*;

    fn box2(w: f64) -> AxisBox {
        AxisBox::cube(2, w)
    }

    #[test]
    fn constant_grid() {
        let gf = make_grid_function(box2(2.0), 0.1, "constant", &serde_json::json!({"c": 1.0}))
            .unwrap();
        assert!(gf.values.iter().all(|&v| v == 1.0));
        assert_eq!(gf.eval(&[100.0, 3.0]), 1.0);
    }

    #[test]
    fn bump_grid_values() {
        let gf = make_grid_function(box2(2.0), 0.1, "bump", &serde_json::json!({})).unwrap();
        let center = gf.node_at(&[0.0, 0.0], 1e-9).unwrap();
        assert!((gf.values[gf.flat_index(&center)] - 1.0).abs() < 1e-14);
        let outside = gf.node_at(&[1.5, 0.0], 1e-9).unwrap();
        assert_eq!(gf.values[gf.flat_index(&outside)], 0.0);
    }

    #[test]
    fn gaussian_node_value() {
        let gf = make_grid_function(box2(4.0), 0.1, "gaussian", &serde_json::json!({})).unwrap();
        let idx = gf.node_at(&[1.0, 0.0], 1e-9).unwrap();
        assert!((gf.values[gf.flat_index(&idx)] - (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn unsupported_tag_errors() {
        assert!(make_grid_function(box2(1.0), 0.1, "sine", &serde_json::json!({})).is_err());
    }

    #[test]
    fn interpolation_reproduces_nodes_and_is_second_order() {
        let gf = make_grid_function(box2(2.0), 0.1, "gaussian", &serde_json::json!({})).unwrap();
        // Exact at nodes.
        let idx = gf.node_at(&[0.5, -0.3], 1e-9).unwrap();
        let x = gf.node_coord(&idx);
        assert!((gf.interpolate(&x) - gf.values[gf.flat_index(&idx)]).abs() < 1e-14);
        // O(h^2) at cell midpoints for smooth tags.
        let expr = Expr::gaussian(2);
        for &(mx, my) in &[(0.05, 0.05), (0.35, -0.15), (-0.95, 0.65)] {
            let err = (gf.interpolate(&[mx, my]) - expr.eval(&[mx, my])).abs();
            assert!(err < 4.0 * 0.1f64.powi(2), "interp err {err} at ({mx},{my})");
        }
        // sqrt_quadratic too.
        let gq = make_grid_function(box2(2.0), 0.1, "sqrt_quadratic", &serde_json::json!({}))
            .unwrap();
        let eq = Expr::sqrt_quadratic(2);
        let err = (gq.interpolate(&[0.15, 0.25]) - eq.eval(&[0.15, 0.25])).abs();
        assert!(err < 0.1f64.powi(2));
    }

    #[test]
    fn membership_examples() {
        let gf = make_grid_function(box2(2.0), 0.1, "constant", &serde_json::json!({})).unwrap();
        let rep = check_ls_membership(&gf, 0.5).unwrap();
        assert!(rep.member);
        assert!(rep.tail_bound.unwrap().is_finite());

        let gf = make_grid_function(box2(2.0), 0.1, "gaussian", &serde_json::json!({})).unwrap();
        assert!(check_ls_membership(&gf, 0.5).unwrap().member);

        let gf = make_grid_function(box2(2.0), 0.1, "linear_cap", &serde_json::json!({"a": 1.0}))
            .unwrap();
        assert!(check_ls_membership(&gf, 0.75).unwrap().member);
        assert!(!check_ls_membership(&gf, 0.25).unwrap().member);
    }

    #[test]
    fn csv_has_header_and_all_rows() {
        let gf = make_grid_function(box2(1.0), 0.5, "constant", &serde_json::json!({})).unwrap();
        let csv = gf.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "i,j,x[len],y[len],value");
        assert_eq!(csv.lines().count(), 1 + gf.node_count());
    }
}
