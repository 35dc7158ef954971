//! Closed-form expression tags and their semi-analytic far-field tails.
//!
//! Exteriors are restricted to a fixed list of atoms so that the tail of the
//! kernel integral beyond the truncation radius has a controlled closed form.
//! An [`Expr`] is a finite sum of atoms, which keeps the list closed under
//! addition and scaling (needed for superadditivity experiments).

use serde::{Deserialize, Serialize};

use crate::error::{FracError, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm2(a).sqrt()
}

/// Surface area of the unit sphere `S^{n-1}`.
pub fn sphere_area(n: usize) -> f64 {
    use std::f64::consts::PI;
    match n {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => 2.0 * PI.powf(n as f64 / 2.0) / statrs::function::gamma::gamma(n as f64 / 2.0),
    }
}

/// One closed-form building block.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum Atom {
    Constant {
        c: f64,
    },
    /// `amplitude * exp(-|x - center|^2 / width^2)`
    Gaussian {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
    },
    /// `amplitude * exp(|z|^2 / (|z|^2 - 1))` for `z = (x - center)/radius`,
    /// extended by 0 for `|z| >= 1`; smooth and compactly supported.
    Bump {
        amplitude: f64,
        center: Vec<f64>,
        radius: f64,
    },
    /// `amplitude * sqrt(1 + |x - center|^2)`: convex, asymptotically linear.
    SqrtQuadratic {
        amplitude: f64,
        center: Vec<f64>,
    },
    /// Affine `a + b . x`; linear growth `|u| <= |a| + |b||x|`.
    LinearCap {
        a: f64,
        b: Vec<f64>,
    },
}

fn dist2(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

impl Atom {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Atom::Constant { c } => *c,
            Atom::Gaussian { amplitude, center, width } => {
                amplitude * (-dist2(x, center) / (width * width)).exp()
            }
            Atom::Bump { amplitude, center, radius } => {
                let r2 = dist2(x, center) / (radius * radius);
                if r2 >= 1.0 {
                    0.0
                } else {
                    amplitude * (r2 / (r2 - 1.0)).exp()
                }
            }
            Atom::SqrtQuadratic { amplitude, center } => {
                amplitude * (1.0 + dist2(x, center)).sqrt()
            }
            Atom::LinearCap { a, b } => a + dot(b, x),
        }
    }

    /// Growth exponent `g` with `|u(x)| = O(|x|^g)`; `None` means compactly
    /// supported or decaying faster than any power.
    pub fn growth_exponent(&self) -> Option<f64> {
        match self {
            Atom::Constant { c } => {
                if *c == 0.0 {
                    None
                } else {
                    Some(0.0)
                }
            }
            Atom::Gaussian { .. } | Atom::Bump { .. } => None,
            Atom::SqrtQuadratic { .. } => Some(1.0),
            Atom::LinearCap { b, .. } => {
                if norm2(b) == 0.0 {
                    Some(0.0)
                } else {
                    Some(1.0)
                }
            }
        }
    }

    /// Radial majorant: a bound for `|u|` on the sphere of radius `r` about
    /// the origin.
    pub fn radial_majorant(&self, r: f64) -> f64 {
        match self {
            Atom::Constant { c } => c.abs(),
            Atom::Gaussian { amplitude, center, width } => {
                let d = norm(center);
                let t = ((r - d).max(0.0)) / width;
                amplitude.abs() * (-t * t).exp()
            }
            Atom::Bump { amplitude, center, radius } => {
                if r > norm(center) + radius {
                    0.0
                } else {
                    amplitude.abs()
                }
            }
            Atom::SqrtQuadratic { amplitude, center } => {
                amplitude.abs() * (1.0 + (r + norm(center)).powi(2)).sqrt()
            }
            Atom::LinearCap { a, b } => a.abs() + norm(b) * r,
        }
    }

    pub fn scaled(&self, k: f64) -> Atom {
        let mut a = self.clone();
        match &mut a {
            Atom::Constant { c } => *c *= k,
            Atom::Gaussian { amplitude, .. } => *amplitude *= k,
            Atom::Bump { amplitude, .. } => *amplitude *= k,
            Atom::SqrtQuadratic { amplitude, .. } => *amplitude *= k,
            Atom::LinearCap { a, b } => {
                *a *= k;
                for bi in b.iter_mut() {
                    *bi *= k;
                }
            }
        }
        a
    }

    pub fn translated(&self, shift: &[f64]) -> Atom {
        // Replaces x by x - shift.
        let mut a = self.clone();
        match &mut a {
            Atom::Constant { .. } => {}
            Atom::Gaussian { center, .. }
            | Atom::Bump { center, .. }
            | Atom::SqrtQuadratic { center, .. } => {
                for (c, s) in center.iter_mut().zip(shift) {
                    *c += s;
                }
            }
            Atom::LinearCap { a: a0, b } => {
                *a0 -= dot(b, shift);
            }
        }
        a
    }

    /// Exact Hessian where available (everything except the bump).
    pub fn hessian(&self, x: &[f64]) -> Option<Vec<Vec<f64>>> {
        let n = x.len();
        let mut h = vec![vec![0.0; n]; n];
        match self {
            Atom::Constant { .. } | Atom::LinearCap { .. } => Some(h),
            Atom::Gaussian { amplitude, center, width } => {
                let w2 = width * width;
                let v = self.eval(x);
                let _ = amplitude;
                for i in 0..n {
                    for j in 0..n {
                        let di = 2.0 * (x[i] - center[i]) / w2;
                        let dj = 2.0 * (x[j] - center[j]) / w2;
                        h[i][j] = v * (di * dj - if i == j { 2.0 / w2 } else { 0.0 });
                    }
                }
                Some(h)
            }
            Atom::SqrtQuadratic { amplitude, center } => {
                let q = 1.0 + dist2(x, center);
                let s = q.sqrt();
                for i in 0..n {
                    for j in 0..n {
                        let xi = x[i] - center[i];
                        let xj = x[j] - center[j];
                        h[i][j] = amplitude * (if i == j { 1.0 / s } else { 0.0 } - xi * xj / (q * s));
                    }
                }
                Some(h)
            }
            Atom::Bump { .. } => None,
        }
    }

    /// Radial tail of the paired kernel integral:
    /// `I = ∫_R^∞ (u(x+rω) + u(x-rω))/2 · r^{-1-2s} dr`,
    /// returned as `(value, error_bound)`. Pairing the two rays first is what
    /// makes the linear-growth tags integrable.
    pub fn tail_pair(&self, x: &[f64], omega: &[f64], r_far: f64, s: f64) -> Result<(f64, f64)> {
        let two_s = 2.0 * s;
        let tail_mass = r_far.powf(-two_s) / two_s;
        match self {
            Atom::Constant { c } => Ok((c * tail_mass, 0.0)),
            Atom::LinearCap { a, b } => {
                // Odd part cancels in the pair; the remainder is constant.
                Ok(((a + dot(b, x)) * tail_mass, 0.0))
            }
            Atom::Bump { center, radius, .. } => {
                let d = norm(&x.iter().zip(center).map(|(a, b)| a - b).collect::<Vec<_>>());
                if r_far < d + radius {
                    return Err(FracError::MissingTailFormula(
                        "bump support crosses the truncation radius".into(),
                        s,
                    ));
                }
                Ok((0.0, 0.0))
            }
            Atom::Gaussian { amplitude, center, width } => {
                let d = dist2(x, center).sqrt();
                if r_far <= d {
                    return Err(FracError::MissingTailFormula(
                        "gaussian center outside the truncation radius".into(),
                        s,
                    ));
                }
                let t = (r_far - d) / width;
                let bound = amplitude.abs() * (-t * t).exp() * tail_mass;
                Ok((0.5 * bound, 0.5 * bound))
            }
            Atom::SqrtQuadratic { amplitude, center } => {
                if two_s <= 1.0 {
                    return Err(FracError::MissingTailFormula("sqrt_quadratic".into(), s));
                }
                let z: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
                let b2 = norm2(&z);
                let a = dot(&z, omega);
                // (u(x+rω)+u(x-rω))/2 = r + (1 + b2 - a²)/(2r) + O(r^{-3})
                let lead = r_far.powf(1.0 - two_s) / (two_s - 1.0);
                let c1 = 0.5 * (1.0 + b2 - a * a);
                let corr = c1 * r_far.powf(-1.0 - two_s) / (1.0 + two_s);
                let err = 2.0 * (1.0 + b2).powi(2) * r_far.powf(-2.0 - two_s) / (2.0 + two_s);
                Ok((amplitude * (lead + corr), amplitude.abs() * err))
            }
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Atom::Constant { .. } => "constant",
            Atom::Gaussian { .. } => "gaussian",
            Atom::Bump { .. } => "bump",
            Atom::SqrtQuadratic { .. } => "sqrt_quadratic",
            Atom::LinearCap { .. } => "linear_cap",
        }
    }
}

/// A finite linear combination of atoms.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct Expr {
    pub atoms: Vec<Atom>,
}

impl Expr {
    pub fn atom(a: Atom) -> Expr {
        Expr { atoms: vec![a] }
    }

    pub fn constant(c: f64) -> Expr {
        Expr::atom(Atom::Constant { c })
    }

    pub fn gaussian(n: usize) -> Expr {
        Expr::atom(Atom::Gaussian { amplitude: 1.0, center: vec![0.0; n], width: 1.0 })
    }

    pub fn bump(n: usize) -> Expr {
        Expr::atom(Atom::Bump { amplitude: 1.0, center: vec![0.0; n], radius: 1.0 })
    }

    pub fn sqrt_quadratic(n: usize) -> Expr {
        Expr::atom(Atom::SqrtQuadratic { amplitude: 1.0, center: vec![0.0; n] })
    }

    pub fn linear(a: f64, b: Vec<f64>) -> Expr {
        Expr::atom(Atom::LinearCap { a, b })
    }

    /// Builds an expression from a tag name and a JSON parameter object.
    /// Missing parameters fall back to the canonical instance of the tag.
    pub fn from_tag(n: usize, tag: &str, params: &serde_json::Value) -> Result<Expr> {
        let get = |key: &str, default: f64| -> f64 {
            params.get(key).and_then(|v| v.as_f64()).unwrap_or(default)
        };
        let get_vec = |key: &str| -> Option<Vec<f64>> {
            params.get(key).and_then(|v| {
                v.as_array()
                    .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
            })
        };
        let center = get_vec("center").unwrap_or_else(|| vec![0.0; n]);
        if center.len() != n {
            return Err(FracError::InvalidConfig(format!(
                "center has {} components, expected {}",
                center.len(),
                n
            )));
        }
        let atom = match tag {
            "constant" => Atom::Constant { c: get("c", 1.0) },
            "zero" => Atom::Constant { c: 0.0 },
            "gaussian" => Atom::Gaussian {
                amplitude: get("amplitude", 1.0),
                center,
                width: get("width", 1.0),
            },
            "bump" => Atom::Bump {
                amplitude: get("amplitude", 1.0),
                center,
                radius: get("radius", 1.0),
            },
            "sqrt_quadratic" => Atom::SqrtQuadratic { amplitude: get("amplitude", 1.0), center },
            "linear_cap" => Atom::LinearCap {
                a: get("a", 0.0),
                b: get_vec("b").unwrap_or_else(|| {
                    let mut b = vec![0.0; n];
                    b[0] = 1.0;
                    b
                }),
            },
            other => return Err(FracError::UnsupportedTag(other.into())),
        };
        Ok(Expr::atom(atom))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.atoms.iter().map(|a| a.eval(x)).sum()
    }

    pub fn add(&self, other: &Expr) -> Expr {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        Expr { atoms }
    }

    pub fn scaled(&self, k: f64) -> Expr {
        Expr { atoms: self.atoms.iter().map(|a| a.scaled(k)).collect() }
    }

    pub fn translated(&self, shift: &[f64]) -> Expr {
        Expr { atoms: self.atoms.iter().map(|a| a.translated(shift)).collect() }
    }

    pub fn growth_exponent(&self) -> Option<f64> {
        self.atoms
            .iter()
            .filter_map(|a| a.growth_exponent())
            .fold(None, |acc, g| Some(acc.map_or(g, |m: f64| m.max(g))))
    }

    pub fn tail_pair(&self, x: &[f64], omega: &[f64], r_far: f64, s: f64) -> Result<(f64, f64)> {
        let mut v = 0.0;
        let mut e = 0.0;
        for a in &self.atoms {
            let (av, ae) = a.tail_pair(x, omega, r_far, s)?;
            v += av;
            e += ae;
        }
        Ok((v, e))
    }

    pub fn hessian(&self, x: &[f64]) -> Option<Vec<Vec<f64>>> {
        let n = x.len();
        let mut h = vec![vec![0.0; n]; n];
        for a in &self.atoms {
            let ha = a.hessian(x)?;
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += ha[i][j];
                }
            }
        }
        Some(h)
    }

    /// Weighted tail integral `∫_{|y| > from_radius} |u(y)| / (1 + |y|^{n+2s}) dy`,
    /// or `None` when it diverges. Radial quadrature of the majorant plus an
    /// analytic remainder beyond `r_big`.
    pub fn ls_tail_bound(&self, n: usize, s: f64, from_radius: f64) -> Option<f64> {
        let g = match self.growth_exponent() {
            None => -(n as f64) - 2.0 * s, // decays faster than the weight
            Some(g) => g,
        };
        if g >= 2.0 * s {
            return None;
        }
        let area = sphere_area(n);
        let weight = |r: f64| area * r.powi(n as i32 - 1) / (1.0 + r.powf(n as f64 + 2.0 * s));
        let maj = |r: f64| self.atoms.iter().map(|a| a.radial_majorant(r)).sum::<f64>();
        let r_big = (from_radius * 64.0).max(256.0);
        // Composite Simpson on a log grid.
        let m = 2048usize;
        let lf = from_radius.max(1e-9).ln();
        let lb = r_big.ln();
        let mut acc = 0.0;
        for k in 0..m {
            let t0 = lf + (lb - lf) * k as f64 / m as f64;
            let t1 = lf + (lb - lf) * (k + 1) as f64 / m as f64;
            let (r0, r1) = (t0.exp(), t1.exp());
            let rm = 0.5 * (r0 + r1);
            // ∫ f dr = ∫ f(e^t) e^t dt
            let f0 = maj(r0) * weight(r0) * r0;
            let fm = maj(rm) * weight(rm) * rm;
            let f1 = maj(r1) * weight(r1) * r1;
            acc += (t1 - t0) / 6.0 * (f0 + 4.0 * fm + f1);
        }
        // Beyond r_big the integrand is below C r^{g - 1 - 2s}.
        let c_tail = maj(r_big) * r_big.powf(-g) * area;
        let tail = c_tail * r_big.powf(g - 2.0 * s) / (2.0 * s - g);
        Some(acc + tail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_values() {
        let b = Expr::bump(2);
        assert!((b.eval(&[0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(b.eval(&[1.0, 0.0]), 0.0);
        assert_eq!(b.eval(&[3.0, 4.0]), 0.0);
        // Continuity near the support edge.
        assert!(b.eval(&[0.999, 0.0]) < 1e-200);
    }

    #[test]
    fn gaussian_node_value() {
        let g = Expr::gaussian(2);
        assert!((g.eval(&[1.0, 0.0]) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn affine_tail_pair_is_exact() {
        let e = Expr::linear(0.3, vec![2.0, -1.0]);
        let x = [0.4, 0.7];
        let (v, err) = e.tail_pair(&x, &[1.0, 0.0], 10.0, 0.5).unwrap();
        let tail_mass = 10.0f64.powf(-1.0) / 1.0;
        assert_eq!(err, 0.0);
        assert!((v - e.eval(&x) * tail_mass).abs() < 1e-14);
    }

    #[test]
    fn sqrt_quadratic_tail_matches_numeric() {
        // Compare the closed-form tail against brute-force radial quadrature.
        let e = Expr::sqrt_quadratic(2);
        let x = [0.5, -0.25];
        let omega = [0.8, 0.6];
        let s = 0.75;
        let r_far = 12.0;
        let (v, err) = e.tail_pair(&x, &omega, r_far, s).unwrap();
        // numeric: ∫_R^B pair(r) r^{-1-2s} dr + analytic remainder of the leading term
        let pair = |r: f64| {
            let p: Vec<f64> = x.iter().zip(&omega).map(|(a, w)| a + r * w).collect();
            let q: Vec<f64> = x.iter().zip(&omega).map(|(a, w)| a - r * w).collect();
            0.5 * (e.eval(&p) + e.eval(&q))
        };
        let big = 4000.0;
        let m = 400_000;
        let mut acc = 0.0;
        for k in 0..m {
            let t0 = (r_far.ln()) + (big / r_far).ln() * k as f64 / m as f64;
            let t1 = (r_far.ln()) + (big / r_far).ln() * (k + 1) as f64 / m as f64;
            let (r0, r1) = (t0.exp(), t1.exp());
            let rm = 0.5 * (r0 + r1);
            let f = |r: f64| pair(r) * r.powf(-1.0 - 2.0 * s);
            acc += (r1 - r0) / 6.0 * (f(r0) + 4.0 * f(rm) + f(r1));
        }
        // remainder beyond `big`: pair(r) ≈ r
        acc += big.powf(1.0 - 2.0 * s) / (2.0 * s - 1.0);
        assert!(
            (v - acc).abs() < err + 1e-6,
            "closed form {v} vs numeric {acc} (err bound {err})"
        );
    }

    #[test]
    fn membership_decision_table() {
        // constant: in L_s for every s
        assert!(Expr::constant(1.0).ls_tail_bound(2, 0.5, 2.0).is_some());
        // gaussian: rapid decay
        assert!(Expr::gaussian(2).ls_tail_bound(2, 0.3, 2.0).is_some());
        // linear growth: needs 2s > 1
        assert!(Expr::linear(1.0, vec![1.0, 0.0]).ls_tail_bound(2, 0.75, 2.0).is_some());
        assert!(Expr::linear(1.0, vec![1.0, 0.0]).ls_tail_bound(2, 0.5, 2.0).is_none());
        assert!(Expr::sqrt_quadratic(2).ls_tail_bound(2, 0.4, 2.0).is_none());
    }

    #[test]
    fn sqrt_quadratic_hessian_at_origin_is_identity() {
        let e = Expr::sqrt_quadratic(2);
        let h = e.hessian(&[0.0, 0.0]).unwrap();
        assert!((h[0][0] - 1.0).abs() < 1e-15);
        assert!((h[1][1] - 1.0).abs() < 1e-15);
        assert!(h[0][1].abs() < 1e-15);
    }

    #[test]
    fn translation_moves_the_profile() {
        let g = Expr::gaussian(2).translated(&[0.3, 0.0]);
        assert!((g.eval(&[0.3, 0.0]) - 1.0).abs() < 1e-15);
    }
}
