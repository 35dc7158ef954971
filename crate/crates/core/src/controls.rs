//! Finite control sets discretizing the admissible matrix families.
//!
//! The Bellman family is `{A symmetric : θ I <= A <= Θ I}`; the
//! Monge-Ampere family additionally fixes `det A = 1`, which together with
//! `λ_min >= θ` forces `λ_max <= θ^{1-n}`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FracError, Result};

pub const ADMISSIBILITY_TOL: f64 = 1e-9;

/// A symmetric positive-definite matrix with cached spectral data.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ControlMatrix {
    pub entries: Vec<Vec<f64>>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub det: f64,
    #[serde(skip)]
    inverse: Option<Vec<Vec<f64>>>,
}

impl ControlMatrix {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let n = entries.len();
        for row in &entries {
            if row.len() != n {
                return Err(FracError::InadmissibleControl("matrix must be square".into()));
            }
        }
        let m = DMatrix::from_fn(n, n, |i, j| entries[i][j]);
        let asym = (&m - m.transpose()).abs().max();
        if asym > ADMISSIBILITY_TOL {
            return Err(FracError::InadmissibleControl(format!("symmetry (|A - A^T| = {asym})")));
        }
        let eig = m.clone().symmetric_eigen();
        let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let lambda_max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lambda_min <= 0.0 {
            return Err(FracError::InadmissibleControl(format!(
                "positive definiteness (λ_min = {lambda_min})"
            )));
        }
        let det = eig.eigenvalues.iter().product();
        let inv = m.try_inverse().ok_or_else(|| {
            FracError::InadmissibleControl("matrix not invertible".into())
        })?;
        let inverse = (0..n)
            .map(|i| (0..n).map(|j| inv[(i, j)]).collect())
            .collect();
        Ok(ControlMatrix { entries, lambda_min, lambda_max, det, inverse: Some(inverse) })
    }

    pub fn identity(n: usize) -> Self {
        let mut e = vec![vec![0.0; n]; n];
        for (i, row) in e.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        ControlMatrix::new(e).expect("identity is admissible")
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    fn ensure_inverse(&self) -> Vec<Vec<f64>> {
        match &self.inverse {
            Some(inv) => inv.clone(),
            None => {
                let n = self.dim();
                let m = DMatrix::from_fn(n, n, |i, j| self.entries[i][j]);
                let inv = m.try_inverse().expect("SPD matrix is invertible");
                (0..n).map(|i| (0..n).map(|j| inv[(i, j)]).collect()).collect()
            }
        }
    }

    /// `|A^{-1} v|`, the anisotropic length entering the kernel.
    pub fn inv_norm(&self, v: &[f64]) -> f64 {
        let inv = match &self.inverse {
            Some(i) => i,
            None => {
                // Deserialized matrices lose the cache; recompute on the fly.
                return inv_norm_of(&self.ensure_inverse(), v);
            }
        };
        inv_norm_of(inv, v)
    }

    /// Rehydrates the inverse cache after deserialization.
    pub fn rehydrate(&mut self) {
        if self.inverse.is_none() {
            self.inverse = Some(self.ensure_inverse());
        }
    }

    pub fn is_bellman_admissible(&self, theta: f64, big_theta: f64, tol: f64) -> bool {
        self.lambda_min >= theta - tol && self.lambda_max <= big_theta + tol
    }

    pub fn is_ma_admissible(&self, theta: f64, tol: f64) -> bool {
        (self.det - 1.0).abs() <= tol && self.lambda_min >= theta - tol
    }

    pub fn approx_eq(&self, other: &ControlMatrix, tol: f64) -> bool {
        self.dim() == other.dim()
            && self
                .entries
                .iter()
                .flatten()
                .zip(other.entries.iter().flatten())
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

fn inv_norm_of(inv: &[Vec<f64>], v: &[f64]) -> f64 {
    inv.iter()
        .map(|row| {
            let s: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            s * s
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ControlSetKind {
    BellmanBox,
    MongeAmpere,
    SingletonIdentity,
}

/// Recipe for building a control set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ControlSetSpec {
    pub kind: ControlSetKind,
    pub n: usize,
    pub theta: f64,
    /// Upper bound Θ; ignored for `monge_ampere` and `singleton_identity`.
    #[serde(default)]
    pub big_theta: f64,
    /// Eigenvalue samples per axis (endpoints included).
    pub eig_resolution: usize,
    /// Rotation angle samples over `[0, π/2)`.
    pub angle_resolution: usize,
}

impl ControlSetSpec {
    pub fn bellman(n: usize, theta: f64, big_theta: f64, eig_resolution: usize, angle_resolution: usize) -> Self {
        ControlSetSpec { kind: ControlSetKind::BellmanBox, n, theta, big_theta, eig_resolution, angle_resolution }
    }

    pub fn monge_ampere(n: usize, theta: f64, eig_resolution: usize, angle_resolution: usize) -> Self {
        ControlSetSpec { kind: ControlSetKind::MongeAmpere, n, theta, big_theta: 0.0, eig_resolution, angle_resolution }
    }

    pub fn singleton(n: usize) -> Self {
        ControlSetSpec { kind: ControlSetKind::SingletonIdentity, n, theta: 1.0, big_theta: 1.0, eig_resolution: 1, angle_resolution: 1 }
    }

    fn refined(&self) -> ControlSetSpec {
        let mut s = self.clone();
        if s.kind != ControlSetKind::SingletonIdentity {
            s.eig_resolution = (s.eig_resolution - 1) * 2 + 1;
            s.angle_resolution *= 2;
        }
        s
    }
}

/// Finite ordered family of admissible matrices over which the infimum is
/// taken.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ControlSet {
    pub members: Vec<ControlMatrix>,
    pub kind: ControlSetKind,
    pub spec: ControlSetSpec,
}

impl ControlSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn singleton_identity(n: usize) -> ControlSet {
        ControlSet {
            members: vec![ControlMatrix::identity(n)],
            kind: ControlSetKind::SingletonIdentity,
            spec: ControlSetSpec::singleton(n),
        }
    }

    pub fn rehydrate(&mut self) {
        for m in &mut self.members {
            m.rehydrate();
        }
    }

    /// JSON array-of-matrices form for export.
    pub fn to_matrix_json(&self) -> serde_json::Value {
        serde_json::json!(self.members.iter().map(|m| m.entries.clone()).collect::<Vec<_>>())
    }
}

/// Geometric grid on `[a, b]` with `k` points, endpoints included. The value
/// 1 is inserted when the interval brackets it so that the identity matrix is
/// always a member of admissible Bellman boxes.
fn geometric_grid(a: f64, b: f64, k: usize) -> Vec<f64> {
    if (a - b).abs() < 1e-15 {
        return vec![a];
    }
    let k = k.max(2);
    let (la, lb) = (a.ln(), b.ln());
    let mut g: Vec<f64> = (0..k)
        .map(|i| (la + (lb - la) * i as f64 / (k - 1) as f64).exp())
        .collect();
    if a < 1.0 && b > 1.0 && !g.iter().any(|&x| (x - 1.0).abs() < 1e-12) {
        g.push(1.0);
        g.sort_by(|x, y| x.partial_cmp(y).unwrap());
    }
    g
}

fn rotation2(phi: f64) -> [[f64; 2]; 2] {
    [[phi.cos(), -phi.sin()], [phi.sin(), phi.cos()]]
}

/// `R(φ) diag(d) R(-φ)` in 2-D.
fn conjugated2(phi: f64, d: [f64; 2]) -> Vec<Vec<f64>> {
    let r = rotation2(phi);
    let mut out = vec![vec![0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = 0.0;
            for (k, dk) in d.iter().enumerate() {
                acc += r[i][k] * dk * r[j][k];
            }
            out[i][j] = acc;
        }
    }
    out
}

/// Givens conjugation `G_pq(φ) diag(d) G_pq(-φ)` in dimension `n`.
fn conjugated_givens(n: usize, p: usize, q: usize, phi: f64, d: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; n]; n];
    for (i, row) in out.iter_mut().enumerate() {
        row[i] = d[i];
    }
    let (c, s) = (phi.cos(), phi.sin());
    // Only the (p,q) block changes.
    out[p][p] = c * c * d[p] + s * s * d[q];
    out[q][q] = s * s * d[p] + c * c * d[q];
    out[p][q] = c * s * (d[p] - d[q]);
    out[q][p] = out[p][q];
    out
}

fn push_unique(members: &mut Vec<ControlMatrix>, m: ControlMatrix) {
    if !members.iter().any(|e| e.approx_eq(&m, 1e-13)) {
        members.push(m);
    }
}

/// Builds the finite control set described by `spec`.
pub fn build_control_set(spec: &ControlSetSpec) -> Result<ControlSet> {
    if spec.n < 2 || spec.n > 3 {
        return Err(FracError::UnsupportedDimension(spec.n));
    }
    if spec.angle_resolution < 1 {
        return Err(FracError::InvalidConfig("angle_resolution must be >= 1".into()));
    }
    let mut members = Vec::new();
    match spec.kind {
        ControlSetKind::SingletonIdentity => {
            members.push(ControlMatrix::identity(spec.n));
        }
        ControlSetKind::BellmanBox => {
            if !(spec.theta > 0.0 && spec.big_theta >= spec.theta) {
                return Err(FracError::EmptyControlSet(format!(
                    "bellman box requires 0 < θ <= Θ, got θ = {}, Θ = {}",
                    spec.theta, spec.big_theta
                )));
            }
            if spec.eig_resolution < 2 && (spec.big_theta - spec.theta).abs() > 1e-15 {
                return Err(FracError::InvalidConfig("eig_resolution must be >= 2".into()));
            }
            let eigs = geometric_grid(spec.theta, spec.big_theta, spec.eig_resolution);
            let phis: Vec<f64> = (0..spec.angle_resolution)
                .map(|k| std::f64::consts::FRAC_PI_2 * k as f64 / spec.angle_resolution as f64)
                .collect();
            if spec.n == 2 {
                for &a in &eigs {
                    for &b in &eigs {
                        if (a - b).abs() < 1e-14 {
                            push_unique(&mut members, ControlMatrix::new(conjugated2(0.0, [a, b]))?);
                        } else {
                            for &phi in &phis {
                                push_unique(&mut members, ControlMatrix::new(conjugated2(phi, [a, b]))?);
                            }
                        }
                    }
                }
            } else {
                for &a in &eigs {
                    for &b in &eigs {
                        for &c in &eigs {
                            let d = [a, b, c];
                            let isotropic = (a - b).abs() < 1e-14 && (b - c).abs() < 1e-14;
                            if isotropic {
                                push_unique(
                                    &mut members,
                                    ControlMatrix::new(conjugated_givens(3, 0, 1, 0.0, &d))?,
                                );
                                continue;
                            }
                            for (p, q) in [(0, 1), (0, 2), (1, 2)] {
                                for &phi in &phis {
                                    push_unique(
                                        &mut members,
                                        ControlMatrix::new(conjugated_givens(3, p, q, phi, &d))?,
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
        ControlSetKind::MongeAmpere => {
            if spec.theta > 1.0 + 1e-15 {
                return Err(FracError::EmptyControlSet(format!(
                    "monge_ampere with θ = {} > 1 has no admissible matrix",
                    spec.theta
                )));
            }
            if spec.n != 2 {
                return Err(FracError::UnsupportedDimension(spec.n));
            }
            let eigs = geometric_grid(spec.theta, 1.0, spec.eig_resolution.max(2));
            let phis: Vec<f64> = (0..spec.angle_resolution)
                .map(|k| std::f64::consts::FRAC_PI_2 * k as f64 / spec.angle_resolution as f64)
                .collect();
            for &a in &eigs {
                let b = 1.0 / a;
                if (a - b).abs() < 1e-14 {
                    push_unique(&mut members, ControlMatrix::new(conjugated2(0.0, [a, b]))?);
                } else {
                    for &phi in &phis {
                        push_unique(&mut members, ControlMatrix::new(conjugated2(phi, [a, b]))?);
                    }
                }
            }
        }
    }
    if members.is_empty() {
        return Err(FracError::EmptyControlSet("no members generated".into()));
    }
    // Validate admissibility of every member.
    for m in &members {
        let ok = match spec.kind {
            ControlSetKind::SingletonIdentity => true,
            ControlSetKind::BellmanBox => m.is_bellman_admissible(spec.theta, spec.big_theta, ADMISSIBILITY_TOL),
            ControlSetKind::MongeAmpere => m.is_ma_admissible(spec.theta, ADMISSIBILITY_TOL),
        };
        if !ok {
            return Err(FracError::InadmissibleControl(format!(
                "{:?} violates {:?} bounds",
                m.entries, spec.kind
            )));
        }
    }
    Ok(ControlSet { members, kind: spec.kind, spec: spec.clone() })
}

/// Doubles both sampling resolutions; the refined set contains the original
/// members (grids are nested).
pub fn refine(set: &ControlSet) -> Result<ControlSet> {
    build_control_set(&set.spec.refined())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_box_is_identity() {
        let s = ControlSetSpec::bellman(2, 1.0, 1.0, 4, 4);
        let set = build_control_set(&s).unwrap();
        assert_eq!(set.len(), 1);
        assert!(set.members[0].approx_eq(&ControlMatrix::identity(2), 1e-14));
    }

    #[test]
    fn ma_theta_one_is_identity() {
        let s = ControlSetSpec::monge_ampere(2, 1.0, 4, 4);
        let set = build_control_set(&s).unwrap();
        assert_eq!(set.len(), 1);
        assert!(set.members[0].approx_eq(&ControlMatrix::identity(2), 1e-14));
    }

    #[test]
    fn ma_lambda_max_bound() {
        // θ = 0.25 in n = 2 forces λ_max <= θ^{1-n} = 4.
        let s = ControlSetSpec::monge_ampere(2, 0.25, 5, 4);
        let set = build_control_set(&s).unwrap();
        for m in &set.members {
            assert!(m.lambda_max <= 4.0 + 1e-9, "λ_max = {}", m.lambda_max);
            assert!((m.det - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bellman_contains_identity_when_bracketed() {
        let s = ControlSetSpec::bellman(2, 0.5, 2.0, 4, 3);
        let set = build_control_set(&s).unwrap();
        let id = ControlMatrix::identity(2);
        assert!(set.members.iter().any(|m| m.approx_eq(&id, 1e-12)));
        for m in &set.members {
            assert!(m.is_bellman_admissible(0.5, 2.0, 1e-9));
        }
    }

    #[test]
    fn refine_contains_original_as_subsequence() {
        let s = ControlSetSpec::bellman(2, 0.5, 2.0, 3, 2);
        let set = build_control_set(&s).unwrap();
        let fine = refine(&set).unwrap();
        assert!(fine.len() > set.len());
        let mut cursor = 0usize;
        for m in &set.members {
            let found = fine.members[cursor..]
                .iter()
                .position(|f| f.approx_eq(m, 1e-12));
            match found {
                Some(p) => cursor += p + 1,
                None => panic!("refined set lost a member (or broke the order)"),
            }
        }
        // Singleton is a fixed point.
        let single = ControlSet::singleton_identity(2);
        let rs = refine(&single).unwrap();
        assert_eq!(rs.len(), 1);
    }

    #[test]
    fn closed_under_x1_reflection() {
        let s = ControlSetSpec::bellman(2, 0.5, 2.0, 3, 4);
        let set = build_control_set(&s).unwrap();
        for m in &set.members {
            // S A S with S = diag(-1, 1) flips the off-diagonal sign.
            let refl = ControlMatrix::new(vec![
                vec![m.entries[0][0], -m.entries[0][1]],
                vec![-m.entries[1][0], m.entries[1][1]],
            ])
            .unwrap();
            assert!(
                set.members.iter().any(|e| e.approx_eq(&refl, 1e-10)),
                "reflection of {:?} missing",
                m.entries
            );
        }
    }

    #[test]
    fn ma_with_large_theta_is_empty() {
        let s = ControlSetSpec::monge_ampere(2, 1.5, 3, 2);
        assert!(build_control_set(&s).is_err());
    }

    #[test]
    fn inv_norm_matches_isotropic_scaling() {
        let m = ControlMatrix::new(vec![vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert!((m.inv_norm(&[3.0, 4.0]) - 2.5).abs() < 1e-14);
    }
}
