//! Dirichlet solver for `-F_s u = f(u)` by Howard policy iteration with a
//! damped outer fixed point, plus the first eigenpair of `-F_s` in a ball.
//!
//! The discrete operator for a fixed control matrix is a lattice stencil:
//! quadrature weights folded through the multilinear interpolation of each
//! quadrature point, so one offset/weight list serves every interior node.
//! Rows are dense-ish (the operator is nonlocal), so the linear solves are
//! matrix-free with diagonal preconditioning; a dense LU fallback covers
//! small systems when the iteration stalls.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::OperatorConfig;
use crate::controls::{build_control_set, ControlMatrix, ControlSet};
use crate::error::{FracError, Result};
use crate::grid::{AxisBox, ExteriorRule, GridFunction};
use crate::nonlin::Nonlinearity;
use crate::problem::{Geometry, ProblemSpec};
use crate::quadrature::{exterior_tail_pair, AngularGrid, NearModel, QuadratureScheme, RadialGrid};

/// Interior-node bookkeeping for a geometry embedded in a sampling box.
#[derive(Debug, Clone)]
pub struct DomainDiscretization {
    pub bounds: AxisBox,
    pub h: f64,
    pub n: usize,
    /// Box nodes per axis, padded to three axes (trailing 1s).
    pub dims: [usize; 3],
    /// Flat box index of each interior node.
    pub interior_flat: Vec<usize>,
    /// Padded multi-index of each interior node.
    pub multi: Vec<[i32; 3]>,
    /// Coordinates of each interior node.
    pub coords: Vec<Vec<f64>>,
    /// Interior id per flat box index, -1 otherwise.
    pub id_of: Vec<i32>,
}

impl DomainDiscretization {
    pub fn new(geometry: &Geometry, bounds: &AxisBox, h: f64) -> Result<Self> {
        let n = bounds.dim();
        if !(2..=3).contains(&n) {
            return Err(FracError::UnsupportedDimension(n));
        }
        let mut dims = [1usize; 3];
        for k in 0..n {
            let m = (bounds.hi[k] - bounds.lo[k]) / h;
            if (m - m.round()).abs() > 1e-9 * (1.0 + m.abs()) {
                return Err(FracError::InvalidConfig(format!(
                    "h = {h} does not divide box edge {}",
                    bounds.hi[k] - bounds.lo[k]
                )));
            }
            dims[k] = m.round() as usize + 1;
        }
        let total = dims[0] * dims[1] * dims[2];
        let mut interior_flat = Vec::new();
        let mut multi = Vec::new();
        let mut coords = Vec::new();
        let mut id_of = vec![-1i32; total];
        for flat in 0..total {
            let i2 = flat % dims[2];
            let i1 = (flat / dims[2]) % dims[1];
            let i0 = flat / (dims[2] * dims[1]);
            let idx = [i0, i1, i2];
            let x: Vec<f64> = (0..n).map(|k| bounds.lo[k] + idx[k] as f64 * h).collect();
            if geometry.contains(&x) {
                id_of[flat] = interior_flat.len() as i32;
                interior_flat.push(flat);
                multi.push([i0 as i32, i1 as i32, i2 as i32]);
                coords.push(x);
            }
        }
        if interior_flat.is_empty() {
            return Err(FracError::InvalidConfig("geometry contains no grid nodes".into()));
        }
        Ok(DomainDiscretization {
            bounds: bounds.clone(),
            h,
            n,
            dims,
            interior_flat,
            multi,
            coords,
            id_of,
        })
    }

    pub fn len(&self) -> usize {
        self.interior_flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior_flat.is_empty()
    }

    fn box_nodes(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }
}

/// Lattice stencil of `L_A` plus the boundary/exterior contribution vector.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub offsets: Vec<[i32; 3]>,
    pub weights: Vec<f64>,
    /// Node-independent diagonal weight (negative; includes the far-field
    /// mass `-u(x) ∫_{|y|>R} k_A`).
    pub diag: f64,
    /// Kernel mass beyond the truncation radius.
    pub tail_mass: f64,
    /// Per-node contribution of prescribed/exterior values; `None` when the
    /// exterior data vanishes identically.
    pub loads: Option<Vec<f64>>,
}

impl DiscreteOperator {
    pub fn load(&self, i: usize) -> f64 {
        self.loads.as_ref().map_or(0.0, |l| l[i])
    }

    /// Monotone-scheme invariants: nonnegative off-diagonal weights,
    /// negative diagonal, zero row sum including the exterior mass.
    pub fn check_monotone(&self, tol: f64) -> Result<()> {
        let scale: f64 = self.weights.iter().map(|w| w.abs()).sum::<f64>() + self.diag.abs();
        for (off, w) in self.offsets.iter().zip(&self.weights) {
            if *w < -tol * scale {
                return Err(FracError::MonotoneViolation(format!(
                    "offset {off:?} has weight {w} (scale {scale})"
                )));
            }
        }
        if self.diag >= 0.0 {
            return Err(FracError::MonotoneViolation(format!("diagonal {} >= 0", self.diag)));
        }
        let row_sum: f64 = self.weights.iter().sum::<f64>() + self.diag + self.tail_mass;
        if row_sum.abs() > 1e-9 * scale {
            return Err(FracError::MonotoneViolation(format!(
                "row sum {row_sum} exceeds tolerance (scale {scale})"
            )));
        }
        Ok(())
    }
}

/// Quadrature displacements with coefficients for one control matrix.
struct QuadCloud {
    /// (displacement, coefficient); both signs listed explicitly, each with
    /// half the kernel weight of its radius.
    points: Vec<([f64; 3], f64)>,
    /// Total kernel mass of the listed points (enters the diagonal).
    neg_diag: f64,
    tail_mass: f64,
}

fn quad_cloud(
    a: &ControlMatrix,
    cfg: &OperatorConfig,
    scheme: &QuadratureScheme,
    ang: &AngularGrid,
    rad: &RadialGrid,
) -> QuadCloud {
    let n = cfg.n;
    let power = -(n as f64 + 2.0 * cfg.s);
    let two_s = 2.0 * cfg.s;
    let delta = scheme.near_radius;
    let near_coeff = delta.powf(-two_s) / (2.0 - two_s);
    let tm_radial = scheme.far_radius.powf(-two_s) / two_s;
    let mut points = Vec::with_capacity(2 * ang.len() * (rad.rs.len() + 1));
    let mut neg_diag = 0.0;
    let mut tail_mass = 0.0;
    for (j, omega) in ang.omegas.iter().enumerate() {
        let kj = ang.weights[j] * a.inv_norm(&omega[..n]).powf(power);
        // Directional near-field correction at r = δ keeps every weight
        // nonnegative; the Hessian cross terms would not.
        let mut radial: Vec<(f64, f64)> = Vec::with_capacity(rad.rs.len() + 1);
        radial.push((delta, kj * near_coeff));
        for (r, w) in rad.rs.iter().zip(&rad.ws) {
            radial.push((*r, kj * w));
        }
        for (r, c) in radial {
            let mut vp = [0.0; 3];
            let mut vm = [0.0; 3];
            for k in 0..n {
                vp[k] = r * omega[k];
                vm[k] = -r * omega[k];
            }
            points.push((vp, 0.5 * c));
            points.push((vm, 0.5 * c));
            neg_diag += c;
        }
        tail_mass += kj * tm_radial;
    }
    QuadCloud { points, neg_diag, tail_mass }
}

/// Builds the lattice stencil of `L_A` on the discretized domain with the
/// monotone-scheme validation enabled.
pub fn assemble(
    a: &ControlMatrix,
    dom: &DomainDiscretization,
    cfg: &OperatorConfig,
    scheme: &QuadratureScheme,
    exterior: &ExteriorRule,
) -> Result<DiscreteOperator> {
    assemble_checked(a, dom, cfg, scheme, exterior, true)
}

pub fn assemble_checked(
    a: &ControlMatrix,
    dom: &DomainDiscretization,
    cfg: &OperatorConfig,
    scheme: &QuadratureScheme,
    exterior: &ExteriorRule,
    check_monotone: bool,
) -> Result<DiscreteOperator> {
    scheme.validate()?;
    let n = cfg.n;
    let h = dom.h;
    let ang = AngularGrid::new(n, scheme.n_angles)?;
    let rad = RadialGrid::new(scheme, cfg.s);
    let cloud = quad_cloud(a, cfg, scheme, &ang, &rad);

    // Fold interpolation corners into lattice offsets; node-independent on a
    // uniform grid. A Hessian-based near field adds the cross-difference
    // stencil instead, whose corner weights are sign-indefinite.
    use std::collections::HashMap;
    let mut map: HashMap<[i32; 3], f64> = HashMap::new();
    let mut add_corners = |v: &[f64; 3], c: f64, map: &mut HashMap<[i32; 3], f64>| {
        let mut base = [0i32; 3];
        let mut frac = [0f64; 3];
        for k in 0..n {
            let t = v[k] / h;
            let b = t.floor();
            base[k] = b as i32;
            frac[k] = t - b;
        }
        for corner in 0..(1usize << n) {
            let mut w = c;
            let mut off = [0i32; 3];
            for k in 0..n {
                let bit = ((corner >> k) & 1) as i32;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                off[k] = base[k] + bit;
            }
            if w != 0.0 {
                *map.entry(off).or_insert(0.0) += w;
            }
        }
    };
    for (v, c) in &cloud.points {
        add_corners(v, *c, &mut map);
    }
    let mut extra_diag = 0.0;
    if matches!(scheme.near_model, NearModel::TaylorHessian) {
        // Replace the directional near entries by the 5-point Hessian model:
        // subtract the directional ones and add H-stencil combinations.
        // Kept for the evaluation path; the solver default is Directional.
        // (The directional entries were already added above; remove them.)
        let two_s = 2.0 * cfg.s;
        let delta = scheme.near_radius;
        let near_coeff = delta.powf(-two_s) / (2.0 - two_s);
        let power = -(n as f64 + 2.0 * cfg.s);
        for (j, omega) in ang.omegas.iter().enumerate() {
            let kj = ang.weights[j] * a.inv_norm(&omega[..n]).powf(power);
            let c = kj * near_coeff;
            let mut vp = [0.0; 3];
            let mut vm = [0.0; 3];
            for k in 0..n {
                vp[k] = delta * omega[k];
                vm[k] = -delta * omega[k];
            }
            add_corners(&vp, -0.5 * c, &mut map);
            add_corners(&vm, -0.5 * c, &mut map);
            // ω^T H ω with central differences at the grid step: the radial
            // factor δ^{2-2s}/(2-2s) against the quadratic model.
            let hcoef = kj * delta.powf(2.0 - two_s) / (2.0 - two_s) / (2.0 * h * h);
            for p in 0..n {
                for q in 0..n {
                    let wpq = hcoef * omega[p] * omega[q];
                    if wpq == 0.0 {
                        continue;
                    }
                    if p == q {
                        let mut e = [0i32; 3];
                        e[p] = 1;
                        *map.entry(e).or_insert(0.0) += wpq;
                        e[p] = -1;
                        *map.entry(e).or_insert(0.0) += wpq;
                        extra_diag -= 2.0 * wpq;
                    } else {
                        // Cross term via the four-corner stencil / 4.
                        for (sp, sq, sign) in
                            [(1, 1, 0.5), (-1, -1, 0.5), (1, -1, -0.5), (-1, 1, -0.5)]
                        {
                            let mut e = [0i32; 3];
                            e[p] = sp;
                            e[q] = sq;
                            *map.entry(e).or_insert(0.0) += sign * wpq;
                        }
                    }
                }
            }
        }
    }
    let mut diag = -cloud.neg_diag - cloud.tail_mass + extra_diag;
    // Self-landing interpolation mass belongs on the diagonal.
    if let Some(w0) = map.remove(&[0, 0, 0]) {
        diag += w0;
    }
    let mut entries: Vec<([i32; 3], f64)> =
        map.into_iter().filter(|(_, w)| w.abs() > 1e-300).collect();
    entries.sort_by_key(|(off, _)| *off);
    let offsets: Vec<[i32; 3]> = entries.iter().map(|(o, _)| *o).collect();
    let weights: Vec<f64> = entries.iter().map(|(_, w)| *w).collect();

    // Exterior loads.
    let loads = if matches!(exterior, ExteriorRule::Zero) {
        None
    } else {
        let g = |x: &[f64]| exterior_value_of(exterior, x);
        let loads: Result<Vec<f64>> = dom
            .coords
            .par_iter()
            .map(|x| {
                let mut acc = 0.0;
                let mut y = [0.0f64; 3];
                for (v, c) in &cloud.points {
                    for k in 0..n {
                        y[k] = x[k] + v[k];
                    }
                    let yn = &y[..n];
                    if dom.bounds.contains(yn) {
                        let mut base = [0usize; 3];
                        let mut frac = [0f64; 3];
                        for k in 0..n {
                            let t = (yn[k] - dom.bounds.lo[k]) / h;
                            let b = t.floor().clamp(0.0, (dom.dims[k] - 2) as f64);
                            base[k] = b as usize;
                            frac[k] = (t - b).clamp(0.0, 1.0);
                        }
                        for corner in 0..(1usize << n) {
                            let mut w = *c;
                            let mut idx = [0usize; 3];
                            for k in 0..n {
                                let bit = (corner >> k) & 1;
                                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                                idx[k] = base[k] + bit;
                            }
                            if w == 0.0 {
                                continue;
                            }
                            let flat = (idx[0] * dom.dims[1] + idx[1]) * dom.dims[2] + idx[2];
                            if dom.id_of[flat] < 0 {
                                let xc: Vec<f64> = (0..n)
                                    .map(|k| dom.bounds.lo[k] + idx[k] as f64 * h)
                                    .collect();
                                acc += w * g(&xc);
                            }
                        }
                    } else {
                        acc += c * g(yn);
                    }
                }
                // Far-field tail carried by the data.
                let pw = -(n as f64 + 2.0 * cfg.s);
                for (j, omega) in ang.omegas.iter().enumerate() {
                    let kj = ang.weights[j] * a.inv_norm(&omega[..n]).powf(pw);
                    let (tp, _) =
                        exterior_tail_pair(exterior, x, &omega[..n], scheme.far_radius, cfg.s)?;
                    acc += kj * tp;
                }
                Ok(acc)
            })
            .collect();
        Some(loads?)
    };

    let op = DiscreteOperator { offsets, weights, diag, tail_mass: cloud.tail_mass, loads };
    if check_monotone {
        op.check_monotone(1e-12)?;
    }
    Ok(op)
}

pub(crate) fn exterior_value_of(rule: &ExteriorRule, x: &[f64]) -> f64 {
    match rule {
        ExteriorRule::Zero => 0.0,
        ExteriorRule::Constant { c } => *c,
        ExteriorRule::Analytic { expr } => expr.eval(x),
        ExteriorRule::ReflectPlane { .. } => 0.0,
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

/// Matrix action `(S_{A(i)} u)_i` for a per-node policy (loads excluded).
pub fn apply_policy(
    ops: &[DiscreteOperator],
    policy: &[usize],
    dom: &DomainDiscretization,
    u: &[f64],
    out: &mut [f64],
) {
    let mut ufull = vec![0.0f64; dom.box_nodes()];
    for (i, &fl) in dom.interior_flat.iter().enumerate() {
        ufull[fl] = u[i];
    }
    let d = dom.dims;
    out.par_iter_mut().enumerate().for_each(|(i, o)| {
        let op = &ops[policy[i]];
        let m = dom.multi[i];
        let mut acc = op.diag * u[i];
        for (off, w) in op.offsets.iter().zip(&op.weights) {
            let t0 = m[0] + off[0];
            let t1 = m[1] + off[1];
            let t2 = m[2] + off[2];
            if t0 >= 0
                && (t0 as usize) < d[0]
                && t1 >= 0
                && (t1 as usize) < d[1]
                && t2 >= 0
                && (t2 as usize) < d[2]
            {
                let flat = (t0 as usize * d[1] + t1 as usize) * d[2] + t2 as usize;
                acc += w * ufull[flat];
            }
        }
        *o = acc;
    });
}

/// Pointwise `min_A [(S_A u)_i + load_{A,i}]` with the first-attaining
/// argmin.
pub fn bellman_apply(
    ops: &[DiscreteOperator],
    dom: &DomainDiscretization,
    u: &[f64],
) -> (Vec<f64>, Vec<usize>) {
    let nn = u.len();
    let mut best = vec![f64::INFINITY; nn];
    let mut arg = vec![0usize; nn];
    let mut work = vec![0.0; nn];
    let single: Vec<usize> = vec![0; nn];
    for (k, op) in ops.iter().enumerate() {
        apply_policy(std::slice::from_ref(op), &single, dom, u, &mut work);
        for i in 0..nn {
            let v = work[i] + op.load(i);
            if v < best[i] {
                best[i] = v;
                arg[i] = k;
            }
        }
    }
    (best, arg)
}

/// Jacobi-preconditioned BiCGStab on matrix-free `A x = b`.
fn bicgstab<F>(
    matvec: F,
    diag: &[f64],
    b: &[f64],
    x0: &[f64],
    rtol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64, usize)>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let inv_d: Vec<f64> = diag.iter().map(|&d| 1.0 / d).collect();
    let bs: Vec<f64> = b.iter().zip(&inv_d).map(|(a, d)| a * d).collect();
    let bnorm = bs.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut t = vec![0.0; n];
    let av = |x: &[f64], out: &mut [f64]| {
        matvec(x, out);
        for (o, d) in out.iter_mut().zip(&inv_d) {
            *o *= d;
        }
    };
    let mut x = x0.to_vec();
    av(&x, &mut t);
    let mut r: Vec<f64> = bs.iter().zip(&t).map(|(b, t)| b - t).collect();
    let rhat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0f64, 1.0f64, 1.0f64);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s_vec = vec![0.0; n];
    let dotp = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for it in 0..max_iter {
        let rnorm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if rnorm <= rtol * bnorm {
            return Ok((x, rnorm / bnorm, it));
        }
        let rho_new = dotp(&rhat, &r);
        if rho_new.abs() < 1e-300 {
            return Err(FracError::NoConvergence("BiCGStab breakdown (rho)".into()));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        av(&p, &mut v);
        let denom = dotp(&rhat, &v);
        if denom.abs() < 1e-300 {
            return Err(FracError::NoConvergence("BiCGStab breakdown (rhat.v)".into()));
        }
        alpha = rho / denom;
        for i in 0..n {
            s_vec[i] = r[i] - alpha * v[i];
        }
        av(&s_vec, &mut t);
        let tt = dotp(&t, &t);
        omega = if tt > 0.0 { dotp(&t, &s_vec) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s_vec[i];
            r[i] = s_vec[i] - omega * t[i];
        }
        if omega.abs() < 1e-300 {
            return Err(FracError::NoConvergence("BiCGStab breakdown (omega)".into()));
        }
    }
    let rnorm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if rnorm <= rtol * bnorm * 10.0 {
        Ok((x, rnorm / bnorm, max_iter))
    } else {
        Err(FracError::NoConvergence(format!(
            "BiCGStab stalled at relative residual {:.3e}",
            rnorm / bnorm
        )))
    }
}

/// Dense `(-S_P + shift I)`, used by the fallback path and the eigen oracle.
pub fn assemble_dense_neg(
    ops: &[DiscreteOperator],
    policy: &[usize],
    dom: &DomainDiscretization,
    shift: f64,
) -> DMatrix<f64> {
    let nn = dom.len();
    let mut m = DMatrix::zeros(nn, nn);
    let d = dom.dims;
    for i in 0..nn {
        let op = &ops[policy[i]];
        m[(i, i)] = -op.diag + shift;
        let mi = dom.multi[i];
        for (off, w) in op.offsets.iter().zip(&op.weights) {
            let t0 = mi[0] + off[0];
            let t1 = mi[1] + off[1];
            let t2 = mi[2] + off[2];
            if t0 >= 0
                && (t0 as usize) < d[0]
                && t1 >= 0
                && (t1 as usize) < d[1]
                && t2 >= 0
                && (t2 as usize) < d[2]
            {
                let flat = (t0 as usize * d[1] + t1 as usize) * d[2] + t2 as usize;
                let id = dom.id_of[flat];
                if id >= 0 {
                    m[(i, id as usize)] -= w;
                }
            }
        }
    }
    m
}

const DENSE_FALLBACK_LIMIT: usize = 4000;

/// Solves `(-S_P + shift) u = rhs`: BiCGStab first, dense LU fallback below
/// [`DENSE_FALLBACK_LIMIT`] unknowns.
fn solve_linear(
    ops: &[DiscreteOperator],
    policy: &[usize],
    dom: &DomainDiscretization,
    shift: f64,
    rhs: &[f64],
    x0: &[f64],
    rtol: f64,
) -> Result<Vec<f64>> {
    let diag: Vec<f64> = policy.iter().map(|&p| -ops[p].diag + shift).collect();
    let matvec = |x: &[f64], out: &mut [f64]| {
        apply_policy(ops, policy, dom, x, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -*o + shift * xi;
        }
    };
    match bicgstab(matvec, &diag, rhs, x0, rtol, 4000) {
        Ok((x, _, _)) => Ok(x),
        Err(e) => {
            if dom.len() <= DENSE_FALLBACK_LIMIT {
                let m = assemble_dense_neg(ops, policy, dom, shift);
                let b = nalgebra::DVector::from_column_slice(rhs);
                match m.lu().solve(&b) {
                    Some(x) => Ok(x.as_slice().to_vec()),
                    None => Err(FracError::NoConvergence("dense LU failed".into())),
                }
            } else {
                Err(e)
            }
        }
    }
}

/// Iteration counters and residual trace of a Dirichlet solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub outer_iterations: usize,
    pub policy_iterations: usize,
    pub residual_history: Vec<f64>,
    pub policy_map: Vec<usize>,
    pub converged: bool,
    pub final_residual: f64,
}

/// Knobs for [`solve_dirichlet`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub scheme: Option<QuadratureScheme>,
    pub check_monotone: bool,
    /// Relative tolerance of the inner linear solves.
    pub lin_rtol: f64,
    pub initial_guess: Option<Vec<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-6,
            max_iter: 80,
            scheme: None,
            check_monotone: true,
            lin_rtol: 1e-11,
            initial_guess: None,
        }
    }
}

pub fn default_solver_scheme(problem: &ProblemSpec) -> QuadratureScheme {
    let mut s = QuadratureScheme::for_grid(problem.grid_box.diameter(), problem.h);
    s.near_model = NearModel::Directional;
    s.n_angles = 24;
    s
}

/// Assembles the discrete operators for every member of a control set.
pub fn assemble_all(
    controls: &ControlSet,
    dom: &DomainDiscretization,
    cfg: &OperatorConfig,
    scheme: &QuadratureScheme,
    exterior: &ExteriorRule,
    check_monotone: bool,
) -> Result<Vec<DiscreteOperator>> {
    controls
        .members
        .par_iter()
        .map(|a| assemble_checked(a, dom, cfg, scheme, exterior, check_monotone))
        .collect()
}

/// Solves the Dirichlet problem `-F_s u = f(u)`, `u = g` outside the domain.
///
/// Outer loop: damped Picard with a Lipschitz dominance shift,
/// `(-S_P + Λ) u_new = f(u_old) + Λ u_old + load_P`; inner loop: Howard
/// policy updates `P(x) <- argmin_A (S_A u)(x)`.
pub fn solve_dirichlet(
    problem: &ProblemSpec,
    options: &SolveOptions,
) -> Result<(GridFunction, SolveReport)> {
    problem.validate()?;
    if matches!(problem.f.kind, crate::nonlin::NonlinKind::GradientWeighted { .. }) {
        return Err(FracError::InvalidConfig(
            "gradient-weighted nonlinearities are diagnostics-only".into(),
        ));
    }
    let scheme = options.scheme.clone().unwrap_or_else(|| default_solver_scheme(problem));
    let dom = DomainDiscretization::new(&problem.geometry, &problem.grid_box, problem.h)?;
    let controls = build_control_set(&problem.controls)?;
    let ops = assemble_all(
        &controls,
        &dom,
        &problem.config,
        &scheme,
        &problem.exterior_data,
        options.check_monotone,
    )?;
    let nn = dom.len();
    let f = &problem.f;

    // Initial guess: the f = 0 extension of the exterior data.
    let mut u = match &options.initial_guess {
        Some(g) => g.clone(),
        None => {
            let u0 = vec![0.0; nn];
            let (_, policy) = bellman_apply(&ops, &dom, &u0);
            let rhs: Vec<f64> = (0..nn).map(|i| ops[policy[i]].load(i)).collect();
            solve_linear(&ops, &policy, &dom, 0.0, &rhs, &u0, options.lin_rtol)?
        }
    };

    let mut report = SolveReport {
        outer_iterations: 0,
        policy_iterations: 0,
        residual_history: Vec::new(),
        policy_map: vec![0; nn],
        converged: false,
        final_residual: f64::INFINITY,
    };
    let residual_of = |u: &[f64]| -> (f64, Vec<usize>) {
        let (mins, arg) = bellman_apply(&ops, &dom, u);
        let mut sup = 0.0f64;
        for i in 0..nn {
            sup = sup.max((mins[i] + f.eval(u[i])).abs());
        }
        (sup, arg)
    };

    let (mut residual, mut policy) = residual_of(&u);
    report.residual_history.push(residual);
    if residual <= options.tol {
        report.converged = true;
        report.final_residual = residual;
        report.policy_map = policy;
        return Ok((pack_solution(problem, &dom, &u), report));
    }

    let mut damping = 1.0f64;
    for outer in 0..options.max_iter {
        report.outer_iterations = outer + 1;
        // Lipschitz dominance shift over the working range.
        let lo = u.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.5 * (hi - lo).abs() + 0.1;
        let lambda = f.lipschitz_on(lo - pad, hi + pad);

        let rhs_f: Vec<f64> = u.iter().map(|&ui| f.eval(ui)).collect();
        // Howard inner loop with frozen f(u_old).
        let mut v = u.clone();
        for _howard in 0..30 {
            report.policy_iterations += 1;
            let rhs: Vec<f64> = (0..nn)
                .map(|i| rhs_f[i] + lambda * u[i] + ops[policy[i]].load(i))
                .collect();
            v = solve_linear(&ops, &policy, &dom, lambda, &rhs, &v, options.lin_rtol)?;
            let (_, new_policy) = bellman_apply(&ops, &dom, &v);
            if new_policy == policy {
                break;
            }
            policy = new_policy;
        }

        // Damped update; halve on residual increase.
        let mut accepted = false;
        for _try in 0..6 {
            let cand: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + damping * (b - a)).collect();
            let (r_new, pol_new) = residual_of(&cand);
            if r_new <= residual * (1.0 + 1e-12) || damping < 1e-3 {
                u = cand;
                residual = r_new;
                policy = pol_new;
                accepted = true;
                break;
            }
            damping *= 0.5;
        }
        if !accepted {
            let (r_new, pol_new) = residual_of(&v);
            u = v.clone();
            residual = r_new;
            policy = pol_new;
        }
        damping = (damping * 2.0).min(1.0);
        report.residual_history.push(residual);
        if residual <= options.tol {
            report.converged = true;
            break;
        }
    }
    report.final_residual = residual;
    report.policy_map = policy;
    Ok((pack_solution(problem, &dom, &u), report))
}

fn pack_solution(problem: &ProblemSpec, dom: &DomainDiscretization, u: &[f64]) -> GridFunction {
    let n = dom.n;
    let dims: Vec<usize> = dom.dims[..n].to_vec();
    let total: usize = dims.iter().product();
    let mut values = vec![0.0; total];
    // Prescribed nodes carry the exterior data.
    for flat in 0..total {
        let i2 = flat % dom.dims[2];
        let i1 = (flat / dom.dims[2]) % dom.dims[1];
        let i0 = flat / (dom.dims[2] * dom.dims[1]);
        let idx = [i0, i1, i2];
        let x: Vec<f64> = (0..n).map(|k| dom.bounds.lo[k] + idx[k] as f64 * dom.h).collect();
        values[flat] = exterior_value_of(&problem.exterior_data, &x);
    }
    for (i, &fl) in dom.interior_flat.iter().enumerate() {
        values[fl] = u[i];
    }
    GridFunction {
        bounds: dom.bounds.clone(),
        h: dom.h,
        dims,
        values,
        exterior: problem.exterior_data.clone(),
        analytic: None,
    }
}

/// First eigenpair of `-F_s` on a ball with zero exterior data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenPair {
    pub lambda1: f64,
    pub psi: GridFunction,
    pub residual: f64,
    pub iterations: usize,
    pub radius: f64,
    pub s: f64,
}

/// Options for [`eigenpair_ball`].
#[derive(Debug, Clone)]
pub struct EigenOptions {
    /// Nodes per radius (grid spacing `h = R / nodes_per_radius`).
    pub nodes_per_radius: usize,
    pub tol: f64,
    pub max_power_iters: usize,
    pub scheme: Option<QuadratureScheme>,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { nodes_per_radius: 16, tol: 1e-4, max_power_iters: 300, scheme: None }
    }
}

/// Inverse power iteration on the policy-linearized operator:
/// repeat { solve `-F_s v = ψ_k`; `ψ_{k+1} = v / max v` }; `λ1 = 1 / max v`.
pub fn eigenpair_ball(
    radius: f64,
    cfg: &OperatorConfig,
    controls: &ControlSet,
    options: &EigenOptions,
) -> Result<EigenPair> {
    if radius <= 0.0 {
        return Err(FracError::InvalidConfig("radius must be positive".into()));
    }
    let h = radius / options.nodes_per_radius as f64;
    let half = ((radius + 3.0 * h) / h).ceil() * h;
    let bounds = AxisBox::cube(cfg.n, half);
    let geometry = Geometry::Ball { radius, center: vec![0.0; cfg.n] };
    let dom = DomainDiscretization::new(&geometry, &bounds, h)?;
    let scheme = options.scheme.clone().unwrap_or_else(|| {
        let mut s = QuadratureScheme::for_grid(bounds.diameter(), h);
        s.near_model = NearModel::Directional;
        s.n_angles = 24;
        s
    });
    let ops = assemble_all(controls, &dom, cfg, &scheme, &ExteriorRule::Zero, true)?;
    let nn = dom.len();

    // Positive initial profile (R^2 - |x|^2).
    let mut psi: Vec<f64> = dom
        .coords
        .iter()
        .map(|x| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            (radius * radius - r2).max(0.0)
        })
        .collect();
    let maxv = psi.iter().cloned().fold(0.0f64, f64::max);
    psi.iter_mut().for_each(|v| *v /= maxv);

    let mut lambda = 1.0f64;
    let mut policy = vec![0usize; nn];
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    for it in 0..options.max_power_iters {
        iterations = it + 1;
        // Solve -F_s v = ψ with Howard updates.
        let mut v = psi.clone();
        for _ in 0..20 {
            v = solve_linear(&ops, &policy, &dom, 0.0, &psi, &v, 1e-12)?;
            let (_, new_policy) = bellman_apply(&ops, &dom, &v);
            if new_policy == policy {
                break;
            }
            policy = new_policy;
        }
        let vmax = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(vmax > 0.0) {
            return Err(FracError::NoConvergence("power iterate lost positivity".into()));
        }
        lambda = 1.0 / vmax;
        // Positive-cone projection guards against sign flips near the rim.
        let next: Vec<f64> = v.iter().map(|&x| (x / vmax).max(0.0)).collect();
        psi = next;
        // Residual ||F_s ψ + λ ψ||_∞.
        let (mins, _) = bellman_apply(&ops, &dom, &psi);
        residual =
            (0..nn).map(|i| (mins[i] + lambda * psi[i]).abs()).fold(0.0f64, f64::max);
        if residual <= options.tol * lambda {
            break;
        }
    }
    if residual > options.tol * lambda {
        return Err(FracError::NoConvergence(format!(
            "eigen residual {residual:.3e} above tolerance {:.3e}",
            options.tol * lambda
        )));
    }
    // Pack ψ on the box with zero exterior.
    let n = cfg.n;
    let dims: Vec<usize> = dom.dims[..n].to_vec();
    let total: usize = dims.iter().product();
    let mut values = vec![0.0; total];
    for (i, &fl) in dom.interior_flat.iter().enumerate() {
        values[fl] = psi[i];
    }
    let psi_gf = GridFunction {
        bounds: dom.bounds.clone(),
        h,
        dims,
        values,
        exterior: ExteriorRule::Zero,
        analytic: None,
    };
    Ok(EigenPair { lambda1: lambda, psi: psi_gf, residual, iterations, radius, s: cfg.s })
}

/// `M_0 = (λ_1 / c_0)^{1/(2s)}`, the distance scale past which solutions of
/// (H2) problems stay bounded away from zero.
pub fn estimate_m0(f: &Nonlinearity, eig: &EigenPair) -> Result<f64> {
    let rep = crate::nonlin::hypothesis_report(f, f.mu.unwrap_or(1.0).max(1.0), 512);
    if rep.h2 != crate::nonlin::HypothesisVerdict::True {
        return Err(FracError::HypothesisFailed);
    }
    let c0 = f.c0.ok_or(FracError::HypothesisFailed)?;
    Ok((eig.lambda1 / c0).powf(1.0 / (2.0 * eig.s)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::ControlSetSpec;
    use crate::grid::make_grid_function;
    use crate::quadrature::Evaluator;

    fn ball_problem(f: Nonlinearity, controls: ControlSetSpec, h: f64) -> ProblemSpec {
        ProblemSpec {
            geometry: Geometry::Ball { radius: 1.0, center: vec![0.0, 0.0] },
            config: OperatorConfig::new(2, 0.5, 0.5, 2.0),
            controls,
            f,
            exterior_data: ExteriorRule::Zero,
            grid_box: AxisBox::cube(2, 1.2),
            h,
        }
    }

    #[test]
    fn stencil_is_monotone_with_negative_diagonal() {
        let p = ball_problem(
            Nonlinearity::constant(1.0),
            ControlSetSpec::bellman(2, 0.5, 2.0, 3, 4),
            0.1,
        );
        let dom = DomainDiscretization::new(&p.geometry, &p.grid_box, p.h).unwrap();
        let scheme = default_solver_scheme(&p);
        let set = build_control_set(&p.controls).unwrap();
        for a in &set.members {
            let op = assemble(a, &dom, &p.config, &scheme, &ExteriorRule::Zero).unwrap();
            op.check_monotone(1e-12).unwrap();
            assert!(op.diag < 0.0);
            assert!(op.tail_mass > 0.0);
        }
    }

    #[test]
    fn stencil_matches_pointwise_evaluation_on_gaussian() {
        let cfg = OperatorConfig::new(2, 0.5, 0.5, 2.0);
        let gf =
            make_grid_function(AxisBox::cube(2, 2.0), 0.05, "gaussian", &serde_json::json!({}))
                .unwrap();
        let geometry = Geometry::Ball { radius: 1.0, center: vec![0.0, 0.0] };
        let dom = DomainDiscretization::new(&geometry, &gf.bounds, gf.h).unwrap();
        let mut scheme = QuadratureScheme::for_grid(gf.bounds.diameter(), gf.h);
        scheme.near_model = NearModel::Directional;
        scheme.n_angles = 32;
        let a = ControlMatrix::identity(2);
        let ext = ExteriorRule::Analytic { expr: crate::expr::Expr::gaussian(2) };
        let op = assemble(&a, &dom, &cfg, &scheme, &ext).unwrap();
        let u: Vec<f64> = dom.coords.iter().map(|x| gf.eval(x)).collect();
        let mut out = vec![0.0; u.len()];
        apply_policy(std::slice::from_ref(&op), &vec![0; u.len()], &dom, &u, &mut out);
        let ev = Evaluator::new(&cfg, &scheme).unwrap();
        let target = dom
            .coords
            .iter()
            .position(|x| x.iter().map(|v| v * v).sum::<f64>() < 0.01)
            .unwrap();
        let x = &dom.coords[target];
        let direct = ev.eval_l_a(&gf, &a, x).unwrap();
        let stencil_val = out[target] + op.load(target);
        // Interpolated stencil vs analytic-sampled evaluation: the error
        // budget covers both interpolation and the near-model difference.
        let budget = direct.error_bar + 0.05 * direct.value.abs() + 0.05;
        assert!(
            (stencil_val - direct.value).abs() < budget,
            "stencil {stencil_val} vs eval {} (budget {budget})",
            direct.value
        );
    }

    #[test]
    fn liouville_constant_exterior() {
        let mut p = ball_problem(
            Nonlinearity::constant(0.0),
            ControlSetSpec::bellman(2, 0.5, 2.0, 3, 2),
            0.1,
        );
        p.exterior_data = ExteriorRule::Constant { c: 0.7 };
        let (u, rep) =
            solve_dirichlet(&p, &SolveOptions { tol: 1e-9, ..Default::default() }).unwrap();
        assert!(rep.converged);
        for flat in 0..u.node_count() {
            assert!((u.values[flat] - 0.7).abs() < 1e-8, "node {flat}: {}", u.values[flat]);
        }
    }

    #[test]
    fn comparison_of_ordered_exteriors() {
        let mk = |c: f64| {
            let mut p = ball_problem(
                Nonlinearity::constant(0.0),
                ControlSetSpec::bellman(2, 0.5, 2.0, 3, 2),
                0.1,
            );
            p.exterior_data = ExteriorRule::Constant { c };
            p
        };
        let opts = SolveOptions { tol: 1e-9, ..Default::default() };
        let (u1, _) = solve_dirichlet(&mk(0.3), &opts).unwrap();
        let (u2, _) = solve_dirichlet(&mk(0.5), &opts).unwrap();
        for (a, b) in u1.values.iter().zip(&u2.values) {
            assert!(a <= &(b + 1e-8));
        }
    }

    #[test]
    fn constant_source_positive_solution() {
        let p = ball_problem(Nonlinearity::constant(1.0), ControlSetSpec::singleton(2), 0.1);
        let (u, rep) = solve_dirichlet(&p, &SolveOptions::default()).unwrap();
        assert!(rep.converged, "residuals {:?}", rep.residual_history);
        let geometry = Geometry::Ball { radius: 1.0, center: vec![0.0, 0.0] };
        let dom = DomainDiscretization::new(&geometry, &p.grid_box, p.h).unwrap();
        for (i, x) in dom.coords.iter().enumerate() {
            let v = u.values[dom.interior_flat[i]];
            assert!(v > 0.0, "u({x:?}) = {v}");
        }
        assert!(u.eval(&[0.0, 0.0]) > u.eval(&[0.9, 0.0]));
    }

    #[test]
    fn de_giorgi_stays_below_mu() {
        // (H1) nonlinearity with exterior data < μ keeps the solution < μ.
        let p = ball_problem(
            Nonlinearity::de_giorgi(),
            ControlSetSpec::bellman(2, 0.5, 2.0, 3, 2),
            0.1,
        );
        let (u, rep) = solve_dirichlet(&p, &SolveOptions::default()).unwrap();
        assert!(rep.converged);
        assert!(u.values.iter().all(|&v| v < 1.0), "max {}", u.max_abs());
    }

    #[test]
    fn eigenpair_small_grid_matches_dense_oracle() {
        let cfg = OperatorConfig::new(2, 0.5, 1.0, 1.0);
        let controls = ControlSet::singleton_identity(2);
        let opts = EigenOptions { nodes_per_radius: 8, tol: 1e-5, ..Default::default() };
        let eig = eigenpair_ball(1.0, &cfg, &controls, &opts).unwrap();
        assert!(eig.lambda1 > 0.0);
        let maxv = eig.psi.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((maxv - 1.0).abs() < 1e-12);
        assert!(eig.psi.values.iter().all(|&v| v >= 0.0));

        let geometry = Geometry::Ball { radius: 1.0, center: vec![0.0, 0.0] };
        let dom = DomainDiscretization::new(&geometry, &eig.psi.bounds, eig.psi.h).unwrap();
        let mut scheme = QuadratureScheme::for_grid(eig.psi.bounds.diameter(), eig.psi.h);
        scheme.near_model = NearModel::Directional;
        scheme.n_angles = 24;
        let op = assemble(&ControlMatrix::identity(2), &dom, &cfg, &scheme, &ExteriorRule::Zero)
            .unwrap();
        let m = assemble_dense_neg(std::slice::from_ref(&op), &vec![0; dom.len()], &dom, 0.0);
        let asym = (&m - m.transpose()).abs().max();
        assert!(asym < 1e-9, "interior matrix should be symmetric, asym {asym}");
        let lmin = m
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(
            (eig.lambda1 - lmin).abs() < 5e-3 * lmin,
            "power {} vs dense {lmin}",
            eig.lambda1
        );
    }

    #[test]
    fn m0_formula() {
        let f = Nonlinearity::de_giorgi();
        let psi =
            make_grid_function(AxisBox::cube(2, 1.0), 0.5, "constant", &serde_json::json!({}))
                .unwrap();
        let eig = EigenPair {
            lambda1: 2.0,
            psi,
            residual: 0.0,
            iterations: 1,
            radius: 1.0,
            s: 0.5,
        };
        // λ1 = 4 c0, s = 1/2: M0 = 4.
        assert!((estimate_m0(&f, &eig).unwrap() - 4.0).abs() < 1e-12);
        let eig1 = EigenPair { lambda1: 0.5, ..eig };
        assert!((estimate_m0(&f, &eig1).unwrap() - 1.0).abs() < 1e-12);
    }
}
