//! Nonlinearity library and the (H1)-(H3) hypothesis checks.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonlinKind {
    /// `f(t) = t^p`, `p >= 1`.
    Power { p: f64 },
    /// `f(t) = e^{κ t}`.
    Exponential { kappa: f64 },
    /// `f(t) = t - t^3`, the Allen-Cahn reaction term.
    DeGiorgi,
    /// `f(t) = t^p - t` arising from `-F_s u + u = u^p`.
    SchrodingerPower { p: f64 },
    /// `base(t) (1 + |∇u|^2)^{σ/2}`; gradient factor supplied by diagnostics.
    GradientWeighted { base: Box<NonlinKind>, sigma: f64 },
    Constant { c: f64 },
}

impl NonlinKind {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            NonlinKind::Power { p } => t.abs().powf(*p) * if t < 0.0 && (*p as i64 % 2 == 1) { -1.0 } else { 1.0 },
            NonlinKind::Exponential { kappa } => (kappa * t).exp(),
            NonlinKind::DeGiorgi => t - t * t * t,
            NonlinKind::SchrodingerPower { p } => t.abs().powf(*p) - t,
            NonlinKind::GradientWeighted { base, .. } => base.eval(t),
            NonlinKind::Constant { c } => *c,
        }
    }
}

/// A reaction term `f` together with the constants entering hypotheses
/// (H1)-(H3).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Nonlinearity {
    #[serde(flatten)]
    pub kind: NonlinKind,
    /// Positive zero of `f` used by the asymptotics (1 for the De Giorgi
    /// term); `None` when the kind has no natural positive zero.
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub delta0: Option<f64>,
    #[serde(default)]
    pub delta1: Option<f64>,
    #[serde(default)]
    pub c0: Option<f64>,
}

impl Nonlinearity {
    pub fn new(kind: NonlinKind) -> Self {
        let mu = match kind {
            NonlinKind::DeGiorgi => Some(1.0),
            NonlinKind::SchrodingerPower { .. } => Some(1.0),
            _ => None,
        };
        Nonlinearity { kind, mu, delta0: None, delta1: None, c0: None }
    }

    pub fn de_giorgi() -> Self {
        Nonlinearity {
            kind: NonlinKind::DeGiorgi,
            mu: Some(1.0),
            delta0: Some(0.5),
            delta1: Some(0.25),
            c0: Some(0.5),
        }
    }

    pub fn constant(c: f64) -> Self {
        Nonlinearity::new(NonlinKind::Constant { c })
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.kind.eval(t)
    }

    /// Evaluation with the gradient factor, `f(t) (1 + |∇u|^2)^{σ/2}`.
    pub fn eval_with_gradient(&self, t: f64, grad_norm2: f64) -> f64 {
        match &self.kind {
            NonlinKind::GradientWeighted { base, sigma } => {
                base.eval(t) * (1.0 + grad_norm2).powf(sigma / 2.0)
            }
            k => k.eval(t),
        }
    }

    /// Sampled Lipschitz bound of `f` on `[lo, hi]`.
    pub fn lipschitz_on(&self, lo: f64, hi: f64) -> f64 {
        let m = 512;
        let mut best: f64 = 0.0;
        let mut prev = self.eval(lo);
        for k in 1..=m {
            let t = lo + (hi - lo) * k as f64 / m as f64;
            let v = self.eval(t);
            let dt = (hi - lo) / m as f64;
            if dt > 0.0 {
                best = best.max(((v - prev) / dt).abs());
            }
            prev = v;
        }
        best.max(1e-12)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisVerdict {
    True,
    False,
    NotApplicable,
}

/// Outcome of the (H1)-(H3) checks with witnesses for failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub h1: HypothesisVerdict,
    pub h1_witness: Option<f64>,
    pub h2: HypothesisVerdict,
    pub h2_witness: Option<f64>,
    /// Largest prefix `[0, δ0']` on which `f(t) >= c0 t` holds; may shrink
    /// the declared `δ0`.
    pub h2_delta0: Option<f64>,
    pub h3: HypothesisVerdict,
    pub h3_witness: Option<f64>,
}

impl HypothesisReport {
    pub fn all_true(&self) -> bool {
        self.h1 == HypothesisVerdict::True
            && self.h2 == HypothesisVerdict::True
            && self.h3 == HypothesisVerdict::True
    }
}

/// Checks (H1) `f > 0` on `(0, μ)` with `f(μ) = 0`, `f <= 0` past `μ`;
/// (H2) `f(t) >= c0 t` on `[0, δ0]`; (H3) `f` nonincreasing on `(μ-δ1, μ)`
/// on a dense sample of the stated range.
pub fn hypothesis_report(f: &Nonlinearity, t_max: f64, samples: usize) -> HypothesisReport {
    let samples = samples.max(64);
    let mut rep = HypothesisReport {
        h1: HypothesisVerdict::NotApplicable,
        h1_witness: None,
        h2: HypothesisVerdict::False,
        h2_witness: None,
        h2_delta0: None,
        h3: HypothesisVerdict::NotApplicable,
        h3_witness: None,
    };

    // (H1)/(H3) need a positive zero μ.
    if let Some(mu) = f.mu {
        let mut ok = (f.eval(mu)).abs() <= 1e-9 * (1.0 + mu);
        let mut witness = if ok { None } else { Some(mu) };
        if ok {
            for k in 1..samples {
                let t = mu * k as f64 / samples as f64;
                if f.eval(t) <= 0.0 {
                    ok = false;
                    witness = Some(t);
                    break;
                }
            }
        }
        if ok {
            for k in 1..=samples {
                let t = mu + (t_max - mu).max(0.0) * k as f64 / samples as f64;
                if f.eval(t) > 1e-12 {
                    ok = false;
                    witness = Some(t);
                    break;
                }
            }
        }
        rep.h1 = if ok { HypothesisVerdict::True } else { HypothesisVerdict::False };
        rep.h1_witness = witness;

        let delta1 = f.delta1.unwrap_or(0.25 * mu).min(mu);
        let mut ok3 = true;
        let mut prev = f.eval(mu - delta1);
        for k in 1..=samples {
            let t = mu - delta1 + delta1 * k as f64 / samples as f64;
            let v = f.eval(t);
            if v > prev + 1e-12 {
                ok3 = false;
                rep.h3_witness = Some(t);
                break;
            }
            prev = v;
        }
        rep.h3 = if ok3 { HypothesisVerdict::True } else { HypothesisVerdict::False };
    }

    // (H2): largest prefix of [0, δ0] on which f(t) >= c0 t.
    let c0 = f.c0.unwrap_or(0.5);
    let delta0 = f.delta0.unwrap_or_else(|| f.mu.map_or(t_max, |m| 0.5 * m)).min(t_max);
    let mut largest = 0.0f64;
    let mut witness = None;
    for k in 1..=samples {
        let t = delta0 * k as f64 / samples as f64;
        if f.eval(t) + 1e-14 >= c0 * t {
            largest = t;
        } else {
            witness = Some(t);
            break;
        }
    }
    if witness.is_none() {
        rep.h2 = HypothesisVerdict::True;
        rep.h2_delta0 = Some(delta0);
    } else if largest > 0.0 {
        // Holds on a shorter interval; report true with the shrunken δ0.
        rep.h2 = HypothesisVerdict::True;
        rep.h2_delta0 = Some(largest);
        rep.h2_witness = witness;
    } else {
        rep.h2 = HypothesisVerdict::False;
        rep.h2_witness = witness;
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn de_giorgi_satisfies_all() {
        let f = Nonlinearity::de_giorgi();
        let rep = hypothesis_report(&f, 2.0, 512);
        assert!(rep.all_true(), "{rep:?}");
        assert!((rep.h2_delta0.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quadratic_fails_h2() {
        let mut f = Nonlinearity::new(NonlinKind::Power { p: 2.0 });
        f.c0 = Some(0.5);
        f.delta0 = Some(0.5);
        let rep = hypothesis_report(&f, 1.0, 512);
        assert_eq!(rep.h1, HypothesisVerdict::NotApplicable);
        assert_eq!(rep.h2, HypothesisVerdict::False);
        assert!(rep.h2_witness.is_some());
    }

    #[test]
    fn constant_one_gets_shrunk_delta0() {
        // f ≡ 1 >= c0 t holds exactly on [0, 1/c0].
        let mut f = Nonlinearity::new(NonlinKind::Exponential { kappa: 0.0 });
        f.c0 = Some(2.0);
        f.delta0 = Some(1.0);
        let rep = hypothesis_report(&f, 1.0, 1000);
        assert_eq!(rep.h2, HypothesisVerdict::True);
        let d = rep.h2_delta0.unwrap();
        assert!((d - 0.5).abs() < 5e-3, "δ0' = {d}");
    }

    #[test]
    fn schrodinger_h1_fails_below_mu() {
        // t^p - t < 0 on (0,1).
        let f = Nonlinearity::new(NonlinKind::SchrodingerPower { p: 2.0 });
        let rep = hypothesis_report(&f, 1.5, 512);
        assert_eq!(rep.h1, HypothesisVerdict::False);
    }

    #[test]
    fn lipschitz_estimate() {
        let f = Nonlinearity::de_giorgi();
        // f'(t) = 1 - 3 t^2, max |f'| on [0,1] is 2.
        let l = f.lipschitz_on(0.0, 1.0);
        assert!(l > 1.9 && l < 2.1, "L = {l}");
    }
}
