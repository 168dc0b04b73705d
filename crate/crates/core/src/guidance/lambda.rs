use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The error-model coefficients `(v1, v2, v3)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
}

impl Weights {
    pub const fn new(v1: f64, v2: f64, v3: f64) -> Self {
        Self { v1, v2, v3 }
    }
}

/// One weight evaluation: `q = v3 |dp| - v2 sigma`, the unclamped value
/// (`None` when the closed form has no real value) and the clamped one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaEval {
    pub q: f64,
    pub raw: Option<f64>,
    pub clamped: f64,
}

/// Diffusion estimation error model `v2 * sigma`.
pub fn error_model_d(v2: f64, sigma: f64) -> f64 {
    v2 * sigma
}

/// Warp error model `v3 * |dp|`.
pub fn error_model_p(v3: f64, pose_dist: f64) -> f64 {
    v3 * pose_dist
}

/// `v2 s / (1 + l) + l v3 d / (1 + l) + v1 |ln l|`.
pub fn lambda_objective(lambda: f64, w: Weights, sigma: f64, pose_dist: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let ed = error_model_d(w.v2, sigma);
    let ep = error_model_p(w.v3, pose_dist);
    Ok(ed / (1.0 + lambda) + lambda * ep / (1.0 + lambda) + w.v1 * lambda.ln().abs())
}

// Double-double helpers. `q` sits next to a catastrophic cancellation
// (v3 d ~ v2 s) and everything downstream is sensitive to it.

#[derive(Clone, Copy, Debug)]
struct Dd(f64, f64);

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd(s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd(s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd(p, a.mul_add(b, -p))
}

impl Dd {
    fn from(x: f64) -> Self {
        Dd(x, 0.0)
    }

    fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.0, o.0);
        let t = two_sum(self.1, o.1);
        let s = quick_two_sum(s.0, s.1 + t.0);
        quick_two_sum(s.0, s.1 + t.1)
    }

    fn neg(self) -> Dd {
        Dd(-self.0, -self.1)
    }

    fn mul(self, o: Dd) -> Dd {
        let p = two_prod(self.0, o.0);
        quick_two_sum(p.0, p.1 + (self.0 * o.1 + self.1 * o.0))
    }

    fn div(self, o: Dd) -> Dd {
        let q1 = self.0 / o.0;
        let r = self.add(o.mul(Dd::from(q1)).neg());
        let q2 = r.0 / o.0;
        let r = r.add(o.mul(Dd::from(q2)).neg());
        let q3 = r.0 / o.0;
        let q = quick_two_sum(q1, q2);
        q.add(Dd::from(q3))
    }

    fn sqrt(self) -> Dd {
        if self.0 <= 0.0 {
            return Dd::from(0.0);
        }
        let s = self.0.sqrt();
        let r = self.add(two_prod(s, s).neg());
        quick_two_sum(s, r.0 / (2.0 * s))
    }

    fn value(self) -> f64 {
        self.0 + self.1
    }
}

fn q_dd(w: Weights, sigma: f64, pose_dist: f64) -> Dd {
    two_prod(w.v3, pose_dist).add(two_prod(w.v2, sigma).neg())
}

pub fn lambda_q(w: Weights, sigma: f64, pose_dist: f64) -> f64 {
    q_dd(w, sigma, pose_dist).value()
}

/// The closed form `(-(2 v1 + Q) + sqrt(Q^2 + 4 v1 Q)) / (2 v1)` before
/// clamping. `None` when the radicand is negative.
pub fn lambda_raw(w: Weights, sigma: f64, pose_dist: f64) -> Option<f64> {
    let q = q_dd(w, sigma, pose_dist);
    let two_v1 = Dd::from(2.0 * w.v1);
    let four_v1 = Dd::from(4.0 * w.v1);
    let rad = q.mul(q.add(four_v1));
    if rad.0 < 0.0 {
        return None;
    }
    let root = rad.sqrt();
    let b = q.add(two_v1).neg(); // -(2 v1 + Q)
    let lambda = if b.0 >= 0.0 {
        // both terms non-negative
        b.add(root).div(two_v1)
    } else {
        // b < 0: rationalise, b^2 - rad = 4 v1^2
        two_v1.div(b.add(root.neg()))
    };
    Some(lambda.value())
}

/// Closed-form weight clamped to `[lambda_min, lambda_max]`; non-real or
/// non-positive values map to `lambda_min`.
pub fn lambda_closed_form(w: Weights, sigma: f64, pose_dist: f64, lambda_min: f64, lambda_max: f64) -> f64 {
    match lambda_raw(w, sigma, pose_dist) {
        Some(l) if l > 0.0 => l.clamp(lambda_min, lambda_max),
        _ => lambda_min,
    }
}

const GRID_POINTS: usize = 2000;
const LOG_LO: f64 = -8.0 * std::f64::consts::LN_10;
const LOG_HI: f64 = 12.0 * std::f64::consts::LN_10;

/// Reference minimiser of [`lambda_objective`]: a 2000-point log grid on
/// `[1e-8, 1e12]` refined by golden-section search around the best cell.
pub fn lambda_numeric_oracle(w: Weights, sigma: f64, pose_dist: f64) -> f64 {
    // v2 s is a constant offset of the objective; dropping it keeps the
    // comparisons free of its rounding.
    let q = lambda_q(w, sigma, pose_dist);
    let f = |s: f64| {
        let l = s.exp();
        q * (l / (1.0 + l)) + w.v1 * s.abs()
    };
    let step = (LOG_HI - LOG_LO) / (GRID_POINTS - 1) as f64;
    let at = |i: usize| LOG_LO + step * i as f64;
    let mut best = (0, f(at(0)));
    for i in 1..GRID_POINTS {
        let v = f(at(i));
        if v < best.1 {
            best = (i, v);
        }
    }
    let mut lo = at(best.0.saturating_sub(1));
    let mut hi = at((best.0 + 1).min(GRID_POINTS - 1));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if hi - lo < 1e-13 {
            break;
        }
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        }
    }
    // the kink of |ln l| sits at l = 1 exactly; golden section can only get near it
    let mut candidates = vec![(a, fa), (b, fb), (at(best.0), best.1)];
    if (LOG_LO..=LOG_HI).contains(&0.0) {
        candidates.push((0.0, f(0.0)));
    }
    let (s, _) = candidates
        .into_iter()
        .fold((0.0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
    s.exp()
}

/// Upper bound on the modulated-mean error versus the warp error alone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErrorBoundGap {
    pub lambda: f64,
    pub e_m_bound: f64,
    pub e_p: f64,
}

/// `(v2 s + l v3 d) / (1 + l)` against `v3 d` at a given `l >= 0`.
/// `l = inf` gives the warp error exactly.
pub fn error_bound_at(w: Weights, sigma: f64, pose_dist: f64, lambda: f64) -> ErrorBoundGap {
    let ed = error_model_d(w.v2, sigma);
    let ep = error_model_p(w.v3, pose_dist);
    let e_m_bound = if lambda.is_infinite() {
        ep
    } else {
        ed / (1.0 + lambda) + lambda / (1.0 + lambda) * ep
    };
    ErrorBoundGap {
        lambda,
        e_m_bound,
        e_p: ep,
    }
}

/// [`error_bound_at`] with the numerically optimal weight.
pub fn error_bound_gap(w: Weights, sigma: f64, pose_dist: f64) -> ErrorBoundGap {
    error_bound_at(w, sigma, pose_dist, lambda_numeric_oracle(w, sigma, pose_dist))
}
