//! Reference evaluations that share no code with `nvs-core`.
//!
//! Everything here is written the slow, obvious way: exact rational
//! arithmetic on the binary values of the `f64` inputs, brute-force loops,
//! central differences. The solver crate is checked against these.

use num_bigint::{BigInt, BigUint, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Extra binary digits carried through irrational steps (square / n-th roots).
const GUARD_BITS: u32 = 256;

pub fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite input")
}

pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("representable")
}

fn pow2(bits: u32) -> BigInt {
    BigInt::one() << bits
}

/// `sqrt(r)` to roughly `GUARD_BITS` fractional bits. `r` must be non-negative.
pub fn sqrt(r: &BigRational) -> BigRational {
    assert!(!r.is_negative(), "sqrt of negative rational");
    // sqrt(n/d) = sqrt(n*d) / d, scaled by 2^GUARD_BITS before truncating.
    let n = r.numer() * r.denom() * pow2(2 * GUARD_BITS);
    let root = n.magnitude().sqrt();
    BigRational::new(
        BigInt::from_biguint(Sign::Plus, root),
        r.denom() * pow2(GUARD_BITS),
    )
}

/// `r^(1/k)` for non-negative `r`.
pub fn nth_root(r: &BigRational, k: u32) -> BigRational {
    assert!(!r.is_negative());
    // (n/d)^(1/k) = (n * d^(k-1))^(1/k) / d
    let scale = pow2(k * GUARD_BITS);
    let n = r.numer() * num_traits::pow(r.denom().clone(), (k - 1) as usize) * scale;
    let root: BigUint = n.magnitude().nth_root(k);
    BigRational::new(
        BigInt::from_biguint(Sign::Plus, root),
        r.denom() * pow2(GUARD_BITS),
    )
}

/// Adaptive-weight closed form `(-(2a+q) + sqrt(q^2 + 4aq)) / (2a)` with
/// `q = c*p - b*s`, evaluated exactly on the rational values of the inputs.
/// Returns `None` when the radicand is negative.
pub fn lambda_formula(v1: f64, v2: f64, v3: f64, sigma: f64, pose_dist: f64) -> Option<f64> {
    let a = exact(v1);
    let q = exact(v3) * exact(pose_dist) - exact(v2) * exact(sigma);
    let four = BigRational::from_integer(BigInt::from(4));
    let two = BigRational::from_integer(BigInt::from(2));
    let radicand = &q * &q + four * &a * &q;
    if radicand.is_negative() {
        return None;
    }
    let num = -(&two * &a + &q) + sqrt(&radicand);
    Some(to_f64(&(num / (two * a))))
}

/// Value of `q = v3 * pose_dist - v2 * sigma`, exactly rounded.
pub fn lambda_q(v2: f64, v3: f64, sigma: f64, pose_dist: f64) -> f64 {
    to_f64(&(exact(v3) * exact(pose_dist) - exact(v2) * exact(sigma)))
}

/// Entry `i` (i < steps) of a rho-spaced noise ladder, for integer rho.
pub fn rho_ladder_sigma(sigma_max: f64, sigma_min: f64, rho: u32, steps: usize, i: usize) -> f64 {
    let hi = nth_root(&exact(sigma_max), rho);
    let lo = nth_root(&exact(sigma_min), rho);
    let frac = if steps == 1 {
        BigRational::zero()
    } else {
        BigRational::new(BigInt::from(i), BigInt::from(steps - 1))
    };
    let base = &hi + frac * (lo - &hi);
    to_f64(&num_traits::pow(base, rho as usize))
}

/// Rotation angle from a 3x3 matrix (row-major) using both the trace and the
/// skew part, so it stays accurate near 0 and near pi.
pub fn rotation_angle(m: &[[f64; 3]; 3]) -> f64 {
    let tr = m[0][0] + m[1][1] + m[2][2];
    let sx = m[2][1] - m[1][2];
    let sy = m[0][2] - m[2][0];
    let sz = m[1][0] - m[0][1];
    let s = 0.5 * (sx * sx + sy * sy + sz * sz).sqrt();
    let c = 0.5 * (tr - 1.0);
    s.atan2(c)
}

/// Rotation matrix about a unit axis (Rodrigues), row-major.
pub fn axis_angle_matrix(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Pinhole camera parameters for the brute-force reprojection.
#[derive(Clone, Copy, Debug)]
pub struct Pinhole {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Back-project pixel `(u, v)` at `depth`, apply `x' = r x + t`, project.
/// `None` when the transformed point is not in front of the camera.
pub fn reproject_point(
    cam: Pinhole,
    u: f64,
    v: f64,
    depth: f64,
    r: &[[f64; 3]; 3],
    t: &[f64; 3],
) -> Option<(f64, f64)> {
    let p = [
        (u - cam.cx) / cam.fx * depth,
        (v - cam.cy) / cam.fy * depth,
        depth,
    ];
    let mut q = [0.0; 3];
    for row in 0..3 {
        q[row] = r[row][0] * p[0] + r[row][1] * p[1] + r[row][2] * p[2] + t[row];
    }
    if q[2] <= 0.0 {
        return None;
    }
    Some((cam.fx * q[0] / q[2] + cam.cx, cam.fy * q[1] / q[2] + cam.cy))
}

/// For each target cell, the value of the splat with the smallest depth.
/// `splats` holds `(target_index, depth, value)`.
pub fn nearest_depth_winner(
    n_targets: usize,
    splats: &[(usize, f64, Vec<f64>)],
) -> Vec<Option<Vec<f64>>> {
    let mut best: Vec<Option<(f64, Vec<f64>)>> = vec![None; n_targets];
    for (idx, depth, value) in splats {
        let replace = match &best[*idx] {
            None => true,
            Some((d, _)) => depth < d,
        };
        if replace {
            best[*idx] = Some((*depth, value.clone()));
        }
    }
    best.into_iter().map(|b| b.map(|(_, v)| v)).collect()
}

/// Central-difference gradient of a scalar function.
pub fn gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Jacobian; `jac[i][j] = d f_i / d x_j`.
pub fn jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut cols = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let up = f(&probe);
        probe[j] = x[j] - h;
        let down = f(&probe);
        probe[j] = x[j];
        cols.push(
            up.iter()
                .zip(&down)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect::<Vec<_>>(),
        );
    }
    let rows = cols.first().map_or(0, Vec::len);
    (0..rows)
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect()
}

/// `J^T c` from an explicit Jacobian.
pub fn transpose_apply(jac: &[Vec<f64>], c: &[f64]) -> Vec<f64> {
    let cols = jac.first().map_or(0, Vec::len);
    let mut out = vec![0.0; cols];
    for (row, ci) in jac.iter().zip(c) {
        for (o, j) in out.iter_mut().zip(row) {
            *o += j * ci;
        }
    }
    out
}

/// log of the noisy marginal `sum_k w_k N(x; m_k, (s_k^2 + sigma^2) I)`.
pub fn mixture_log_density(
    weights: &[f64],
    means: &[Vec<f64>],
    variances: &[f64],
    x: &[f64],
    sigma: f64,
) -> f64 {
    let d = x.len() as f64;
    let terms: Vec<f64> = weights
        .iter()
        .zip(means)
        .zip(variances)
        .map(|((w, m), s2)| {
            let v = s2 + sigma * sigma;
            let dist2: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
            w.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * dist2 / v
        })
        .collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn relative_error(actual: f64, expected: f64) -> f64 {
    if expected == 0.0 {
        actual.abs()
    } else {
        ((actual - expected) / expected).abs()
    }
}

/// Max-norm relative error between two vectors, normalised by the larger of
/// `max|expected|` and `floor`.
pub fn vector_relative_error(actual: &[f64], expected: &[f64], floor: f64) -> f64 {
    let scale = expected.iter().fold(floor, |m, v| m.max(v.abs()));
    actual
        .iter()
        .zip(expected)
        .map(|(a, e)| (a - e).abs())
        .fold(0.0, f64::max)
        / scale
}
