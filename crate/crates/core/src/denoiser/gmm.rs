use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Capabilities, Denoiser, LatentVideo};
use crate::error::{Error, Result};
use crate::image::{ImageGrid, Shape};

/// Isotropic Gaussian mixture `sum_k w_k N(m_k, s_k^2 I)` over flattened frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmRepr")]
pub struct GmmPrior {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

#[derive(Deserialize)]
struct GmmRepr {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl TryFrom<GmmRepr> for GmmPrior {
    type Error = Error;

    fn try_from(r: GmmRepr) -> Result<Self> {
        GmmPrior::new(r.weights, r.means, r.variances)
    }
}

impl GmmPrior {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::invalid(format!(
                "mixture needs matching non-empty weights/means/variances ({k}/{}/{})",
                means.len(),
                variances.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid("component means must share a positive dimension"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("weights must sum to 1 (within 1e-12)"));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("variances must be finite and positive"));
        }
        if means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("means must be finite"));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    /// Equal-weight mixture with a shared variance.
    pub fn uniform(means: Vec<Vec<f64>>, variance: f64) -> Result<Self> {
        let k = means.len().max(1);
        let weights = vec![1.0 / k as f64; means.len()];
        let weights = renormalise(weights);
        Self::new(weights, means, vec![variance; k])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Posterior responsibilities `p(k | x)` under the noise level `sigma`.
    pub fn responsibilities(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let d = x.len() as f64;
        let logs: Vec<f64> = (0..self.components())
            .map(|k| {
                let v = self.variances[k] + sigma * sigma;
                let dist2 = squared_distance(x, &self.means[k]);
                self.weights[k].ln() - 0.5 * d * v.ln() - 0.5 * dist2 / v
            })
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut r: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= total);
        r
    }
}

/// Nudges float weights so they sum to 1 within rounding.
fn renormalise(mut w: Vec<f64>) -> Vec<f64> {
    if let Some(last) = w.len().checked_sub(1) {
        let head: f64 = w[..last].iter().sum();
        w[last] = 1.0 - head;
    }
    w
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dim(prior: &GmmPrior, x: &[f64]) -> Result<()> {
    if x.len() != prior.dim() {
        return Err(Error::shape(prior.dim(), x.len()));
    }
    Ok(())
}

/// Exact posterior mean `E[x0 | x0 + sigma * eps = x]`:
/// responsibility-weighted per-component means `m_k + s_k^2/(s_k^2+sigma^2) (x - m_k)`.
pub fn gmm_denoise(prior: &GmmPrior, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
    check_dim(prior, x)?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be finite and non-negative"));
    }
    if sigma == 0.0 {
        return Ok(x.to_vec());
    }
    let r = prior.responsibilities(x, sigma);
    let mut out = vec![0.0; x.len()];
    for (k, rk) in r.iter().enumerate() {
        if *rk == 0.0 {
            continue;
        }
        let s2 = prior.variances[k];
        let a = s2 / (s2 + sigma * sigma);
        for ((o, xi), mi) in out.iter_mut().zip(x).zip(&prior.means[k]) {
            *o += rk * (mi + a * (xi - mi));
        }
    }
    Ok(out)
}

/// `J^T c` for `J = d gmm_denoise / dx`.
///
/// With `a_k = s_k^2 / v_k`, `v_k = s_k^2 + sigma^2`, `g_k = -(x - m_k) / v_k`
/// and `p_k` the per-component posterior mean,
/// `J = sum_k r_k a_k I + sum_k r_k p_k (g_k - g_bar)^T`, hence
/// `J^T c = a_bar c + sum_k r_k (p_k . c - beta_bar) g_k`.
pub fn gmm_vjp(prior: &GmmPrior, x: &[f64], sigma: f64, cotangent: &[f64]) -> Result<Vec<f64>> {
    check_dim(prior, x)?;
    check_dim(prior, cotangent)?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be finite and non-negative"));
    }
    if sigma == 0.0 {
        return Ok(cotangent.to_vec());
    }
    let r = prior.responsibilities(x, sigma);
    let comps: Vec<usize> = (0..prior.components()).filter(|&k| r[k] > 0.0).collect();
    let mut a_bar = 0.0;
    let mut beta = vec![0.0; prior.components()];
    for &k in &comps {
        let s2 = prior.variances[k];
        let a = s2 / (s2 + sigma * sigma);
        a_bar += r[k] * a;
        // p_k . c
        beta[k] = x
            .iter()
            .zip(&prior.means[k])
            .zip(cotangent)
            .map(|((xi, mi), ci)| (mi + a * (xi - mi)) * ci)
            .sum();
    }
    let beta_bar: f64 = comps.iter().map(|&k| r[k] * beta[k]).sum();
    let mut out: Vec<f64> = cotangent.iter().map(|c| a_bar * c).collect();
    for &k in &comps {
        let v = prior.variances[k] + sigma * sigma;
        let coef = r[k] * (beta[k] - beta_bar) / v;
        if coef == 0.0 {
            continue;
        }
        for ((o, xi), mi) in out.iter_mut().zip(x).zip(&prior.means[k]) {
            *o -= coef * (xi - mi);
        }
    }
    Ok(out)
}

/// Score of the noisy marginal from a denoiser output: `(mu - x) / sigma^2`.
pub fn tweedie_score(mu: &[f64], x: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if mu.len() != x.len() {
        return Err(Error::shape(x.len(), mu.len()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("score needs sigma > 0"));
    }
    let s2 = sigma * sigma;
    Ok(mu.iter().zip(x).map(|(m, v)| (m - v) / s2).collect())
}

/// Applies one [`GmmPrior`] to every frame independently (frames flattened
/// row-major, channels interleaved).
#[derive(Clone, Debug)]
pub struct GmmFrameDenoiser {
    prior: GmmPrior,
    frame_shape: Shape,
    frame_count: usize,
}

impl GmmFrameDenoiser {
    pub fn new(prior: GmmPrior, frame_shape: Shape, frame_count: usize) -> Result<Self> {
        if frame_shape.len() != prior.dim() {
            return Err(Error::shape(prior.dim(), frame_shape));
        }
        if frame_count == 0 {
            return Err(Error::invalid("frame count must be positive"));
        }
        Ok(Self {
            prior,
            frame_shape,
            frame_count,
        })
    }

    pub fn prior(&self) -> &GmmPrior {
        &self.prior
    }

    fn check(&self, x: &LatentVideo) -> Result<()> {
        if x.frame_shape() != self.frame_shape || x.len() != self.frame_count {
            return Err(Error::shape(
                (self.frame_count, self.frame_shape),
                (x.len(), x.frame_shape()),
            ));
        }
        Ok(())
    }
}

impl Denoiser for GmmFrameDenoiser {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_vjp: true,
            frame_count: self.frame_count,
            channels: self.frame_shape.channels,
            latent_space_id: "pixel".into(),
            single_flight: false,
        }
    }

    fn denoise(&self, x: &LatentVideo, sigma: f64) -> Result<LatentVideo> {
        self.check(x)?;
        let frames = x
            .frames()
            .par_iter()
            .map(|f| {
                let out = gmm_denoise(&self.prior, f.as_slice(), sigma)?;
                ImageGrid::from_vec(self.frame_shape, out)
            })
            .collect::<Result<Vec<_>>>()?;
        LatentVideo::new(frames)
    }

    fn vjp(&self, x: &LatentVideo, sigma: f64, cotangent: &LatentVideo) -> Result<LatentVideo> {
        self.check(x)?;
        x.ensure_same_shape(cotangent)?;
        let frames = x
            .frames()
            .par_iter()
            .zip(cotangent.frames())
            .map(|(f, c)| {
                let out = gmm_vjp(&self.prior, f.as_slice(), sigma, c.as_slice())?;
                ImageGrid::from_vec(self.frame_shape, out)
            })
            .collect::<Result<Vec<_>>>()?;
        LatentVideo::new(frames)
    }
}
