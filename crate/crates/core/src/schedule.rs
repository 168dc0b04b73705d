//! Variance-exploding noise ladder and the first-order reverse step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleParams {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub rho: f64,
    pub steps: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            sigma_max: 700.0,
            sigma_min: 0.002,
            rho: 7.0,
            steps: 100,
        }
    }
}

/// `steps + 1` noise levels, strictly decreasing from `sigma_max` to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    #[serde(flatten)]
    params: ScheduleParams,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Rho-spaced ladder: the `1/rho` powers of the first `steps` levels are
    /// evenly spaced between `sigma_max` and `sigma_min`; a final 0 is appended.
    pub fn build(sigma_max: f64, sigma_min: f64, rho: f64, steps: usize) -> Result<Self> {
        Self::from_params(ScheduleParams {
            sigma_max,
            sigma_min,
            rho,
            steps,
        })
    }

    pub fn from_params(params: ScheduleParams) -> Result<Self> {
        let ScheduleParams {
            sigma_max,
            sigma_min,
            rho,
            steps,
        } = params;
        if !(sigma_max.is_finite() && sigma_min.is_finite() && rho.is_finite()) {
            return Err(Error::invalid("schedule parameters must be finite"));
        }
        if !(sigma_min > 0.0 && sigma_max > sigma_min) {
            return Err(Error::invalid("need sigma_max > sigma_min > 0"));
        }
        if rho < 1.0 {
            return Err(Error::invalid("rho must be >= 1"));
        }
        if steps == 0 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        let hi = sigma_max.powf(1.0 / rho);
        let lo = sigma_min.powf(1.0 / rho);
        let mut sigmas = Vec::with_capacity(steps + 1);
        sigmas.push(sigma_max);
        for i in 1..steps {
            let frac = i as f64 / (steps - 1) as f64;
            sigmas.push((hi + frac * (lo - hi)).powf(rho));
        }
        sigmas.push(0.0);
        if sigmas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("schedule is not strictly decreasing"));
        }
        Ok(Self { params, sigmas })
    }

    /// Explicit ladder (for tests and external schedules). Must end in 0 and
    /// decrease strictly.
    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() < 2 || *sigmas.last().unwrap() != 0.0 {
            return Err(Error::invalid("explicit schedule must end in 0"));
        }
        if sigmas.iter().any(|s| !s.is_finite()) || sigmas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("explicit schedule must be finite and strictly decreasing"));
        }
        let steps = sigmas.len() - 1;
        Ok(Self {
            params: ScheduleParams {
                sigma_max: sigmas[0],
                sigma_min: sigmas[steps - 1],
                rho: 1.0,
                steps,
            },
            sigmas,
        })
    }

    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[0]
    }

    /// `(sigma_from, sigma_to)` for each reverse step.
    pub fn step_pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.sigmas.windows(2).map(|w| (w[0], w[1]))
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::from_params(ScheduleParams::default()).expect("default schedule is valid")
    }
}

/// One Euler step of `dx = (x - mu) / sigma dsigma` from `sigma_from` to
/// `sigma_to`. Returns `mu` exactly when `sigma_to == 0`.
pub fn ve_step(x: &ImageGrid, mu: &ImageGrid, sigma_from: f64, sigma_to: f64) -> Result<ImageGrid> {
    x.ensure_same_shape(mu)?;
    if !(sigma_from.is_finite() && sigma_to.is_finite()) || sigma_to < 0.0 {
        return Err(Error::invalid("noise levels must be finite and non-negative"));
    }
    if sigma_from <= sigma_to {
        return Err(Error::invalid(format!(
            "reverse step must decrease sigma ({sigma_from} -> {sigma_to})"
        )));
    }
    if !x.is_finite() || !mu.is_finite() {
        return Err(Error::invalid("non-finite latent or denoiser output"));
    }
    if sigma_to == 0.0 {
        return Ok(mu.clone());
    }
    let ds = sigma_to - sigma_from;
    x.zip_map(mu, |xv, mv| xv + (xv - mv) / sigma_from * ds)
}

/// Deterministic stream of standard normal draws.
pub struct NoiseSource {
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.sample();
        }
    }
}

/// `x0 + sigma * eps` with `eps` i.i.d. standard normal from `seed`.
pub fn add_noise(x0: &ImageGrid, sigma: f64, seed: u64) -> Result<ImageGrid> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be finite and non-negative"));
    }
    if sigma == 0.0 {
        return Ok(x0.clone());
    }
    let mut noise = NoiseSource::new(seed);
    let mut out = x0.clone();
    for v in out.as_mut_slice() {
        *v += sigma * noise.sample();
    }
    Ok(out)
}
