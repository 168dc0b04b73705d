use crate::denoiser::{Denoiser, LatentVideo};
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::schedule::ve_step;

/// Euler step driven by the modulated mean.
pub fn dgs_step(x: &ImageGrid, mu_tilde: &ImageGrid, sigma_from: f64, sigma_to: f64) -> Result<ImageGrid> {
    ve_step(x, mu_tilde, sigma_from, sigma_to)
}

#[derive(Clone, Debug)]
pub struct PosteriorOutcome {
    pub latent: LatentVideo,
    /// `kappa_scale * sqrt(sigma)`; zero-length moves still report it.
    pub kappa: f64,
    pub residual_norm: f64,
    pub gradient_norm: f64,
    pub moved: bool,
}

const RESIDUAL_FLOOR: f64 = 1e-12;

/// Moves `x` by `kappa` against the normalised gradient of `|mu(x) - mu_tilde|`.
/// `mu` must be the denoiser output at `x`. The norm runs over the whole video.
pub fn posterior_update(
    x: &LatentVideo,
    denoiser: &dyn Denoiser,
    mu: &LatentVideo,
    mu_tilde: &LatentVideo,
    sigma: f64,
    kappa_scale: f64,
) -> Result<PosteriorOutcome> {
    if !denoiser.capabilities().supports_vjp {
        return Err(Error::Capability(
            "posterior sampling needs a denoiser with vector-Jacobian products".into(),
        ));
    }
    x.ensure_same_shape(mu)?;
    x.ensure_same_shape(mu_tilde)?;
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid("sigma must be finite and non-negative"));
    }
    let kappa = kappa_scale * sigma.sqrt();
    let residual = mu.zip_map(mu_tilde, |a, b| a - b)?;
    let residual_norm = residual.norm();
    let unchanged = |gradient_norm| PosteriorOutcome {
        latent: x.clone(),
        kappa,
        residual_norm,
        gradient_norm,
        moved: false,
    };
    if residual_norm < RESIDUAL_FLOOR {
        return Ok(unchanged(0.0));
    }
    let cotangent = residual.map(|v| v / residual_norm);
    let g = denoiser.vjp(x, sigma, &cotangent)?;
    x.ensure_same_shape(&g)?;
    let gradient_norm = g.norm();
    if !gradient_norm.is_finite() {
        return Err(Error::invalid("non-finite gradient from denoiser"));
    }
    if gradient_norm == 0.0 {
        return Ok(unchanged(0.0));
    }
    let scale = kappa / gradient_norm;
    Ok(PosteriorOutcome {
        latent: x.zip_map(&g, |xv, gv| xv - scale * gv)?,
        kappa,
        residual_norm,
        gradient_norm,
        moved: true,
    })
}

/// Update length relative to the noisy latent scale:
/// `kappa_scale sqrt(s) / sqrt(s^2 + 1)`, written as `kappa_scale / sqrt(s + 1/s)`.
pub fn step_ratio(kappa_scale: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    kappa_scale / (sigma + 1.0 / sigma).sqrt()
}

/// Supremum of [`step_ratio`] over `sigma`, reached at `sigma = 1`.
pub fn step_ratio_bound(kappa_scale: f64) -> f64 {
    kappa_scale / std::f64::consts::SQRT_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{EchoDenoiser, GmmFrameDenoiser, GmmPrior};
    use crate::image::Shape;
    use crate::schedule::NoiseSchedule;

    fn video(shape: Shape, n: usize, offset: f64) -> LatentVideo {
        LatentVideo::new(
            (0..n)
                .map(|i| ImageGrid::from_fn(shape, |y, x, c| offset + (i + 2 * y + 3 * x + c) as f64 * 0.1))
                .collect(),
        )
        .unwrap()
    }

    fn gaussian_denoiser(shape: Shape, n: usize) -> GmmFrameDenoiser {
        let prior = GmmPrior::new(vec![1.0], vec![vec![0.25; shape.len()]], vec![0.3]).unwrap();
        GmmFrameDenoiser::new(prior, shape, n).unwrap()
    }

    #[test]
    fn dgs_is_euler_step() {
        let s = Shape::new(2, 2, 1);
        let x = video(s, 1, 0.0).frames()[0].clone();
        let m = video(s, 1, 1.0).frames()[0].clone();
        assert_eq!(dgs_step(&x, &x, 2.0, 1.0).unwrap(), x);
        assert_eq!(dgs_step(&x, &m, 2.0, 0.0).unwrap(), m);
        assert_eq!(dgs_step(&x, &m, 2.0, 1.5).unwrap(), ve_step(&x, &m, 2.0, 1.5).unwrap());
    }

    #[test]
    fn no_residual_no_move() {
        let s = Shape::new(2, 3, 2);
        let den = gaussian_denoiser(s, 2);
        let x = video(s, 2, 0.0);
        let mu = den.denoise(&x, 0.7).unwrap();
        let out = posterior_update(&x, &den, &mu, &mu, 0.7, 0.02).unwrap();
        assert!(!out.moved);
        assert_eq!(out.latent, x);
    }

    #[test]
    fn move_length_is_kappa() {
        let s = Shape::new(2, 3, 2);
        let den = gaussian_denoiser(s, 2);
        let x = video(s, 2, 0.0);
        let mu = den.denoise(&x, 4.0).unwrap();
        let target = video(s, 2, 0.5);
        let out = posterior_update(&x, &den, &mu, &target, 4.0, 0.02).unwrap();
        let moved = out.latent.zip_map(&x, |a, b| a - b).unwrap().norm();
        assert!((moved - 0.04).abs() < 1e-15, "{moved}");
        assert_eq!(out.kappa, 0.04);
    }

    #[test]
    fn linear_denoiser_moves_against_residual() {
        let s = Shape::new(2, 2, 1);
        let den = gaussian_denoiser(s, 1);
        let x = video(s, 1, 0.0);
        let mu = den.denoise(&x, 1.0).unwrap();
        let target = video(s, 1, -0.3);
        let out = posterior_update(&x, &den, &mu, &target, 1.0, 0.5).unwrap();
        let residual = mu.zip_map(&target, |a, b| a - b).unwrap();
        let rn = residual.norm();
        for ((new, old), r) in out.latent.values().zip(x.values()).zip(residual.values()) {
            assert!((new - (old - 0.5 * r / rn)).abs() < 1e-15);
        }
    }

    #[test]
    fn needs_vjp() {
        let s = Shape::new(1, 1, 1);
        let echo = EchoDenoiser {
            frame_count: 1,
            channels: 1,
            supports_vjp: false,
        };
        let x = video(s, 1, 0.0);
        let err = posterior_update(&x, &echo, &x, &video(s, 1, 1.0), 1.0, 0.02).unwrap_err();
        assert!(matches!(err, Error::Capability(_)));
    }

    #[test]
    fn step_ratio_bounded_over_schedules() {
        for kappa_scale in [0.02, 2.0 * (-2f64).exp()] {
            let bound = step_ratio_bound(kappa_scale);
            assert_eq!(step_ratio(kappa_scale, 1.0), bound);
            for steps in [1, 25, 100, 1000] {
                let s = NoiseSchedule::build(700.0, 0.002, 7.0, steps).unwrap();
                for &sigma in s.sigmas() {
                    assert!(step_ratio(kappa_scale, sigma) <= bound);
                    let direct = kappa_scale * sigma.sqrt() / (sigma * sigma + 1.0).sqrt();
                    assert!((direct - step_ratio(kappa_scale, sigma)).abs() <= 1e-15);
                }
            }
            let mut sigma = 1e-3;
            while sigma < 1e3 {
                let r = step_ratio(kappa_scale, sigma);
                assert!(r <= bound);
                if (sigma - 1.0).abs() > 1e-3 {
                    assert!(r < bound);
                }
                sigma *= 1.0007;
            }
        }
    }
}
