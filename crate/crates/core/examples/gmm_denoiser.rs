//! Closed-form mixture denoiser and its VJP checked by finite differences.

use nvs_core::denoiser::{gmm_denoise, gmm_vjp, tweedie_score, GmmPrior};

fn main() -> nvs_core::Result<()> {
    let prior = GmmPrior::new(
        vec![0.2, 0.5, 0.3],
        vec![vec![-2.0, 0.0], vec![2.0, 1.0], vec![0.0, -2.5]],
        vec![0.1, 0.2, 0.15],
    )?;
    let x = [0.7, -0.4];
    for sigma in [5.0, 1.0, 0.2] {
        let mu = gmm_denoise(&prior, &x, sigma)?;
        let score = tweedie_score(&mu, &x, sigma)?;
        let c = [0.3, -1.1];
        let vjp = gmm_vjp(&prior, &x, sigma, &c)?;
        let h = 1e-6;
        let fd: Vec<f64> = (0..2)
            .map(|i| {
                let (mut a, mut b) = (x, x);
                a[i] += h;
                b[i] -= h;
                let (fa, fb) = (gmm_denoise(&prior, &a, sigma).unwrap(), gmm_denoise(&prior, &b, sigma).unwrap());
                (0..2).map(|j| c[j] * (fa[j] - fb[j]) / (2.0 * h)).sum()
            })
            .collect();
        println!("sigma {sigma}: mu {mu:.4?} score {score:.4?} vjp {vjp:.6?} fd {fd:.6?}");
    }
    Ok(())
}
