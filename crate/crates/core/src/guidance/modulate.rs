use super::Modulation;
use crate::error::{Error, Result};
use crate::geometry::WarpResult;
use crate::image::ImageGrid;

/// `lambda / (1 + lambda)`.
pub fn blend_ratio(lambda: f64) -> f64 {
    lambda / (1.0 + lambda)
}

/// Number of valid pixels pixel selection takes from the warp.
pub fn selection_count(lambda: f64, valid: usize) -> usize {
    (blend_ratio(lambda) * valid as f64).floor() as usize
}

/// Blends the denoiser mean with the warped prior. Invalid warp pixels
/// always keep `mu`.
pub fn modulate_mean(mu: &ImageGrid, warped: &WarpResult, lambda: f64, mode: Modulation) -> Result<ImageGrid> {
    mu.ensure_same_shape(&warped.image)?;
    if warped.validity.len() != mu.shape().pixels() {
        return Err(Error::shape(mu.shape().pixels(), warped.validity.len()));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    let mut out = mu.clone();
    match mode {
        Modulation::WeightedAverage => {
            let inv = 1.0 + lambda;
            for p in (0..warped.validity.len()).filter(|&p| warped.validity[p]) {
                for (o, w) in out.pixel_mut(p).iter_mut().zip(warped.image.pixel(p)) {
                    *o = (*o + lambda * w) / inv;
                }
            }
        }
        Modulation::PixelSelection => {
            let mut ranked: Vec<(f64, usize)> = (0..warped.validity.len())
                .filter(|&p| warped.validity[p])
                .map(|p| {
                    let r: f64 = mu
                        .pixel(p)
                        .iter()
                        .zip(warped.image.pixel(p))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (r.sqrt(), p)
                })
                .collect();
            let take = selection_count(lambda, ranked.len());
            // (residual, index) order makes ties fall to the lower row-major index
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(_, p) in &ranked[..take] {
                out.pixel_mut(p).copy_from_slice(warped.image.pixel(p));
            }
        }
    }
    Ok(out)
}
