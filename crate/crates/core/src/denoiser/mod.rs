//! The denoiser contract `x_t -> E[x_0 | x_t]` and an analytic Gaussian-mixture
//! implementation with exact vector-Jacobian products.

mod gmm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageGrid, Shape};

pub use gmm::{gmm_denoise, gmm_vjp, tweedie_score, GmmFrameDenoiser, GmmPrior};

/// One latent frame per target pose, all of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVideo {
    frames: Vec<ImageGrid>,
}

impl LatentVideo {
    pub fn new(frames: Vec<ImageGrid>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("latent video needs at least one frame"))?
            .shape();
        if let Some(bad) = frames.iter().find(|f| f.shape() != first) {
            return Err(Error::shape(first, bad.shape()));
        }
        Ok(Self { frames })
    }

    pub fn zeros(frame_shape: Shape, count: usize) -> Result<Self> {
        Self::new(vec![ImageGrid::zeros(frame_shape); count])
    }

    pub fn frames(&self) -> &[ImageGrid] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [ImageGrid] {
        &mut self.frames
    }

    pub fn into_frames(self) -> Vec<ImageGrid> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_shape(&self) -> Shape {
        self.frames[0].shape()
    }

    pub fn ensure_same_shape(&self, other: &LatentVideo) -> Result<()> {
        if self.len() != other.len() || self.frame_shape() != other.frame_shape() {
            return Err(Error::shape(
                (self.len(), self.frame_shape()),
                (other.len(), other.frame_shape()),
            ));
        }
        Ok(())
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().flat_map(|f| f.as_slice().iter().copied())
    }

    pub fn norm(&self) -> f64 {
        self.frames.iter().map(ImageGrid::squared_norm).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().all(ImageGrid::is_finite)
    }

    pub fn zip_map(&self, other: &LatentVideo, f: impl Fn(f64, f64) -> f64 + Copy) -> Result<LatentVideo> {
        self.ensure_same_shape(other)?;
        let frames = self
            .frames
            .iter()
            .zip(&other.frames)
            .map(|(a, b)| a.zip_map(b, f))
            .collect::<Result<_>>()?;
        Ok(LatentVideo { frames })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> LatentVideo {
        LatentVideo {
            frames: self.frames.iter().map(|g| g.map(f)).collect(),
        }
    }
}

/// What a denoiser can do, as advertised to the solver.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub supports_vjp: bool,
    pub frame_count: usize,
    pub channels: usize,
    pub latent_space_id: String,
    /// The solver never issues overlapping calls to a single-flight denoiser.
    pub single_flight: bool,
}

/// `X_theta(x_t, sigma)`, already preconditioned: returns the estimate of
/// the clean latent. Conditioning on sigma uses the raw noise level.
pub trait Denoiser: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    fn denoise(&self, x: &LatentVideo, sigma: f64) -> Result<LatentVideo>;

    /// `J^T cotangent` with `J = d denoise(x, sigma) / dx`.
    fn vjp(&self, x: &LatentVideo, sigma: f64, cotangent: &LatentVideo) -> Result<LatentVideo> {
        let _ = (x, sigma, cotangent);
        Err(Error::Capability("denoiser does not provide vector-Jacobian products".into()))
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn denoise(&self, x: &LatentVideo, sigma: f64) -> Result<LatentVideo> {
        (**self).denoise(x, sigma)
    }

    fn vjp(&self, x: &LatentVideo, sigma: f64, cotangent: &LatentVideo) -> Result<LatentVideo> {
        (**self).vjp(x, sigma, cotangent)
    }
}

/// Identity map: `denoise(x) = x`, `J = I`. Loopback fixture.
#[derive(Clone, Debug)]
pub struct EchoDenoiser {
    pub frame_count: usize,
    pub channels: usize,
    pub supports_vjp: bool,
}

impl Denoiser for EchoDenoiser {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_vjp: self.supports_vjp,
            frame_count: self.frame_count,
            channels: self.channels,
            latent_space_id: "pixel".into(),
            single_flight: false,
        }
    }

    fn denoise(&self, x: &LatentVideo, _sigma: f64) -> Result<LatentVideo> {
        Ok(x.clone())
    }

    fn vjp(&self, x: &LatentVideo, _sigma: f64, cotangent: &LatentVideo) -> Result<LatentVideo> {
        if !self.supports_vjp {
            return Err(Error::Capability("echo denoiser configured without VJP".into()));
        }
        x.ensure_same_shape(cotangent)?;
        Ok(cotangent.clone())
    }
}
