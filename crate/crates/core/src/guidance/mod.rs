//! Adaptive guidance weight, mean modulation and the two guided update rules.

mod lambda;
mod modulate;
mod posterior;
mod trace;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lambda::{
    error_bound_at, error_bound_gap, error_model_d, error_model_p, lambda_closed_form, lambda_numeric_oracle,
    lambda_objective, lambda_q, lambda_raw, ErrorBoundGap, LambdaEval, Weights,
};
pub use modulate::{blend_ratio, modulate_mean, selection_count};
pub use posterior::{dgs_step, posterior_update, step_ratio, step_ratio_bound, PosteriorOutcome};
pub use trace::{LambdaRecord, LambdaTrace};

/// Default `(v1, v2, v3)` for single-view synthesis.
pub const SINGLE_VIEW_WEIGHTS: Weights = Weights {
    v1: 1e-6,
    v2: 0.9,
    v3: 0.05,
};
/// Default `(v1, v2, v3)` for sparse multi-view synthesis.
pub const SPARSE_VIEW_WEIGHTS: Weights = Weights {
    v1: 1e-6,
    v2: 0.7,
    v3: 0.01,
};
/// Default `(v1, v2, v3)` for monocular video.
pub const VIDEO_WEIGHTS: Weights = Weights {
    v1: 1e-6,
    v2: 1.75,
    v3: 0.03,
};

pub const DEFAULT_KAPPA_SCALE: f64 = 2e-2;
pub const DEFAULT_LAMBDA_MIN: f64 = 1e-4;
pub const DEFAULT_LAMBDA_MAX: f64 = 1e12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Euler step with the modulated mean in place of the denoiser output.
    #[default]
    #[serde(alias = "DGS")]
    Dgs,
    /// One normalised VJP step on the latent, then an unguided Euler step.
    #[serde(alias = "Posterior")]
    Posterior,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modulation {
    WeightedAverage,
    #[default]
    PixelSelection,
}

/// How `lambda(t, p)` is chosen at each step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFn {
    /// Closed-form minimiser of the error-bound objective.
    #[default]
    Adaptive,
    Constant(f64),
    /// `lambda = t`, `t` the remaining fraction of the schedule.
    Linear,
    /// `lambda = exp(t + 1)`.
    Exponential,
    /// Numeric minimiser of the same objective.
    OracleNumeric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub mode: SamplingMode,
    pub kappa_scale: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub modulation: Modulation,
    pub weight_fn: WeightFn,
    /// Weight on the rotation angle inside the pose distance.
    pub rotation_weight: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self::with_weights(SINGLE_VIEW_WEIGHTS)
    }
}

impl GuidanceConfig {
    pub fn with_weights(w: Weights) -> Self {
        Self {
            v1: w.v1,
            v2: w.v2,
            v3: w.v3,
            mode: SamplingMode::Dgs,
            kappa_scale: DEFAULT_KAPPA_SCALE,
            lambda_min: DEFAULT_LAMBDA_MIN,
            lambda_max: DEFAULT_LAMBDA_MAX,
            modulation: Modulation::PixelSelection,
            weight_fn: WeightFn::Adaptive,
            rotation_weight: crate::geometry::DEFAULT_ROTATION_WEIGHT,
        }
    }

    pub fn weights(&self) -> Weights {
        Weights {
            v1: self.v1,
            v2: self.v2,
            v3: self.v3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("v1", self.v1), ("v2", self.v2), ("v3", self.v3)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and positive, got {v}")));
            }
        }
        if !(self.kappa_scale.is_finite() && self.kappa_scale >= 0.0) {
            return Err(Error::invalid("kappa_scale must be finite and non-negative"));
        }
        if !(self.lambda_min.is_finite() && self.lambda_max.is_finite() && self.lambda_min > 0.0) {
            return Err(Error::invalid("lambda bounds must be finite and positive"));
        }
        if self.lambda_min > self.lambda_max {
            return Err(Error::invalid(format!(
                "lambda_min {} exceeds lambda_max {}",
                self.lambda_min, self.lambda_max
            )));
        }
        if let WeightFn::Constant(c) = self.weight_fn {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::invalid("constant weight must be finite and non-negative"));
            }
        }
        if !(self.rotation_weight.is_finite() && self.rotation_weight >= 0.0) {
            return Err(Error::invalid("rotation_weight must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn clamp(&self, lambda: f64) -> f64 {
        if lambda.is_nan() || lambda <= 0.0 {
            self.lambda_min
        } else {
            lambda.clamp(self.lambda_min, self.lambda_max)
        }
    }

    /// Weight for one frame at noise level `sigma`. `t` is the remaining
    /// fraction of the schedule (1 at the first step, 0 past the last).
    pub fn weight(&self, sigma: f64, pose_dist: f64, t: f64) -> LambdaEval {
        let w = self.weights();
        let q = lambda_q(w, sigma, pose_dist);
        let raw = match self.weight_fn {
            WeightFn::Adaptive => lambda_raw(w, sigma, pose_dist),
            WeightFn::Constant(c) => Some(c),
            WeightFn::Linear => Some(t),
            WeightFn::Exponential => Some((t + 1.0).exp()),
            WeightFn::OracleNumeric => Some(lambda_numeric_oracle(w, sigma, pose_dist)),
        };
        LambdaEval {
            q,
            raw,
            clamped: self.clamp(raw.unwrap_or(f64::NAN)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = GuidanceConfig::default();
        c.validate().unwrap();
        assert_eq!(c.kappa_scale, 0.02);
        assert_eq!((c.lambda_min, c.lambda_max), (1e-4, 1e12));
    }

    #[test]
    fn rejects_bad_bounds() {
        let c = GuidanceConfig {
            lambda_min: 2.0,
            lambda_max: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = GuidanceConfig {
            v1: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_shape() {
        let c = GuidanceConfig {
            weight_fn: WeightFn::Constant(0.5),
            ..Default::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains(r#""weight_fn":{"constant":0.5}"#), "{text}");
        assert!(text.contains(r#""mode":"dgs""#));
        assert_eq!(serde_json::from_str::<GuidanceConfig>(&text).unwrap(), c);
        let partial: GuidanceConfig = serde_json::from_str(r#"{"mode":"posterior","weight_fn":"linear"}"#).unwrap();
        assert_eq!(partial.mode, SamplingMode::Posterior);
        assert_eq!(partial.v2, 0.9);
        assert!(serde_json::from_str::<GuidanceConfig>(r#"{"v4":1}"#).is_err());
    }

    #[test]
    fn baseline_weight_functions() {
        let mut c = GuidanceConfig {
            weight_fn: WeightFn::Constant(0.5),
            ..Default::default()
        };
        assert_eq!(c.weight(10.0, 0.2, 0.3).clamped, 0.5);
        c.weight_fn = WeightFn::Linear;
        assert_eq!(c.weight(10.0, 0.2, 0.3).clamped, 0.3);
        assert_eq!(c.weight(10.0, 0.2, 0.0).clamped, 1e-4);
        c.weight_fn = WeightFn::Exponential;
        assert_eq!(c.weight(10.0, 0.2, 1.0).clamped, 2f64.exp());
    }

    #[test]
    fn adaptive_weight_clamps_degenerate_regimes() {
        let c = GuidanceConfig::default();
        // Q = v3 p - v2 sigma = 0
        let e = c.weight(0.05, 0.9, 0.5);
        assert_eq!(e.q, 0.0);
        assert_eq!(e.raw, Some(-1.0));
        assert_eq!(e.clamped, 1e-4);
        let e = c.weight(700.0, 0.1, 1.0);
        assert!(e.clamped > 6e8 && e.clamped < 6.4e8);
    }
}
