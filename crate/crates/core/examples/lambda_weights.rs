//! Adaptive guidance weight against the numeric minimiser of its objective.

use nvs_core::guidance::{lambda_closed_form, lambda_numeric_oracle, lambda_raw, GuidanceConfig};

fn main() {
    let g = GuidanceConfig::default();
    let w = g.weights();
    println!("{:>10} {:>6} {:>14} {:>14} {:>14}", "sigma", "pose", "raw", "clamped", "oracle");
    for sigma in [10.0, 1.0, 0.1, 0.01] {
        for pose in [0.1, 0.5] {
            let raw = lambda_raw(w, sigma, pose).map_or("-".to_string(), |v| format!("{v:.6e}"));
            let clamped = lambda_closed_form(w, sigma, pose, g.lambda_min, g.lambda_max);
            let oracle = lambda_numeric_oracle(w, sigma, pose);
            println!("{sigma:>10} {pose:>6} {raw:>14} {clamped:>14.6e} {oracle:>14.6e}");
        }
    }
}
