//! Writes a small guidance-weight sweep as CSV to stdout.

use nvs_core::experiment::{lambda_sweep, SweepParams};

fn main() -> nvs_core::Result<()> {
    let params = SweepParams {
        sigma_points: 4,
        pose_points: 3,
        sigma_range: [0.01, 10.0],
        ..SweepParams::default()
    };
    lambda_sweep(&params, std::io::stdout().lock())
}
