//! Prints a short rho-spaced noise ladder and one deterministic reverse step.

use nvs_core::image::{ImageGrid, Shape};
use nvs_core::schedule::{add_noise, ve_step, NoiseSchedule};

fn main() -> nvs_core::Result<()> {
    let schedule = NoiseSchedule::build(700.0, 0.002, 7.0, 10)?;
    for (i, s) in schedule.sigmas().iter().enumerate() {
        println!("sigma[{i:2}] = {s:.6e}");
    }
    let clean = ImageGrid::filled(Shape::new(2, 2, 1), 0.5);
    let (hi, lo) = schedule.step_pairs().last().expect("at least one step");
    let noisy = add_noise(&clean, hi, 1)?;
    // a perfect denoiser lands exactly on the clean image at sigma 0
    let next = ve_step(&noisy, &clean, hi, lo)?;
    println!("last step {hi:.4} -> {lo}: max error {:.2e}", next.max_abs_diff(&clean)?);
    Ok(())
}
