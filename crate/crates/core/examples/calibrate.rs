//! Fit the centroid correction and compare held-out error with and without it.

use oapsense::experiment::{run_calibration, ExperimentConfig};

fn main() -> oapsense::Result<()> {
    let cfg = ExperimentConfig::default();
    let report = run_calibration(&cfg, cfg.calibration_frames)?;
    println!(
        "{} frames, {} pairs: held-out MSE {:.2} -> {:.2} m^2",
        report.training_frames,
        report.training_pairs,
        report.uncalibrated_mse,
        report.calibrated_mse
    );
    if let Some(stats) = report.model.stats {
        println!("training residual rms {:.3} um", 1e6 * stats.residual_rms);
    }
    print!("{}", report.model.to_csv());
    Ok(())
}
