//! Per-trial runtime grows no worse than quadratically in the array side.

use std::time::Instant;

use oapsense::experiment::{run_trial, ExperimentConfig};

fn mean_trial_seconds(cfg: &ExperimentConfig, n: usize, trials: usize) -> f64 {
    let sensor = cfg.sensor_config(n, n).unwrap();
    // warm-up
    run_trial(cfg, &sensor, 0).unwrap();
    let t = Instant::now();
    for k in 0..trials {
        run_trial(cfg, &sensor, k).unwrap();
    }
    t.elapsed().as_secs_f64() / trials as f64
}

#[test]
fn runtime_is_at_most_quadratic_in_side_length() {
    let cfg = ExperimentConfig::default();
    let small = mean_trial_seconds(&cfg, 10, 40);
    for n in [20usize, 40, 60, 80, 100] {
        let t = mean_trial_seconds(&cfg, n, 10);
        let bound = 3.0 * small * (n as f64 / 10.0).powi(2);
        assert!(
            t <= bound,
            "{n}x{n}: {t:.2e} s per trial exceeds {bound:.2e} s"
        );
    }
}
