//! One end-to-end trial: render, detect, back-project and score against truth.

use oapsense::experiment::{localize, simulate_trial, ExperimentConfig};

fn main() -> oapsense::Result<()> {
    let cfg = ExperimentConfig::parse("lens.sigma_diff0_m = 0.0005\n")?;
    let sensor = cfg.sensor_config(64, 64)?;
    let (scene, frame) = simulate_trial(&cfg, &sensor, 0)?;
    let loc = localize(&cfg, &scene, &frame, None)?;

    for (t, e) in &loc.assignment.pairs {
        let truth = scene.transmitters[*t].true_position;
        let est = loc.estimates[*e].position;
        println!(
            "tx {t}: true ({:7.2}, {:7.2}) m, estimate ({:7.2}, {:7.2}) m, error {:.2} m",
            truth[0],
            truth[1],
            est[0],
            est[1],
            (est[0] - truth[0]).hypot(est[1] - truth[1])
        );
    }
    println!(
        "matched {}, missed {}, spurious {}, MSE {:?} m^2",
        loc.mse.matched, loc.mse.missed, loc.mse.spurious, loc.mse.mse
    );
    Ok(())
}
