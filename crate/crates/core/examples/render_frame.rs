//! Render one noisy frame of a random scene and print its energy budget.

use oapsense::optics::{blur_sigma_eff, LensConfig};
use oapsense::sensor::{
    generate_scene, render_frame, spot_layout, AcquisitionConfig, SceneConfig, SensorConfig,
};
use oapsense::stream_rng;

fn main() -> oapsense::Result<()> {
    let lens = LensConfig {
        sigma_diff0: 1e-3,
        ..LensConfig::default()
    };
    let sensor = SensorConfig::centered(64, 64, 0.03, 0.03, lens.focal_length)?;
    let mut rng = stream_rng(3, 0);
    let scene = generate_scene(&mut rng, &SceneConfig::default())?;
    let frame = render_frame(
        &scene,
        &lens,
        &sensor,
        &AcquisitionConfig::default(),
        &mut rng,
    )?;

    println!(
        "sigma_eff {:.2} mm, pitch {:.3} mm",
        1e3 * blur_sigma_eff(&lens, sensor.plane_z)?.effective,
        1e3 * sensor.pitch[0]
    );
    for (tx, spot) in scene
        .transmitters
        .iter()
        .zip(spot_layout(&scene, &lens, &sensor)?)
    {
        println!(
            "tx {} {:<12} ground ({:7.2}, {:7.2}) m -> sensor ({:6.3}, {:6.3}) mm",
            tx.id,
            if tx.legitimate {
                "legitimate"
            } else {
                "eavesdropper"
            },
            tx.true_position[0],
            tx.true_position[1],
            1e3 * spot.center[0],
            1e3 * spot.center[1]
        );
    }
    println!(
        "frame energy {:.4e} J over {} pixels",
        frame.sum(),
        frame.pixels.len()
    );
    Ok(())
}
