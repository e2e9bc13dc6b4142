//! Matched filter, peak selection and sub-pixel refinement on a noiseless frame.

use oapsense::detect::{detect_spots, estimate_count, matched_filter_heatmap, DetectorConfig};
use oapsense::optics::{blur_sigma_eff, BeamParams, LensConfig};
use oapsense::sensor::{
    render_frame, spot_layout, AcquisitionConfig, Scene, SensorConfig, Transmitter,
};
use oapsense::stream_rng;

fn main() -> oapsense::Result<()> {
    let lens = LensConfig {
        sigma_diff0: 6e-4,
        ..LensConfig::default()
    };
    let sensor = SensorConfig::centered(48, 48, 0.03, 0.03, lens.focal_length)?;
    let positions = [[-80.0, 40.0], [15.0, -60.0], [95.0, 90.0]];
    let scene = Scene {
        id: 1,
        transmitters: positions
            .iter()
            .enumerate()
            .map(|(i, &p)| Transmitter::legitimate(i, p, BeamParams::default()))
            .collect(),
        altitude: 300.0,
        area_half_widths: [125.0, 125.0],
    };
    let frame = render_frame(
        &scene,
        &lens,
        &sensor,
        &AcquisitionConfig::ideal(),
        &mut stream_rng(0, 0),
    )?;

    let cfg = DetectorConfig::for_sigma(blur_sigma_eff(&lens, sensor.plane_z)?.effective);
    let heatmap = matched_filter_heatmap(&frame, &cfg)?;
    println!("estimated count {}", estimate_count(&heatmap, &cfg)?);
    let found = detect_spots(&frame, &cfg)?.spots;
    for truth in spot_layout(&scene, &lens, &sensor)? {
        let best = found
            .centroids
            .iter()
            .map(|c| (c[0] - truth.center[0]).hypot(c[1] - truth.center[1]))
            .fold(f64::INFINITY, f64::min);
        println!(
            "spot at ({:6.3}, {:6.3}) mm: nearest estimate {:.2} um away ({:.3} pixel)",
            1e3 * truth.center[0],
            1e3 * truth.center[1],
            1e6 * best,
            best / sensor.pitch[0]
        );
    }
    Ok(())
}
