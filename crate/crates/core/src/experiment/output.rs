use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use super::config::ExperimentConfig;
use super::pipeline::{localize, simulate_trial, ExperimentReport, Localization};
use crate::detect::{matched_filter_heatmap, CalibrationModel, Heatmap};
use crate::error::{Error, Result};
use crate::geom::{flag_anomalies, write_anomaly_csv, AnomalyReport};
use crate::sensor::{spot_layout, write_frame, Frame, Scene};
use crate::Vec2;

pub const SWEEP_HEADER: &str =
    "array_n,trials,mse_m2,miss_rate,false_peak_rate,anomaly_precision,anomaly_recall,runtime_ms";
pub const TRIALS_HEADER: &str =
    "array_n,trial,status,transmitters,eavesdroppers,detected,matched,missed,spurious,sse_m2,flagged,true_flags,runtime_ms";
pub const BY_COUNT_HEADER: &str = "array_n,transmitters,trials,mse_m2";

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn sweep_csv(report: &ExperimentReport, timing: bool) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for a in &report.arrays {
        let runtime = if timing { a.mean_runtime_ms } else { 0.0 };
        writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.3}",
            a.array_n,
            a.trials,
            opt(a.mse),
            a.miss_rate,
            a.false_peak_rate,
            a.anomaly_precision,
            a.anomaly_recall,
            runtime
        )
        .unwrap();
    }
    s
}

pub fn trials_csv(report: &ExperimentReport) -> String {
    let mut s = format!("{TRIALS_HEADER}\n");
    for t in &report.trials {
        let status = if t.failure.is_some() { "failed" } else { "ok" };
        writeln!(
            s,
            "{},{},{status},{},{},{},{},{},{},{:.6},{},{},{:.3}",
            t.array_n,
            t.trial,
            t.transmitters,
            t.eavesdroppers,
            t.detected,
            t.matched,
            t.missed,
            t.spurious,
            t.sse_m2,
            t.flagged,
            t.true_flags,
            t.runtime_ms
        )
        .unwrap();
    }
    s
}

pub fn by_count_csv(report: &ExperimentReport) -> String {
    let mut s = format!("{BY_COUNT_HEADER}\n");
    for a in &report.arrays {
        for c in &a.by_count {
            writeln!(
                s,
                "{},{},{},{}",
                a.array_n,
                c.transmitters,
                c.trials,
                opt(c.mse)
            )
            .unwrap();
        }
    }
    s
}

/// Log-scale line chart of MSE against array side length.
pub fn mse_plot_svg(report: &ExperimentReport) -> String {
    let (w, h, pad) = (640.0, 400.0, 60.0);
    let pts: Vec<(f64, f64)> = report
        .arrays
        .iter()
        .filter_map(|a| a.mse.filter(|m| *m > 0.0).map(|m| (a.array_n as f64, m)))
        .collect();
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">Position MSE vs photodetector array size</text>"#,
        w / 2.0
    )
    .unwrap();
    if pts.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let x_min = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_max = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let d_lo = pts
        .iter()
        .map(|p| p.1.log10())
        .fold(f64::INFINITY, f64::min)
        .floor();
    let d_hi = pts
        .iter()
        .map(|p| p.1.log10())
        .fold(f64::NEG_INFINITY, f64::max)
        .ceil()
        .max(d_lo + 1.0);
    let sx = |x: f64| {
        if x_max > x_min {
            pad + (x - x_min) / (x_max - x_min) * (w - 2.0 * pad)
        } else {
            w / 2.0
        }
    };
    let sy = |y: f64| h - pad - (y.log10() - d_lo) / (d_hi - d_lo) * (h - 2.0 * pad);

    writeln!(
        s,
        r#"<path d="M{pad} {pad} V{} H{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad
    )
    .unwrap();
    for d in (d_lo as i32)..=(d_hi as i32) {
        let y = sy(10f64.powi(d));
        writeln!(
            s,
            r##"<line x1="{pad}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#ddd"/>"##,
            w - pad
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="12">1e{d}</text>"#,
            pad - 6.0,
            y + 4.0
        )
        .unwrap();
    }
    for (x, _) in &pts {
        writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{x}x{x}</text>"#,
            sx(*x),
            h - pad + 18.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">array size</text>"#,
        w / 2.0,
        h - 16.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 18 {})">MSE (m²)</text>"#,
        h / 2.0,
        h / 2.0
    )
    .unwrap();
    let path: Vec<String> = pts
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect();
    writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        path.join(" ")
    )
    .unwrap();
    for &(x, y) in &pts {
        writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#1f77b4"/>"##,
            sx(x),
            sy(y)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Heatmap image with true spot centers as circles and estimates as crosses.
pub fn overlay_svg(heatmap: &Heatmap, truths: &[Vec2], estimates: &[Vec2]) -> String {
    let sensor = &heatmap.sensor;
    let px = 6.0;
    let (w, h) = (sensor.nx as f64 * px, sensor.ny as f64 * px);
    // sensor y grows upward, image rows grow downward
    let to_img = |p: Vec2| {
        (
            (p[0] - sensor.origin[0]) / sensor.pitch[0] * px,
            h - (p[1] - sensor.origin[1]) / sensor.pitch[1] * px,
        )
    };
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    for ((n, m), v) in heatmap.values.indexed_iter() {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{px}" height="{px}" fill="rgb({g},{g},{g})"/>"#,
            m as f64 * px,
            h - (n + 1) as f64 * px
        )
        .unwrap();
    }
    let r = 1.5 * px;
    for &t in truths {
        let (x, y) = to_img(t);
        writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="none" stroke="lime" stroke-width="2"/>"#).unwrap();
    }
    for &e in estimates {
        let (x, y) = to_img(e);
        writeln!(
            s,
            r#"<path d="M{:.2} {:.2} L{:.2} {:.2} M{:.2} {:.2} L{:.2} {:.2}" stroke="red" stroke-width="2"/>"#,
            x - r,
            y - r,
            x + r,
            y + r,
            x - r,
            y + r,
            x + r,
            y - r
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the sweep report (and optional frames/overlays) under `dir`.
pub fn emit_outputs(
    report: &ExperimentReport,
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        write_file(&p, &text)?;
        written.push(p);
        Ok(())
    };
    put("sweep.csv", sweep_csv(report, cfg.timing))?;
    put("sweep_by_count.csv", by_count_csv(report))?;
    if cfg.trials_csv {
        put("trials.csv", trials_csv(report))?;
    }
    put("mse_vs_array.svg", mse_plot_svg(report))?;
    put("config.txt", cfg.to_canonical_string())?;

    let mut log = String::new();
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    writeln!(log, "finished_unix_s {stamp}").unwrap();
    for a in &report.arrays {
        writeln!(
            log,
            "array_n {} mean_runtime_ms {:.3} failures {}",
            a.array_n, a.mean_runtime_ms, a.failures
        )
        .unwrap();
    }
    put("timing.log", log)?;

    if cfg.emit_frames {
        let calibration = match &cfg.calibration_model {
            Some(p) => Some(CalibrationModel::load(p)?),
            None => None,
        };
        for a in &report.arrays {
            let sensor = cfg.sensor_config(a.array_n, a.array_n)?;
            let (scene, frame) = simulate_trial(cfg, &sensor, 0)?;
            let sim = finish_simulation(cfg, scene, frame, calibration.as_ref(), a.gate_m)?;
            written.extend(write_simulation(&sim, dir, &format!("_n{}", a.array_n))?);
        }
    }
    Ok(written)
}

/// One scene taken through the whole pipeline.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub scene: Scene,
    pub frame: Frame,
    pub heatmap: Heatmap,
    pub localization: Localization,
    pub anomalies: AnomalyReport,
    /// True spot centers on the sensor, in scene transmitter order.
    pub spot_centers: Vec<Vec2>,
}

fn finish_simulation(
    cfg: &ExperimentConfig,
    scene: Scene,
    frame: Frame,
    calibration: Option<&CalibrationModel>,
    gate: f64,
) -> Result<Simulation> {
    let sigma = cfg.sigma_eff()?;
    let heatmap = matched_filter_heatmap(
        &frame,
        &cfg.detector.resolve(sigma, scene.transmitters.len()),
    )?;
    let localization = localize(cfg, &scene, &frame, calibration)?;
    let anomalies = flag_anomalies(&localization.estimates, &scene.claims(), gate)?;
    let spot_centers = spot_layout(&scene, &cfg.lens, &frame.sensor)?
        .iter()
        .map(|s| s.center)
        .collect();
    Ok(Simulation {
        scene,
        frame,
        heatmap,
        localization,
        anomalies,
        spot_centers,
    })
}

/// Single scene at the configured sensor size (trial 0 of the seed).
pub fn run_simulation(cfg: &ExperimentConfig) -> Result<Simulation> {
    cfg.validate()?;
    let sensor = cfg.sensor_config(cfg.sensor.nx, cfg.sensor.ny)?;
    let (scene, frame) = simulate_trial(cfg, &sensor, 0)?;
    let calibration = match &cfg.calibration_model {
        Some(p) => Some(CalibrationModel::load(p)?),
        None => None,
    };
    let gate = cfg.gate.unwrap_or(super::pipeline::MIN_GATE_M);
    finish_simulation(cfg, scene, frame, calibration.as_ref(), gate)
}

/// Frame, overlay and anomaly table of a simulation; `suffix` tags the file names.
pub fn write_simulation(sim: &Simulation, dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let frame_path = dir.join(format!("frame{suffix}.owfr"));
    write_frame(&frame_path, &sim.frame.pixels)?;
    let overlay_path = dir.join(format!("overlay{suffix}.svg"));
    write_file(
        &overlay_path,
        &overlay_svg(
            &sim.heatmap,
            &sim.spot_centers,
            &sim.localization.spots.centroids,
        ),
    )?;
    let anomaly_path = dir.join(format!("anomalies{suffix}.csv"));
    let mut buf = Vec::new();
    write_anomaly_csv(&mut buf, &[(0, sim.anomalies.clone())])
        .map_err(|e| Error::io(&anomaly_path, e))?;
    fs::write(&anomaly_path, buf).map_err(|e| Error::io(&anomaly_path, e))?;
    Ok(vec![frame_path, overlay_path, anomaly_path])
}
