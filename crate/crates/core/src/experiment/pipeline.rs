use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::Matrix2;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use crate::assign::{euclidean_cost, mahalanobis_cost, solve_lap_rect, AssignmentResult, Metric};
use crate::detect::{apply_calibration, detect_spots, fit_calibration, CalibrationModel, SpotSet};
use crate::error::{Error, Result};
use crate::geom::{flag_anomalies, mse_position, AnomalyReport, GroundEstimate, MseSummary};
use crate::sensor::{generate_scene, render_frame, spot_layout, Frame, Scene, SensorConfig};
use crate::{stream_rng, Vec2};

/// Stream offsets keep sweep, calibration-training and hold-out draws disjoint.
const CALIBRATION_STREAM_BASE: u64 = 1 << 40;
const HOLDOUT_STREAM_BASE: u64 = 1 << 41;

/// Lower bound on the automatic anomaly gate, meters.
pub const MIN_GATE_M: f64 = 2.0;

/// Scene and frame for trial `index`, drawn from two dedicated streams.
///
/// The scene stream does not depend on the sensor, so every array size in a
/// sweep sees the same scenes and the same fades.
pub fn simulate_trial(
    cfg: &ExperimentConfig,
    sensor: &SensorConfig,
    stream: u64,
) -> Result<(Scene, Frame)> {
    let mut scene_rng = stream_rng(cfg.seed, 2 * stream);
    let scene = generate_scene(&mut scene_rng, &cfg.scene)?;
    let mut render_rng = stream_rng(cfg.seed, 2 * stream + 1);
    let mut frame = render_frame(
        &scene,
        &cfg.lens,
        sensor,
        &cfg.acquisition(),
        &mut render_rng,
    )?;
    frame.seed = cfg.seed;
    Ok((scene, frame))
}

/// Detection, inversion and truth matching for one frame.
#[derive(Debug, Clone)]
pub struct Localization {
    /// Detector output before calibration.
    pub raw_spots: SpotSet,
    pub spots: SpotSet,
    pub shortfall: usize,
    pub estimates: Vec<GroundEstimate>,
    /// Truths (scene transmitter order) to estimates.
    pub assignment: AssignmentResult,
    pub mse: MseSummary,
}

pub fn localize(
    cfg: &ExperimentConfig,
    scene: &Scene,
    frame: &Frame,
    calibration: Option<&CalibrationModel>,
) -> Result<Localization> {
    let sigma = cfg.sigma_eff()?;
    let det = cfg.detector.resolve(sigma, scene.transmitters.len());
    let selection = detect_spots(frame, &det)?;
    let raw_spots = selection.spots.with_isotropic_covariance(sigma);
    let spots = match calibration {
        Some(m) => apply_calibration(m, &raw_spots),
        None => raw_spots.clone(),
    };
    let z = frame.sensor.plane_z;
    let estimates = spots
        .centroids
        .iter()
        .map(|&c| GroundEstimate::from_centroid(c, z, scene.altitude))
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<Vec2> = estimates.iter().map(|e| e.position).collect();
    let truths = scene.true_positions();
    let assignment = match_truths(
        cfg,
        &truths,
        &points,
        sigma * scene.altitude / z,
        det.nms_radius * scene.altitude / z,
    )?;
    let mse = mse_position(&points, &truths, &assignment)?;
    Ok(Localization {
        raw_spots,
        spots,
        shortfall: selection.shortfall,
        estimates,
        assignment,
        mse,
    })
}

/// Rectangular LAP between true and estimated ground positions.
fn match_truths(
    cfg: &ExperimentConfig,
    truths: &[Vec2],
    estimates: &[Vec2],
    sigma_ground: f64,
    nms_ground: f64,
) -> Result<AssignmentResult> {
    let c_max = cfg.c_max.unwrap_or(3.0 * nms_ground);
    match cfg.metric {
        Metric::Euclidean => solve_lap_rect(&euclidean_cost(truths, estimates), c_max),
        Metric::Mahalanobis => {
            let cov = vec![Matrix2::identity() * (sigma_ground * sigma_ground); truths.len()];
            solve_lap_rect(
                &mahalanobis_cost(truths, estimates, &cov)?,
                c_max / sigma_ground,
            )
        }
    }
}

/// Everything the second (anomaly) pass needs from a successful trial.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub transmitters: usize,
    pub eavesdroppers: usize,
    pub detected: usize,
    pub shortfall: usize,
    pub mse: MseSummary,
    pub estimates: Vec<GroundEstimate>,
    /// Whether each estimate was matched to an eavesdropper's true position.
    pub estimate_is_eavesdropper: Vec<bool>,
    pub claims: Vec<(usize, Vec2)>,
}

impl TrialOutcome {
    fn from_localization(scene: &Scene, loc: Localization) -> Self {
        let mut is_eaves = vec![false; loc.estimates.len()];
        for &(t, e) in &loc.assignment.pairs {
            is_eaves[e] = !scene.transmitters[t].legitimate;
        }
        Self {
            transmitters: scene.transmitters.len(),
            eavesdroppers: scene.eavesdropper_count(),
            detected: loc.estimates.len(),
            shortfall: loc.shortfall,
            mse: loc.mse,
            estimates: loc.estimates,
            estimate_is_eavesdropper: is_eaves,
            claims: scene.claims(),
        }
    }

    /// `(true flags, false flags, missed eavesdroppers)` at gate radius `gate`.
    pub fn anomaly_counts(&self, gate: f64) -> Result<(usize, usize, usize)> {
        let report = flag_anomalies(&self.estimates, &self.claims, gate)?;
        let mut tp = 0;
        let mut fp = 0;
        for (i, _) in report.flagged() {
            if self.estimate_is_eavesdropper[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        Ok((tp, fp, self.eavesdroppers - tp))
    }

    pub fn anomaly_report(&self, gate: f64) -> Result<AnomalyReport> {
        flag_anomalies(&self.estimates, &self.claims, gate)
    }
}

/// One trial of one array size.
pub fn run_trial(
    cfg: &ExperimentConfig,
    sensor: &SensorConfig,
    trial: usize,
) -> Result<TrialOutcome> {
    let (scene, frame) = simulate_trial(cfg, sensor, trial as u64)?;
    let calibration = match &cfg.calibration_model {
        Some(p) => Some(CalibrationModel::load(p)?),
        None => None,
    };
    let loc = localize(cfg, &scene, &frame, calibration.as_ref())?;
    Ok(TrialOutcome::from_localization(&scene, loc))
}

/// Audit row for a single trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub array_n: usize,
    pub trial: usize,
    /// `None` on success, the failure message otherwise.
    pub failure: Option<String>,
    pub transmitters: usize,
    pub eavesdroppers: usize,
    pub detected: usize,
    pub matched: usize,
    pub missed: usize,
    pub spurious: usize,
    pub sse_m2: f64,
    pub flagged: usize,
    pub true_flags: usize,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountBreakdown {
    pub transmitters: usize,
    pub trials: usize,
    pub mse: Option<f64>,
}

/// Aggregates for one array size.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayReport {
    pub array_n: usize,
    pub trials: usize,
    pub failures: usize,
    /// Pooled mean squared ground error over matched pairs, m².
    pub mse: Option<f64>,
    /// Missed truths over all truths.
    pub miss_rate: f64,
    /// Unmatched estimates over all estimates.
    pub false_peak_rate: f64,
    pub anomaly_precision: f64,
    pub anomaly_recall: f64,
    pub gate_m: f64,
    pub mean_runtime_ms: f64,
    pub by_count: Vec<CountBreakdown>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub arrays: Vec<ArrayReport>,
    pub trials: Vec<TrialRecord>,
}

impl ExperimentReport {
    pub fn failures(&self) -> usize {
        self.arrays.iter().map(|a| a.failures).sum()
    }

    pub fn failure_rate(&self) -> f64 {
        let total: usize = self.arrays.iter().map(|a| a.trials).sum();
        if total == 0 {
            0.0
        } else {
            self.failures() as f64 / total as f64
        }
    }

    pub fn array(&self, n: usize) -> Option<&ArrayReport> {
        self.arrays.iter().find(|a| a.array_n == n)
    }
}

/// Monte Carlo sweep over `cfg.array_sizes` (square `n × n` arrays).
///
/// Trials run in parallel; results are reduced in trial order, so the report
/// depends only on the configuration and seed. A trial that errors or panics
/// is counted as a failure and left out of the aggregates.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let calibration = match &cfg.calibration_model {
        Some(p) => Some(CalibrationModel::load(p)?),
        None => None,
    };
    sweep_with(cfg, |sensor, trial| {
        let (scene, frame) = simulate_trial(cfg, sensor, trial as u64)?;
        let loc = localize(cfg, &scene, &frame, calibration.as_ref())?;
        Ok(TrialOutcome::from_localization(&scene, loc))
    })
}

pub(crate) fn sweep_with<F>(cfg: &ExperimentConfig, trial_fn: F) -> Result<ExperimentReport>
where
    F: Fn(&SensorConfig, usize) -> Result<TrialOutcome> + Sync,
{
    cfg.validate()?;
    let mut arrays = Vec::new();
    let mut records = Vec::new();
    for &n in &cfg.array_sizes {
        let sensor = cfg.sensor_config(n, n)?;
        let results: Vec<(std::result::Result<TrialOutcome, String>, f64)> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let start = Instant::now();
                let r = match catch_unwind(AssertUnwindSafe(|| trial_fn(&sensor, t))) {
                    Ok(Ok(o)) => Ok(o),
                    Ok(Err(e)) => Err(e.to_string()),
                    Err(panic) => Err(panic_message(panic.as_ref())),
                };
                (r, start.elapsed().as_secs_f64() * 1e3)
            })
            .collect();
        let (report, rows) = aggregate(cfg, n, &results)?;
        arrays.push(report);
        records.extend(rows);
    }
    Ok(ExperimentReport {
        arrays,
        trials: records,
    })
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = p.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        "panic".to_string()
    }
}

fn aggregate(
    cfg: &ExperimentConfig,
    n: usize,
    results: &[(std::result::Result<TrialOutcome, String>, f64)],
) -> Result<(ArrayReport, Vec<TrialRecord>)> {
    let ok: Vec<&TrialOutcome> = results
        .iter()
        .filter_map(|(r, _)| r.as_ref().ok())
        .collect();
    let sse: f64 = ok.iter().map(|o| o.mse.sse).sum();
    let matched: usize = ok.iter().map(|o| o.mse.matched).sum();
    let mse = (matched > 0).then(|| sse / matched as f64);
    let gate = cfg
        .gate
        .unwrap_or_else(|| mse.map_or(MIN_GATE_M, |m| (3.0 * m.sqrt()).max(MIN_GATE_M)));

    let truths: usize = ok.iter().map(|o| o.transmitters).sum();
    let missed: usize = ok.iter().map(|o| o.mse.missed).sum();
    let detected: usize = ok.iter().map(|o| o.detected).sum();
    let spurious: usize = ok.iter().map(|o| o.mse.spurious).sum();

    let mut rows = Vec::with_capacity(results.len());
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    let mut runtime = 0.0;
    for (trial, (r, ms)) in results.iter().enumerate() {
        runtime += ms;
        let runtime_ms = if cfg.timing { *ms } else { 0.0 };
        match r {
            Ok(o) => {
                let (t, f, m) = o.anomaly_counts(gate)?;
                tp += t;
                fp += f;
                fneg += m;
                rows.push(TrialRecord {
                    array_n: n,
                    trial,
                    failure: None,
                    transmitters: o.transmitters,
                    eavesdroppers: o.eavesdroppers,
                    detected: o.detected,
                    matched: o.mse.matched,
                    missed: o.mse.missed,
                    spurious: o.mse.spurious,
                    sse_m2: o.mse.sse,
                    flagged: t + f,
                    true_flags: t,
                    runtime_ms,
                });
            }
            Err(msg) => rows.push(TrialRecord {
                array_n: n,
                trial,
                failure: Some(msg.clone()),
                transmitters: 0,
                eavesdroppers: 0,
                detected: 0,
                matched: 0,
                missed: 0,
                spurious: 0,
                sse_m2: 0.0,
                flagged: 0,
                true_flags: 0,
                runtime_ms,
            }),
        }
    }

    let mut counts: Vec<usize> = cfg.scene.counts.clone();
    counts.sort_unstable();
    counts.dedup();
    let by_count = counts
        .into_iter()
        .map(|k| {
            let subset: Vec<&&TrialOutcome> = ok.iter().filter(|o| o.transmitters == k).collect();
            let s: f64 = subset.iter().map(|o| o.mse.sse).sum();
            let m: usize = subset.iter().map(|o| o.mse.matched).sum();
            CountBreakdown {
                transmitters: k,
                trials: subset.len(),
                mse: (m > 0).then(|| s / m as f64),
            }
        })
        .collect();

    let ratio = |num: usize, den: usize, empty: f64| {
        if den == 0 {
            empty
        } else {
            num as f64 / den as f64
        }
    };
    let report = ArrayReport {
        array_n: n,
        trials: results.len(),
        failures: results.len() - ok.len(),
        mse,
        miss_rate: ratio(missed, truths, 0.0),
        false_peak_rate: ratio(spurious, detected, 0.0),
        anomaly_precision: ratio(tp, tp + fp, 1.0),
        anomaly_recall: ratio(tp, tp + fneg, 1.0),
        gate_m: gate,
        mean_runtime_ms: runtime / results.len().max(1) as f64,
        by_count,
    };
    Ok((report, rows))
}

/// Fitted calibration and its held-out evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub model: CalibrationModel,
    pub training_frames: usize,
    pub training_pairs: usize,
    pub holdout_frames: usize,
    /// Pooled ground MSE on the hold-out set without and with the correction, m².
    pub uncalibrated_mse: f64,
    pub calibrated_mse: f64,
}

/// Minimum number of training frames for [`run_calibration`].
pub const MIN_CALIBRATION_FRAMES: usize = 100;

/// Fits a centroid correction on simulated frames and scores it on fresh ones.
///
/// Training pairs are `(raw centroid, true spot center)` for every detection
/// the truth assignment matched. Both the training and the hold-out frames use
/// the configured sensor size.
pub fn run_calibration(
    cfg: &ExperimentConfig,
    training_frames: usize,
) -> Result<CalibrationReport> {
    cfg.validate()?;
    if training_frames < MIN_CALIBRATION_FRAMES {
        return Err(Error::config(
            "calibration.training_frames",
            format!("need at least {MIN_CALIBRATION_FRAMES} frames, got {training_frames}"),
        ));
    }
    let sensor = cfg.sensor_config(cfg.sensor.nx, cfg.sensor.ny)?;
    let uncalibrated = ExperimentConfig {
        calibration_model: None,
        ..cfg.clone()
    };

    let per_frame: Vec<Vec<(Vec2, Vec2)>> = (0..training_frames)
        .into_par_iter()
        .map(|i| -> Result<Vec<(Vec2, Vec2)>> {
            let (scene, frame) =
                simulate_trial(&uncalibrated, &sensor, CALIBRATION_STREAM_BASE + i as u64)?;
            let loc = localize(&uncalibrated, &scene, &frame, None)?;
            let layout = spot_layout(&scene, &cfg.lens, &sensor)?;
            Ok(loc
                .assignment
                .pairs
                .iter()
                .map(|&(t, e)| (loc.raw_spots.centroids[e], layout[t].center))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(Vec2, Vec2)> = per_frame.into_iter().flatten().collect();
    let model = fit_calibration(&pairs)?;

    let sums: Vec<(f64, usize, f64, usize)> = (0..cfg.holdout_frames)
        .into_par_iter()
        .map(|i| -> Result<(f64, usize, f64, usize)> {
            let (scene, frame) =
                simulate_trial(&uncalibrated, &sensor, HOLDOUT_STREAM_BASE + i as u64)?;
            let raw = localize(&uncalibrated, &scene, &frame, None)?;
            let fixed = localize(&uncalibrated, &scene, &frame, Some(&model))?;
            Ok((
                raw.mse.sse,
                raw.mse.matched,
                fixed.mse.sse,
                fixed.mse.matched,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled = |s: f64, m: usize| if m == 0 { f64::NAN } else { s / m as f64 };
    let (s0, m0, s1, m1) = sums.iter().fold((0.0, 0, 0.0, 0), |a, b| {
        (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3)
    });
    Ok(CalibrationReport {
        model,
        training_frames,
        training_pairs: pairs.len(),
        holdout_frames: cfg.holdout_frames,
        uncalibrated_mse: pooled(s0, m0),
        calibrated_mse: pooled(s1, m1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            trials: 12,
            array_sizes: vec![20, 40],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn sweep_is_deterministic_and_ordered() {
        let cfg = small();
        let strip = |mut r: ExperimentReport| {
            r.arrays.iter_mut().for_each(|a| a.mean_runtime_ms = 0.0);
            r
        };
        let a = run_sweep(&cfg).unwrap();
        assert!(a.arrays.iter().all(|r| r.mean_runtime_ms > 0.0));
        let a = strip(a);
        let b = strip(run_sweep(&cfg).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.arrays.len(), 2);
        assert_eq!(a.trials.len(), 24);
        assert!(a
            .trials
            .iter()
            .take(12)
            .enumerate()
            .all(|(i, r)| r.trial == i && r.array_n == 20));
        for r in &a.arrays {
            assert!(r.mse.unwrap() >= 0.0);
            for rate in [
                r.miss_rate,
                r.false_peak_rate,
                r.anomaly_precision,
                r.anomaly_recall,
            ] {
                assert!((0.0..=1.0).contains(&rate));
            }
        }
        assert!(a.trials.iter().all(|t| t.runtime_ms == 0.0));
    }

    #[test]
    fn scenes_are_shared_across_array_sizes() {
        let cfg = small();
        let (s1, _) = simulate_trial(&cfg, &cfg.sensor_config(10, 10).unwrap(), 3).unwrap();
        let (s2, _) = simulate_trial(&cfg, &cfg.sensor_config(100, 100).unwrap(), 3).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn failing_trials_are_isolated() {
        // a fixed gate keeps the anomaly pass independent of the pooled MSE
        let cfg = ExperimentConfig {
            gate: Some(10.0),
            ..small()
        };
        let clean = run_sweep(&cfg).unwrap();
        let prev = std::panic::take_hook();
        std::panic::set_hook(Box::new(|_| {}));
        let broken = sweep_with(&cfg, |sensor, t| {
            if t == 5 {
                panic!("injected");
            }
            if t == 7 {
                return Err(Error::domain("injected"));
            }
            run_trial(&cfg, sensor, t)
        })
        .unwrap();
        std::panic::set_hook(prev);
        assert_eq!(broken.failures(), 4);
        assert!((broken.failure_rate() - 4.0 / 24.0).abs() < 1e-12);
        let row = &broken.trials[5];
        assert_eq!(row.failure.as_deref(), Some("panic: injected"));
        // surviving trials are untouched
        for (a, b) in clean.trials.iter().zip(&broken.trials) {
            if a.trial != 5 && a.trial != 7 {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn calibration_needs_enough_frames() {
        let cfg = small();
        assert!(matches!(
            run_calibration(&cfg, 50),
            Err(Error::Config { .. })
        ));
    }
}
