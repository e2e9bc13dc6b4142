//! From a frame to an unordered set of spot centroids on the sensor plane.
//!
//! The heatmap stage is a matched filter against the known spot profile; for
//! isolated Gaussian spots it is the optimal linear detector and needs no
//! training. Peaks are then picked by non-maximum suppression and refined by
//! intensity-weighted centroiding.

mod calibration;

pub use calibration::{
    apply_calibration, fit_calibration, CalibrationModel, FitStats, CALIBRATION_HEADER,
    CALIBRATION_TERMS,
};

use nalgebra::Matrix2;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::sensor::{normal_interval, Frame, SensorConfig};
use crate::{dist2, Vec2};

/// Matched-filter kernels extend this many `σ_tgt` from their center.
const KERNEL_HALF_WIDTH_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Heatmap kernel standard deviation, meters.
    pub sigma_tgt: f64,
    /// Minimum separation of retained peaks, meters.
    pub nms_radius: f64,
    /// Peaks below this fraction of the heatmap maximum are dropped.
    pub peak_threshold: f64,
    /// Return exactly this many peaks when set.
    pub known_count: Option<usize>,
    /// Centroiding window radius, meters.
    pub refine_radius: f64,
}

impl DetectorConfig {
    /// Defaults for a spot of standard deviation `sigma`.
    pub fn for_sigma(sigma: f64) -> Self {
        Self {
            sigma_tgt: sigma,
            nms_radius: 2.0 * sigma,
            peak_threshold: 0.25,
            known_count: None,
            refine_radius: 3.0 * sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_tgt > 0.0 && self.sigma_tgt.is_finite()) {
            return Err(Error::config("detector.sigma_tgt_m", "must be positive"));
        }
        if !(self.nms_radius > 0.0 && self.nms_radius.is_finite()) {
            return Err(Error::config("detector.nms_radius_m", "must be positive"));
        }
        if !(self.peak_threshold > 0.0 && self.peak_threshold < 1.0) {
            return Err(Error::config(
                "detector.peak_threshold",
                "must lie in (0, 1)",
            ));
        }
        if !(self.refine_radius > 0.0 && self.refine_radius.is_finite()) {
            return Err(Error::config(
                "detector.refine_radius_m",
                "must be positive",
            ));
        }
        Ok(())
    }
}

/// Single-channel map in `[0, 1]` on a sensor grid, `ny × nx` like [`Frame`].
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub values: Array2<f64>,
    pub sensor: SensorConfig,
}

impl Heatmap {
    pub fn max(&self) -> f64 {
        self.values.iter().fold(0.0, |a, &v| a.max(v))
    }

    /// Heatmap translated by whole pixels, zero-filled.
    pub fn shifted(&self, dm: isize, dn: isize) -> Self {
        Self {
            values: shift_array(&self.values, dm, dn),
            sensor: self.sensor,
        }
    }
}

/// Detected spots. Order carries no meaning.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpotSet {
    /// Sensor-plane centroids, meters.
    pub centroids: Vec<Vec2>,
    /// Per-spot confidence in `[0, 1]`.
    pub scores: Vec<f64>,
    /// Optional per-spot error covariances, m².
    pub covariances: Option<Vec<Matrix2<f64>>>,
}

impl SpotSet {
    pub fn new(centroids: Vec<Vec2>, scores: Vec<f64>) -> Self {
        Self {
            centroids,
            scores,
            covariances: None,
        }
    }

    /// Unit-score spots at the given points.
    pub fn from_points(points: &[Vec2]) -> Self {
        Self::new(points.to_vec(), vec![1.0; points.len()])
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Attaches `σ² I` to every spot.
    pub fn with_isotropic_covariance(mut self, sigma: f64) -> Self {
        self.covariances = Some(vec![Matrix2::identity() * (sigma * sigma); self.len()]);
        self
    }
}

/// `H(x, y) = min(1, Σ_i exp(−‖(x, y) − r_i‖² / 2σ_tgt²))` at pixel centers.
pub fn build_target_heatmap(
    spots: &SpotSet,
    cfg: &DetectorConfig,
    sensor: &SensorConfig,
) -> Result<Heatmap> {
    cfg.validate()?;
    let inv = 1.0 / (2.0 * cfg.sigma_tgt * cfg.sigma_tgt);
    // sum in a fixed order so the result does not depend on input order
    let mut sorted = spots.centroids.clone();
    sorted.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let values = Array2::from_shape_fn((sensor.ny, sensor.nx), |(n, m)| {
        let c = sensor.pixel_center(m, n);
        let s: f64 = sorted.iter().map(|&r| (-dist2(c, r) * inv).exp()).sum();
        s.min(1.0)
    });
    Ok(Heatmap {
        values,
        sensor: *sensor,
    })
}

/// Correlates the frame with the pixel-integrated spot profile.
///
/// The kernel has unit energy. The correlation median is subtracted as the
/// background, negatives are clamped, and the result is divided by its
/// maximum. A frame with no positive response yields an all-zero heatmap.
pub fn matched_filter_heatmap(frame: &Frame, cfg: &DetectorConfig) -> Result<Heatmap> {
    cfg.validate()?;
    let sensor = frame.sensor;
    let kx = pixel_kernel(cfg.sigma_tgt, sensor.pitch[0]);
    let ky = pixel_kernel(cfg.sigma_tgt, sensor.pitch[1]);

    let rows = correlate_rows(&frame.pixels, &kx);
    let mut corr = correlate_cols(&rows, &ky);

    let background = median(corr.iter().copied());
    corr.mapv_inplace(|v| (v - background).max(0.0));
    let peak = corr.iter().fold(0.0f64, |a, &v| a.max(v));
    if peak > 0.0 && peak.is_finite() {
        corr.mapv_inplace(|v| v / peak);
    } else {
        corr.fill(0.0);
    }
    Ok(Heatmap {
        values: corr,
        sensor,
    })
}

/// Centered 1-D kernel `Φ((i+½)Δ/σ) − Φ((i−½)Δ/σ)`, scaled to unit L2 norm.
fn pixel_kernel(sigma: f64, pitch: f64) -> Vec<f64> {
    let half = (KERNEL_HALF_WIDTH_SIGMAS * sigma / pitch).ceil() as isize;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| {
            normal_interval(
                (i as f64 - 0.5) * pitch / sigma,
                (i as f64 + 0.5) * pitch / sigma,
            )
        })
        .collect();
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    k.iter_mut().for_each(|v| *v /= norm);
    k
}

fn correlate_rows(a: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (ny, nx) = a.dim();
    let half = (k.len() / 2) as isize;
    Array2::from_shape_fn((ny, nx), |(n, m)| {
        let mut s = 0.0;
        for (t, w) in k.iter().enumerate() {
            let j = m as isize + t as isize - half;
            if j >= 0 && (j as usize) < nx {
                s += w * a[[n, j as usize]];
            }
        }
        s
    })
}

fn correlate_cols(a: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (ny, nx) = a.dim();
    let half = (k.len() / 2) as isize;
    Array2::from_shape_fn((ny, nx), |(n, m)| {
        let mut s = 0.0;
        for (t, w) in k.iter().enumerate() {
            let i = n as isize + t as isize - half;
            if i >= 0 && (i as usize) < ny {
                s += w * a[[i as usize, m]];
            }
        }
        s
    })
}

pub(crate) fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

pub(crate) fn shift_array(a: &Array2<f64>, dm: isize, dn: isize) -> Array2<f64> {
    let (ny, nx) = a.dim();
    Array2::from_shape_fn((ny, nx), |(n, m)| {
        let sn = n as isize - dn;
        let sm = m as isize - dm;
        if sn >= 0 && sm >= 0 && (sn as usize) < ny && (sm as usize) < nx {
            a[[sn as usize, sm as usize]]
        } else {
            0.0
        }
    })
}

/// Result of peak extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakSelection {
    pub spots: SpotSet,
    /// How many peaks short of `known_count` the heatmap fell.
    pub shortfall: usize,
}

/// Greedy non-maximum suppression over the heatmap's 8-neighbour local maxima.
///
/// Maxima are visited by descending score (ties by row-major position) and
/// kept if at least `nms_radius` from every peak kept so far. With
/// `known_count = k` the first `k` survivors are returned regardless of the
/// threshold; otherwise every survivor scoring at least `peak_threshold · max`.
pub fn nms_peaks(heatmap: &Heatmap, cfg: &DetectorConfig) -> Result<PeakSelection> {
    cfg.validate()?;
    let sensor = &heatmap.sensor;
    let mut kept: Vec<(Vec2, f64)> = Vec::new();
    let r2 = cfg.nms_radius * cfg.nms_radius;
    for (m, n, score) in local_maxima(&heatmap.values) {
        let c = sensor.pixel_center(m, n);
        if kept.iter().all(|(p, _)| dist2(*p, c) >= r2) {
            kept.push((c, score));
        }
    }
    let (selected, shortfall) = match cfg.known_count {
        Some(k) => {
            let shortfall = k.saturating_sub(kept.len());
            kept.truncate(k);
            (kept, shortfall)
        }
        None => {
            let floor = cfg.peak_threshold * heatmap.max();
            kept.retain(|(_, s)| *s >= floor);
            (kept, 0)
        }
    };
    let (centroids, scores) = selected.into_iter().unzip();
    Ok(PeakSelection {
        spots: SpotSet::new(centroids, scores),
        shortfall,
    })
}

/// Positive local maxima as `(m, n, value)`, sorted by descending value.
///
/// On plateaus only the first pixel in row-major order qualifies.
fn local_maxima(h: &Array2<f64>) -> Vec<(usize, usize, f64)> {
    let (ny, nx) = h.dim();
    let mut out = Vec::new();
    for n in 0..ny {
        for m in 0..nx {
            let v = h[[n, m]];
            if !(v > 0.0) {
                continue;
            }
            let mut is_max = true;
            'nb: for dn in -1isize..=1 {
                for dm in -1isize..=1 {
                    if dn == 0 && dm == 0 {
                        continue;
                    }
                    let (j, i) = (n as isize + dn, m as isize + dm);
                    if j < 0 || i < 0 || j as usize >= ny || i as usize >= nx {
                        continue;
                    }
                    let u = h[[j as usize, i as usize]];
                    let earlier = (dn, dm) < (0, 0);
                    if u > v || (earlier && u == v) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                out.push((m, n, v));
            }
        }
    }
    out.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1, a.0).cmp(&(b.1, b.0))));
    out
}

/// Number of peaks the heatmap supports without a known count.
pub fn estimate_count(heatmap: &Heatmap, cfg: &DetectorConfig) -> Result<usize> {
    let free = DetectorConfig {
        known_count: None,
        ..*cfg
    };
    Ok(nms_peaks(heatmap, &free)?.spots.len())
}

/// Result of centroid refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub spots: SpotSet,
    /// Spots whose window held no pixels and were passed through unchanged.
    pub passed_through: Vec<usize>,
}

/// Replaces each peak by the background-subtracted center of mass of the
/// pixels whose centers lie within `window_radius` of it.
///
/// The background is the frame median; negative residuals are ignored. A
/// window with no positive mass leaves the peak where it was.
pub fn refine_subpixel(frame: &Frame, peaks: &SpotSet, window_radius: f64) -> Result<Refinement> {
    let sensor = &frame.sensor;
    let pitch = sensor.pitch[0].min(sensor.pitch[1]);
    if !(window_radius >= pitch) {
        return Err(Error::domain(format!(
            "refinement window {window_radius} m is smaller than the pixel pitch {pitch} m"
        )));
    }
    let background = median(frame.pixels.iter().copied());
    let r2 = window_radius * window_radius;
    let mut spots = peaks.clone();
    let mut passed_through = Vec::new();

    for (i, c) in spots.centroids.iter_mut().enumerate() {
        let m_lo = ((c[0] - window_radius - sensor.origin[0]) / sensor.pitch[0])
            .floor()
            .max(0.0) as usize;
        let m_hi = ((c[0] + window_radius - sensor.origin[0]) / sensor.pitch[0])
            .ceil()
            .min(sensor.nx as f64);
        let n_lo = ((c[1] - window_radius - sensor.origin[1]) / sensor.pitch[1])
            .floor()
            .max(0.0) as usize;
        let n_hi = ((c[1] + window_radius - sensor.origin[1]) / sensor.pitch[1])
            .ceil()
            .min(sensor.ny as f64);
        let (m_hi, n_hi) = (m_hi.max(0.0) as usize, n_hi.max(0.0) as usize);

        let mut inside = 0usize;
        let (mut w, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for n in n_lo..n_hi {
            for m in m_lo..m_hi {
                let p = sensor.pixel_center(m, n);
                if dist2(p, *c) > r2 {
                    continue;
                }
                inside += 1;
                let v = (frame.pixels[[n, m]] - background).max(0.0);
                w += v;
                sx += v * p[0];
                sy += v * p[1];
            }
        }
        if inside == 0 {
            passed_through.push(i);
        } else if w > 0.0 {
            *c = [sx / w, sy / w];
        }
    }
    Ok(Refinement {
        spots,
        passed_through,
    })
}

/// Heatmap, peak selection and refinement in one call.
pub fn detect_spots(frame: &Frame, cfg: &DetectorConfig) -> Result<PeakSelection> {
    let heatmap = matched_filter_heatmap(frame, cfg)?;
    let peaks = nms_peaks(&heatmap, cfg)?;
    let pitch = frame.sensor.pitch[0].max(frame.sensor.pitch[1]);
    let refined = refine_subpixel(frame, &peaks.spots, cfg.refine_radius.max(1.5 * pitch))?;
    Ok(PeakSelection {
        spots: refined.spots,
        shortfall: peaks.shortfall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::deposit_spot;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> SensorConfig {
        SensorConfig::centered(n, n, 0.03, 0.03, 0.03).unwrap()
    }

    fn render(sensor: &SensorConfig, spots: &[Vec2], sigma: f64) -> Frame {
        let mut f = Frame::zeros(*sensor);
        for &c in spots {
            deposit_spot(&mut f.pixels, sensor, c, 1.0, sigma).unwrap();
        }
        f
    }

    /// Global argmax by exhaustive scan, as `(m, n)`.
    fn argmax(a: &Array2<f64>) -> (usize, usize) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for ((n, m), &v) in a.indexed_iter() {
            if v > best.2 {
                best = (m, n, v);
            }
        }
        (best.0, best.1)
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::for_sigma(1e-3).validate().is_ok());
        let bad = DetectorConfig {
            peak_threshold: 1.0,
            ..DetectorConfig::for_sigma(1e-3)
        };
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
        let bad = DetectorConfig {
            sigma_tgt: 0.0,
            ..DetectorConfig::for_sigma(1e-3)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn target_heatmap_cases() {
        let s = grid(64);
        let cfg = DetectorConfig::for_sigma(1e-3);
        let c = s.pixel_center(20, 40);
        let h = build_target_heatmap(&SpotSet::from_points(&[c]), &cfg, &s).unwrap();
        assert_eq!(h.values[[40, 20]], 1.0);
        assert_eq!(argmax(&h.values), (20, 40));
        assert!(h.values.iter().all(|v| (0.0..=1.0).contains(v)));

        let pts = [
            s.pixel_center(5, 5),
            s.pixel_center(30, 12),
            s.pixel_center(50, 60),
        ];
        let a = build_target_heatmap(&SpotSet::from_points(&pts), &cfg, &s).unwrap();
        let b = build_target_heatmap(&SpotSet::from_points(&[pts[2], pts[0], pts[1]]), &cfg, &s)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn target_heatmap_midpoint_of_close_pair() {
        // centers one σ either side of a pixel center: 2·exp(−1/2) > 1 clips to 1
        let s = SensorConfig::centered(65, 65, 0.065, 0.065, 0.03).unwrap();
        let sigma = 2e-3;
        let cfg = DetectorConfig::for_sigma(sigma);
        let mid = s.pixel_center(32, 32);
        let pts = [[mid[0] - sigma, mid[1]], [mid[0] + sigma, mid[1]]];
        let h = build_target_heatmap(&SpotSet::from_points(&pts), &cfg, &s).unwrap();
        assert!(2.0 * (-0.5f64).exp() > 1.0);
        assert_eq!(h.values[[32, 32]], 1.0);

        // wider separation stays below the clip and matches the closed form
        let pts = [
            [mid[0] - 2.0 * sigma, mid[1]],
            [mid[0] + 2.0 * sigma, mid[1]],
        ];
        let h = build_target_heatmap(&SpotSet::from_points(&pts), &cfg, &s).unwrap();
        assert_relative_eq!(
            h.values[[32, 32]],
            2.0 * (-2.0f64).exp(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn matched_filter_peaks_at_spot() {
        let s = grid(64);
        let sigma = 1.2e-3;
        let cfg = DetectorConfig::for_sigma(sigma);
        let truth = [0.0031, -0.0047];
        let h = matched_filter_heatmap(&render(&s, &[truth], sigma), &cfg).unwrap();
        assert_eq!(Some(argmax(&h.values)), s.pixel_of(truth));
        assert_relative_eq!(h.max(), 1.0);
        assert!(h.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_frame_gives_zero_heatmap() {
        let s = grid(32);
        let h = matched_filter_heatmap(&Frame::zeros(s), &DetectorConfig::for_sigma(1e-3)).unwrap();
        assert!(h.values.iter().all(|&v| v == 0.0));
        assert_eq!(
            estimate_count(&h, &DetectorConfig::for_sigma(1e-3)).unwrap(),
            0
        );
    }

    #[test]
    fn matched_filter_is_shift_equivariant() {
        let s = grid(64);
        let sigma = 1e-3;
        let cfg = DetectorConfig::for_sigma(sigma);
        let pitch = s.pitch[0];
        let spots = [[-0.004, 0.002], [0.003, -0.001]];
        let base = matched_filter_heatmap(&render(&s, &spots, sigma), &cfg).unwrap();
        for (dm, dn) in [(1isize, 0isize), (0, 1), (-2, 3)] {
            let moved: Vec<Vec2> = spots
                .iter()
                .map(|p| [p[0] + dm as f64 * pitch, p[1] + dn as f64 * pitch])
                .collect();
            let h = matched_filter_heatmap(&render(&s, &moved, sigma), &cfg).unwrap();
            let expected = base.shifted(dm, dn);
            let margin = (6.0 * sigma / pitch).ceil() as usize + 3;
            for n in margin..64 - margin {
                for m in margin..64 - margin {
                    assert!((h.values[[n, m]] - expected.values[[n, m]]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn two_spots_resolve_at_six_sigma() {
        let s = grid(64);
        let sigma = 1.5e-3;
        let cfg = DetectorConfig::for_sigma(sigma);
        let truths = [[-3.0 * sigma + 1e-4, 0.0007], [3.0 * sigma + 1e-4, 0.0007]];
        let frame = render(&s, &truths, sigma);
        let h = matched_filter_heatmap(&frame, &cfg).unwrap();
        let maxima = local_maxima(&h.values);
        assert_eq!(maxima.len(), 2);
        // brute-force frame maxima agree with heatmap maxima
        let frame_max = local_maxima(&frame.pixels);
        assert_eq!(frame_max.len(), 2);
        for (m, n, _) in maxima {
            let c = s.pixel_center(m, n);
            let near = truths.iter().any(|t| {
                (t[0] - c[0]).abs() <= 0.5 * s.pitch[0] + 1e-12
                    && (t[1] - c[1]).abs() <= 0.5 * s.pitch[1] + 1e-12
            });
            assert!(near, "maximum at {c:?}");
        }
    }

    #[test]
    fn nms_suppression_rules() {
        let s = grid(64);
        let cfg = DetectorConfig::for_sigma(1e-3);
        let mut h = Heatmap {
            values: Array2::zeros((64, 64)),
            sensor: s,
        };
        h.values[[10, 10]] = 1.0;
        h.values[[10, 30]] = 0.8;
        let got = nms_peaks(&h, &cfg).unwrap().spots;
        assert_eq!(got.len(), 2);
        assert_eq!(got.centroids[0], s.pixel_center(10, 10));

        // 3 pixels ≈ 1.4 mm < 2 mm radius
        h.values[[10, 30]] = 0.0;
        h.values[[13, 10]] = 0.8;
        let got = nms_peaks(&h, &cfg).unwrap().spots;
        assert_eq!(got.centroids, vec![s.pixel_center(10, 10)]);
        assert_eq!(estimate_count(&h, &cfg).unwrap(), 1);
    }

    #[test]
    fn nms_known_count_and_shortfall() {
        let s = grid(64);
        let cfg = DetectorConfig {
            known_count: Some(3),
            ..DetectorConfig::for_sigma(1e-3)
        };
        let mut h = Heatmap {
            values: Array2::zeros((64, 64)),
            sensor: s,
        };
        h.values[[10, 10]] = 1.0;
        h.values[[40, 40]] = 0.1;
        let sel = nms_peaks(&h, &cfg).unwrap();
        // the weak peak is kept despite the threshold, one is missing
        assert_eq!(sel.spots.len(), 2);
        assert_eq!(sel.shortfall, 1);

        h.values[[50, 5]] = 0.05;
        h.values[[5, 50]] = 0.04;
        let sel = nms_peaks(&h, &cfg).unwrap();
        assert_eq!(sel.spots.len(), 3);
        assert_eq!(sel.shortfall, 0);
        assert_eq!(sel.spots.scores, vec![1.0, 0.1, 0.05]);
    }

    #[test]
    fn nms_recovers_constructed_peaks() {
        let s = grid(64);
        let cfg = DetectorConfig {
            known_count: Some(7),
            ..DetectorConfig::for_sigma(1e-3)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut pts: Vec<Vec2> = Vec::new();
            while pts.len() < 7 {
                let p = [
                    rng.random_range(-0.013..0.013),
                    rng.random_range(-0.013..0.013),
                ];
                if pts
                    .iter()
                    .all(|q| dist2(*q, p).sqrt() > 6.0 * cfg.sigma_tgt)
                {
                    pts.push(p);
                }
            }
            let h = build_target_heatmap(&SpotSet::from_points(&pts), &cfg, &s).unwrap();
            let got = nms_peaks(&h, &cfg).unwrap().spots;
            assert_eq!(got.len(), 7);
            for p in &pts {
                assert!(got.centroids.iter().any(
                    |c| (c[0] - p[0]).abs() <= s.pitch[0] && (c[1] - p[1]).abs() <= s.pitch[1]
                ));
            }
        }
    }

    #[test]
    fn count_estimation_cases() {
        let s = grid(64);
        let cfg = DetectorConfig {
            peak_threshold: 0.3,
            ..DetectorConfig::for_sigma(1e-3)
        };
        let pts = [
            [-0.01, -0.01],
            [0.01, -0.01],
            [0.0, 0.0],
            [-0.01, 0.01],
            [0.01, 0.01],
        ];
        let h = build_target_heatmap(&SpotSet::from_points(&pts), &cfg, &s).unwrap();
        assert_eq!(estimate_count(&h, &cfg).unwrap(), 5);

        let merged = [[0.0, 0.0], [0.0008, 0.0]];
        let h = build_target_heatmap(&SpotSet::from_points(&merged), &cfg, &s).unwrap();
        assert_eq!(estimate_count(&h, &cfg).unwrap(), 1);
    }

    #[test]
    fn refine_centered_spot_is_unchanged() {
        let s = grid(64);
        let sigma = 1e-3;
        let c = s.pixel_center(25, 37);
        let frame = render(&s, &[c], sigma);
        let r = refine_subpixel(&frame, &SpotSet::from_points(&[c]), 3.0 * sigma).unwrap();
        assert!(r.passed_through.is_empty());
        let got = r.spots.centroids[0];
        assert!((got[0] - c[0]).abs() < 1e-6 && (got[1] - c[1]).abs() < 1e-6);
    }

    #[test]
    fn refine_corner_spot_beats_argmax() {
        let s = grid(64);
        let pitch = s.pitch[0];
        let sigma = pitch;
        let corner = [s.origin[0] + 30.0 * pitch, s.origin[1] + 30.0 * pitch];
        let frame = render(&s, &[corner], sigma);
        let h = matched_filter_heatmap(&frame, &DetectorConfig::for_sigma(sigma)).unwrap();
        let (m, n) = argmax(&h.values);
        let raw = s.pixel_center(m, n);
        assert!(dist2(raw, corner).sqrt() >= 0.5 * pitch);
        let r = refine_subpixel(&frame, &SpotSet::from_points(&[raw]), 3.0 * sigma).unwrap();
        assert!(dist2(r.spots.centroids[0], corner).sqrt() < 0.1 * pitch);
    }

    #[test]
    fn refine_uniform_frame_and_outside_window() {
        let s = grid(32);
        let mut frame = Frame::zeros(s);
        frame.pixels.fill(3.0);
        let c = s.pixel_center(10, 12);
        let r = refine_subpixel(&frame, &SpotSet::from_points(&[c]), 0.004).unwrap();
        assert_eq!(r.spots.centroids[0], c);

        let far = [0.5, 0.5];
        let r = refine_subpixel(&frame, &SpotSet::from_points(&[far]), 0.004).unwrap();
        assert_eq!(r.passed_through, vec![0]);
        assert_eq!(r.spots.centroids[0], far);

        assert!(refine_subpixel(&frame, &SpotSet::from_points(&[c]), 0.1 * s.pitch[0]).is_err());
    }

    #[test]
    fn single_source_error_below_half_pitch() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [10usize, 20, 40, 60, 80, 100] {
            let s = grid(n);
            for _ in 0..20 {
                let sigma = rng.random_range(1e-3..3e-3);
                let lim = 0.015 - 4.0 * sigma;
                let truth = [rng.random_range(-lim..lim), rng.random_range(-lim..lim)];
                let cfg = DetectorConfig {
                    known_count: Some(1),
                    ..DetectorConfig::for_sigma(sigma)
                };
                let got = detect_spots(&render(&s, &[truth], sigma), &cfg)
                    .unwrap()
                    .spots;
                let err = dist2(got.centroids[0], truth).sqrt();
                assert!(err < 0.5 * s.pitch[0], "grid {n}: error {err}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn nms_output_is_separated(seed in any::<u64>(), radius_px in 1.0f64..8.0) {
            let s = grid(48);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = Heatmap {
                values: Array2::from_shape_fn((48, 48), |_| rng.random::<f64>()),
                sensor: s,
            };
            let cfg = DetectorConfig {
                nms_radius: radius_px * s.pitch[0],
                ..DetectorConfig::for_sigma(1e-3)
            };
            let got = nms_peaks(&h, &cfg).unwrap().spots;
            for i in 0..got.len() {
                for j in 0..i {
                    prop_assert!(dist2(got.centroids[i], got.centroids[j]) >= cfg.nms_radius.powi(2));
                }
            }
        }

        #[test]
        fn detection_ignores_transmitter_order(seed in any::<u64>()) {
            let s = grid(64);
            let sigma = 1e-3;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec2> = (0..5).map(|_| [rng.random_range(-0.012..0.012), rng.random_range(-0.012..0.012)]).collect();
            let mut rev = pts.clone();
            rev.reverse();
            let cfg = DetectorConfig::for_sigma(sigma);
            let sort = |mut v: Vec<Vec2>| { v.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))); v };
            let a = detect_spots(&render(&s, &pts, sigma), &cfg).unwrap().spots.centroids;
            let b = detect_spots(&render(&s, &rev, sigma), &cfg).unwrap().spots.centroids;
            prop_assert_eq!(a.len(), b.len());
            for (p, q) in sort(a).iter().zip(sort(b).iter()) {
                prop_assert!(dist2(*p, *q).sqrt() < 1e-12);
            }
        }
    }
}
