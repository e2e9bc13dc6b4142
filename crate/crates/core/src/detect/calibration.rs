use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::SpotSet;
use crate::error::{Error, Result};
use crate::Vec2;

pub const CALIBRATION_HEADER: &str = "term,coef_x,coef_y";
pub const CALIBRATION_TERMS: [&str; 10] =
    ["1", "x", "y", "x2", "xy", "y2", "x3", "x2y", "xy2", "y3"];

/// Samples required per coefficient.
const SAMPLES_PER_TERM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitStats {
    pub samples: usize,
    /// Root-mean-square Euclidean residual on the training pairs, meters.
    pub residual_rms: f64,
    pub residual_max: f64,
}

/// Cubic polynomial correction `raw centroid → true sensor point`, one per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationModel {
    pub coef_x: [f64; 10],
    pub coef_y: [f64; 10],
    pub stats: Option<FitStats>,
}

fn features(p: Vec2) -> [f64; 10] {
    let [x, y] = p;
    [
        1.0,
        x,
        y,
        x * x,
        x * y,
        y * y,
        x * x * x,
        x * x * y,
        x * y * y,
        y * y * y,
    ]
}

impl CalibrationModel {
    pub fn identity() -> Self {
        let mut coef_x = [0.0; 10];
        let mut coef_y = [0.0; 10];
        coef_x[1] = 1.0;
        coef_y[2] = 1.0;
        Self {
            coef_x,
            coef_y,
            stats: None,
        }
    }

    pub fn is_identity(&self) -> bool {
        let id = Self::identity();
        self.coef_x == id.coef_x && self.coef_y == id.coef_y
    }

    pub fn apply(&self, p: Vec2) -> Vec2 {
        let f = features(p);
        let dot = |c: &[f64; 10]| c.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>();
        [dot(&self.coef_x), dot(&self.coef_y)]
    }

    /// CSV with one row per term; floats use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CALIBRATION_HEADER}").unwrap();
        for (i, term) in CALIBRATION_TERMS.iter().enumerate() {
            writeln!(s, "{term},{:?},{:?}", self.coef_x[i], self.coef_y[i]).unwrap();
        }
        s
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CALIBRATION_HEADER) {
            return Err(bad(format!("expected header `{CALIBRATION_HEADER}`")));
        }
        let mut model = Self {
            coef_x: [0.0; 10],
            coef_y: [0.0; 10],
            stats: None,
        };
        let mut seen = [false; 10];
        for (no, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != 3 {
                return Err(bad(format!("line {}: expected 3 fields", no + 2)));
            }
            let idx = CALIBRATION_TERMS
                .iter()
                .position(|t| *t == fields[0])
                .ok_or_else(|| bad(format!("line {}: unknown term `{}`", no + 2, fields[0])))?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| bad(format!("line {}: {e}", no + 2)))
            };
            model.coef_x[idx] = parse(fields[1])?;
            model.coef_y[idx] = parse(fields[2])?;
            seen[idx] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(bad(format!(
                "missing term `{}`",
                CALIBRATION_TERMS[missing]
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }
}

/// Least-squares fit on `(raw centroid, true sensor point)` pairs.
///
/// Columns are scaled to unit norm before an SVD solve so the cubic terms of
/// millimetre-sized coordinates stay well conditioned.
pub fn fit_calibration(pairs: &[(Vec2, Vec2)]) -> Result<CalibrationModel> {
    let terms = CALIBRATION_TERMS.len();
    if pairs.len() < SAMPLES_PER_TERM * terms {
        return Err(Error::Fit(format!(
            "{} samples for {terms} coefficients; need at least {}",
            pairs.len(),
            SAMPLES_PER_TERM * terms
        )));
    }
    let n = pairs.len();
    let mut a = DMatrix::from_fn(n, terms, |i, j| features(pairs[i].0)[j]);
    let mut scale = vec![0.0; terms];
    for (j, s) in scale.iter_mut().enumerate() {
        *s = a.column(j).norm();
        if !(*s > 0.0 && s.is_finite()) {
            return Err(Error::Fit(format!(
                "term `{}` is identically zero",
                CALIBRATION_TERMS[j]
            )));
        }
        a.column_mut(j).scale_mut(1.0 / *s);
    }
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-10 * smax) {
        return Err(Error::Fit(format!(
            "design matrix is rank deficient (singular values {smin:e} / {smax:e})"
        )));
    }
    let solve = |axis: usize| -> Result<[f64; 10]> {
        let b = DVector::from_fn(n, |i, _| pairs[i].1[axis]);
        let sol = svd.solve(&b, 0.0).map_err(|e| Error::Fit(e.to_string()))?;
        let mut c = [0.0; 10];
        for j in 0..terms {
            c[j] = sol[j] / scale[j];
        }
        Ok(c)
    };
    let mut model = CalibrationModel {
        coef_x: solve(0)?,
        coef_y: solve(1)?,
        stats: None,
    };
    let (mut sum, mut max) = (0.0f64, 0.0f64);
    for (raw, truth) in pairs {
        let p = model.apply(*raw);
        let r2 = crate::dist2(p, *truth);
        sum += r2;
        max = max.max(r2.sqrt());
    }
    model.stats = Some(FitStats {
        samples: n,
        residual_rms: (sum / n as f64).sqrt(),
        residual_max: max,
    });
    Ok(model)
}

/// Corrects every centroid; scores and covariances are kept.
pub fn apply_calibration(model: &CalibrationModel, spots: &SpotSet) -> SpotSet {
    SpotSet {
        centroids: spots.centroids.iter().map(|&c| model.apply(c)).collect(),
        scores: spots.scores.clone(),
        covariances: spots.covariances.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points(seed: u64, n: usize) -> Vec<Vec2> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-0.015..0.015),
                    rng.random_range(-0.015..0.015),
                ]
            })
            .collect()
    }

    #[test]
    fn identity_data_gives_identity_model() {
        let pairs: Vec<(Vec2, Vec2)> = points(1, 200).into_iter().map(|p| (p, p)).collect();
        let m = fit_calibration(&pairs).unwrap();
        assert!(m.stats.unwrap().residual_rms < 1e-10);
        let id = CalibrationModel::identity();
        for (a, b) in m
            .coef_x
            .iter()
            .zip(&id.coef_x)
            .chain(m.coef_y.iter().zip(&id.coef_y))
        {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        let spots = SpotSet::from_points(&points(2, 5)).with_isotropic_covariance(1e-3);
        assert_eq!(
            apply_calibration(&CalibrationModel::identity(), &spots),
            spots
        );
    }

    #[test]
    fn constant_offset_is_recovered() {
        let off = [0.001, -0.002];
        let pairs: Vec<(Vec2, Vec2)> = points(3, 300)
            .into_iter()
            .map(|t| ([t[0] + off[0], t[1] + off[1]], t))
            .collect();
        let m = fit_calibration(&pairs).unwrap();
        // the correction subtracts the offset: constant term ≈ −offset
        assert_relative_eq!(m.coef_x[0], -off[0], max_relative = 0.01);
        assert_relative_eq!(m.coef_y[0], -off[1], max_relative = 0.01);
        let raw: Vec<Vec2> = points(4, 20)
            .iter()
            .map(|t| [t[0] + off[0], t[1] + off[1]])
            .collect();
        let fixed = apply_calibration(&m, &SpotSet::from_points(&raw));
        for (c, r) in fixed.centroids.iter().zip(&raw) {
            assert!((c[0] - (r[0] - off[0])).abs() < 1e-10);
            assert!((c[1] - (r[1] - off[1])).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_gain_is_recovered() {
        let pairs: Vec<(Vec2, Vec2)> = points(5, 300)
            .into_iter()
            .map(|t| ([1.05 * t[0], 1.05 * t[1]], t))
            .collect();
        let m = fit_calibration(&pairs).unwrap();
        assert_relative_eq!(m.coef_x[1], 1.0 / 1.05, max_relative = 0.01);
        assert_relative_eq!(m.coef_y[2], 1.0 / 1.05, max_relative = 0.01);
    }

    #[test]
    fn degenerate_designs_are_rejected() {
        let few: Vec<(Vec2, Vec2)> = points(6, 50).into_iter().map(|p| (p, p)).collect();
        assert!(matches!(fit_calibration(&few), Err(Error::Fit(_))));
        let line: Vec<(Vec2, Vec2)> = (0..200)
            .map(|i| {
                let t = i as f64 * 1e-4 - 0.01;
                ([t, 2.0 * t], [t, 2.0 * t])
            })
            .collect();
        assert!(matches!(fit_calibration(&line), Err(Error::Fit(_))));
    }

    #[test]
    fn training_mse_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let pairs: Vec<(Vec2, Vec2)> = points(rng.random(), 150)
                .into_iter()
                .map(|t| {
                    let noise = [rng.random_range(-1e-4..1e-4), rng.random_range(-1e-4..1e-4)];
                    ([t[0] + 0.02 * t[0] * t[0] + noise[0], t[1] + noise[1]], t)
                })
                .collect();
            let m = fit_calibration(&pairs).unwrap();
            let raw: f64 =
                pairs.iter().map(|(r, t)| crate::dist2(*r, *t)).sum::<f64>() / pairs.len() as f64;
            let cal = m.stats.unwrap().residual_rms.powi(2);
            assert!(cal <= raw + 1e-9);
        }
    }

    #[test]
    fn csv_round_trip() {
        let pairs: Vec<(Vec2, Vec2)> = points(8, 200)
            .into_iter()
            .map(|t| ([t[0] * 1.01 + 3e-4, t[1] - 0.5 * t[0] * t[1]], t))
            .collect();
        let m = fit_calibration(&pairs).unwrap();
        let text = m.to_csv();
        assert!(text.starts_with("term,coef_x,coef_y\n1,"));
        let back = CalibrationModel::from_csv(&text, Path::new("mem")).unwrap();
        assert_eq!(back.coef_x, m.coef_x);
        assert_eq!(back.coef_y, m.coef_y);
        for p in points(9, 10) {
            assert_eq!(back.apply(p), m.apply(p));
        }
        assert!(
            CalibrationModel::from_csv("term,coef_x,coef_y\n1,0,0\n", Path::new("mem")).is_err()
        );
        assert!(CalibrationModel::from_csv("a,b\n", Path::new("mem")).is_err());
    }
}
