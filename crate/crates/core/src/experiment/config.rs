use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::assign::Metric;
use crate::detect::DetectorConfig;
use crate::error::{Error, Result};
use crate::optics::{blur_sigma_eff, BeamParams, LensConfig, TurbulenceParams};
use crate::sensor::{
    AcquisitionConfig, DatasetConfig, EavesdropperRule, Fading, JitterMode, SceneConfig,
    SensorConfig,
};

/// Every accepted key, in canonical output order.
pub const CONFIG_KEYS: &[&str] = &[
    "run.seed",
    "run.trials",
    "run.array_sizes",
    "run.max_failure_rate",
    "output.dir",
    "output.trials_csv",
    "output.emit_frames",
    "output.timing",
    "scene.altitude_m",
    "scene.area_m",
    "scene.counts",
    "scene.eavesdropper_fraction",
    "scene.eavesdropper_count",
    "scene.claim_noise_m",
    "scene.min_separation_m",
    "beam.power_w",
    "beam.radius_m",
    "beam.jitter_mean_m",
    "beam.jitter_sigma_m",
    "beam.attenuation_per_m",
    "lens.radius_m",
    "lens.transmission",
    "lens.focal_length_m",
    "lens.sensor_efficiency",
    "lens.sigma_diff0_m",
    "lens.sigma_sens_m",
    "sensor.nx",
    "sensor.ny",
    "sensor.width_m",
    "sensor.height_m",
    "sensor.plane_z_m",
    "acquisition.t_int_s",
    "acquisition.t_coh_s",
    "acquisition.noise_n0",
    "acquisition.fading",
    "acquisition.fixed_fade",
    "acquisition.jitter",
    "turbulence.alpha",
    "turbulence.beta",
    "detector.sigma_tgt_m",
    "detector.nms_radius_m",
    "detector.peak_threshold",
    "detector.count_mode",
    "detector.refine_radius_m",
    "assign.metric",
    "assign.c_max_m",
    "anomaly.gate_m",
    "calibration.model",
    "calibration.training_frames",
    "calibration.holdout_frames",
];

/// Whether the detector is told how many transmitters a frame holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountMode {
    /// Take the top-N peaks with N from the scene.
    Known,
    /// Keep every peak above the threshold.
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FadingMode {
    GammaGamma,
    Fixed,
}

/// Detector settings whose defaults follow the rendered blur.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorSettings {
    pub sigma_tgt: Option<f64>,
    pub nms_radius: Option<f64>,
    pub peak_threshold: f64,
    pub count_mode: CountMode,
    pub refine_radius: Option<f64>,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            sigma_tgt: None,
            nms_radius: None,
            peak_threshold: 0.25,
            count_mode: CountMode::Estimate,
            refine_radius: None,
        }
    }
}

impl DetectorSettings {
    /// Concrete detector for spots of width `sigma_eff` and, in known-count mode, `n_true` sources.
    pub fn resolve(&self, sigma_eff: f64, n_true: usize) -> DetectorConfig {
        let base = DetectorConfig::for_sigma(self.sigma_tgt.unwrap_or(sigma_eff));
        DetectorConfig {
            nms_radius: self.nms_radius.unwrap_or(2.0 * sigma_eff),
            peak_threshold: self.peak_threshold,
            known_count: (self.count_mode == CountMode::Known).then_some(n_true),
            refine_radius: self.refine_radius.unwrap_or(3.0 * sigma_eff),
            ..base
        }
    }
}

/// Sensor dimensions; the pixel count is overridden per array size in sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSettings {
    pub nx: usize,
    pub ny: usize,
    pub width: f64,
    pub height: f64,
    /// Axial plane position; the focal length when unset.
    pub plane_z: Option<f64>,
}

impl Default for SensorSettings {
    fn default() -> Self {
        Self {
            nx: 64,
            ny: 64,
            width: 0.03,
            height: 0.03,
            plane_z: None,
        }
    }
}

/// Everything one experiment needs. An empty file yields these defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub array_sizes: Vec<usize>,
    /// Sweeps fail (exit code 3) when more than this fraction of trials fail.
    pub max_failure_rate: f64,
    pub out_dir: PathBuf,
    pub trials_csv: bool,
    pub emit_frames: bool,
    /// Fill the `runtime_ms` column with wall-clock times (breaks byte-for-byte reproducibility).
    pub timing: bool,
    pub scene: SceneConfig,
    pub lens: LensConfig,
    pub sensor: SensorSettings,
    pub t_int: f64,
    pub t_coh: f64,
    pub noise_n0: f64,
    pub fading: FadingMode,
    pub fixed_fade: f64,
    pub jitter: JitterMode,
    pub turbulence: TurbulenceParams,
    pub detector: DetectorSettings,
    pub metric: Metric,
    /// Ground-plane dummy cost for truth matching; `3 · nms_radius` projected to ground when unset.
    pub c_max: Option<f64>,
    /// Anomaly gate radius; `max(2 m, 3·sqrt(MSE))` per array size when unset.
    pub gate: Option<f64>,
    pub calibration_model: Option<PathBuf>,
    pub calibration_frames: usize,
    pub holdout_frames: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let acq = AcquisitionConfig::default();
        Self {
            seed: 1,
            trials: 200,
            array_sizes: vec![10, 20, 40, 60, 80, 100],
            max_failure_rate: 0.01,
            out_dir: PathBuf::from("out"),
            trials_csv: true,
            emit_frames: false,
            timing: false,
            scene: SceneConfig::default(),
            lens: LensConfig::default(),
            sensor: SensorSettings::default(),
            t_int: acq.t_int,
            t_coh: acq.t_coh,
            noise_n0: acq.noise_n0,
            fading: FadingMode::GammaGamma,
            fixed_fade: 1.0,
            jitter: acq.jitter,
            turbulence: TurbulenceParams::default(),
            detector: DetectorSettings::default(),
            metric: Metric::Euclidean,
            c_max: None,
            gate: None,
            calibration_model: None,
            calibration_frames: 200,
            holdout_frames: 100,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses `key = value` lines; `#` starts a comment, lists are comma-separated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                reason: format!("expected `key = value`, found `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !CONFIG_KEYS.contains(&key) {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!("unknown key `{key}`"),
                });
            }
            if value.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!("missing value for `{key}`"),
                });
            }
            if let Some((first, _)) = map.insert(key.to_string(), (line_no, value.to_string())) {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!("`{key}` already set on line {first}"),
                });
            }
        }
        let cfg = Self::from_map(&Values(map))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_map(v: &Values) -> Result<Self> {
        let d = Self::default();
        let fraction = v.get::<f64>("scene.eavesdropper_fraction")?;
        let count = v.get::<usize>("scene.eavesdropper_count")?;
        let eavesdroppers = match (fraction, count) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "scene.eavesdropper_count",
                    "set either scene.eavesdropper_fraction or scene.eavesdropper_count",
                ))
            }
            (_, Some(k)) => EavesdropperRule::Count(k),
            (Some(f), None) => EavesdropperRule::Fraction(f),
            (None, None) => d.scene.eavesdroppers,
        };
        let side = v.list::<f64>("scene.area_m")?;
        let area = match side.as_deref() {
            None => [
                d.scene.area_half_widths[0] * 2.0,
                d.scene.area_half_widths[1] * 2.0,
            ],
            Some([s]) => [*s, *s],
            Some([sx, sy]) => [*sx, *sy],
            Some(_) => {
                return Err(Error::config(
                    "scene.area_m",
                    "expected one or two side lengths",
                ))
            }
        };
        let beam = BeamParams {
            tx_power: v.get("beam.power_w")?.unwrap_or(d.scene.beam.tx_power),
            beam_radius: v.get("beam.radius_m")?.unwrap_or(d.scene.beam.beam_radius),
            jitter_mean: v
                .get("beam.jitter_mean_m")?
                .unwrap_or(d.scene.beam.jitter_mean),
            jitter_sigma: v
                .get("beam.jitter_sigma_m")?
                .unwrap_or(d.scene.beam.jitter_sigma),
            attenuation: v
                .get("beam.attenuation_per_m")?
                .unwrap_or(d.scene.beam.attenuation),
        };
        Ok(Self {
            seed: v.get("run.seed")?.unwrap_or(d.seed),
            trials: v.get("run.trials")?.unwrap_or(d.trials),
            array_sizes: v.list("run.array_sizes")?.unwrap_or(d.array_sizes),
            max_failure_rate: v.get("run.max_failure_rate")?.unwrap_or(d.max_failure_rate),
            out_dir: v.get::<PathBuf>("output.dir")?.unwrap_or(d.out_dir),
            trials_csv: v.get("output.trials_csv")?.unwrap_or(d.trials_csv),
            emit_frames: v.get("output.emit_frames")?.unwrap_or(d.emit_frames),
            timing: v.get("output.timing")?.unwrap_or(d.timing),
            scene: SceneConfig {
                counts: v.list("scene.counts")?.unwrap_or(d.scene.counts),
                eavesdroppers,
                area_half_widths: [0.5 * area[0], 0.5 * area[1]],
                altitude: v.get("scene.altitude_m")?.unwrap_or(d.scene.altitude),
                beam,
                claim_noise: v.get("scene.claim_noise_m")?.unwrap_or(d.scene.claim_noise),
                min_separation: v
                    .get("scene.min_separation_m")?
                    .unwrap_or(d.scene.min_separation),
            },
            lens: LensConfig {
                radius: v.get("lens.radius_m")?.unwrap_or(d.lens.radius),
                transmission: v.get("lens.transmission")?.unwrap_or(d.lens.transmission),
                focal_length: v.get("lens.focal_length_m")?.unwrap_or(d.lens.focal_length),
                sensor_efficiency: v
                    .get("lens.sensor_efficiency")?
                    .unwrap_or(d.lens.sensor_efficiency),
                sigma_diff0: v.get("lens.sigma_diff0_m")?.unwrap_or(d.lens.sigma_diff0),
                sigma_sens: v.get("lens.sigma_sens_m")?.unwrap_or(d.lens.sigma_sens),
            },
            sensor: SensorSettings {
                nx: v.get("sensor.nx")?.unwrap_or(d.sensor.nx),
                ny: v.get("sensor.ny")?.unwrap_or(d.sensor.ny),
                width: v.get("sensor.width_m")?.unwrap_or(d.sensor.width),
                height: v.get("sensor.height_m")?.unwrap_or(d.sensor.height),
                plane_z: v.get("sensor.plane_z_m")?,
            },
            t_int: v.get("acquisition.t_int_s")?.unwrap_or(d.t_int),
            t_coh: v.get("acquisition.t_coh_s")?.unwrap_or(d.t_coh),
            noise_n0: v.get("acquisition.noise_n0")?.unwrap_or(d.noise_n0),
            fading: v
                .get::<Named<FadingMode>>("acquisition.fading")?
                .map_or(d.fading, |n| n.0),
            fixed_fade: v.get("acquisition.fixed_fade")?.unwrap_or(d.fixed_fade),
            jitter: v
                .get::<Named<JitterMode>>("acquisition.jitter")?
                .map_or(d.jitter, |n| n.0),
            turbulence: TurbulenceParams {
                alpha: v.get("turbulence.alpha")?.unwrap_or(d.turbulence.alpha),
                beta: v.get("turbulence.beta")?.unwrap_or(d.turbulence.beta),
            },
            detector: DetectorSettings {
                sigma_tgt: v.get("detector.sigma_tgt_m")?,
                nms_radius: v.get("detector.nms_radius_m")?,
                peak_threshold: v
                    .get("detector.peak_threshold")?
                    .unwrap_or(d.detector.peak_threshold),
                count_mode: v
                    .get::<Named<CountMode>>("detector.count_mode")?
                    .map_or(d.detector.count_mode, |n| n.0),
                refine_radius: v.get("detector.refine_radius_m")?,
            },
            metric: v
                .get::<Named<Metric>>("assign.metric")?
                .map_or(d.metric, |n| n.0),
            c_max: v.get("assign.c_max_m")?,
            gate: v.get("anomaly.gate_m")?,
            calibration_model: v.get("calibration.model")?,
            calibration_frames: v
                .get("calibration.training_frames")?
                .unwrap_or(d.calibration_frames),
            holdout_frames: v
                .get("calibration.holdout_frames")?
                .unwrap_or(d.holdout_frames),
        })
    }

    /// Canonical text form: every set key in [`CONFIG_KEYS`] order.
    pub fn to_canonical_string(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let f = |x: f64| format!("{x:?}");
        let mut pairs: Vec<(&str, String)> = vec![
            ("run.seed", self.seed.to_string()),
            ("run.trials", self.trials.to_string()),
            ("run.array_sizes", join(&self.array_sizes)),
            ("run.max_failure_rate", f(self.max_failure_rate)),
            ("output.dir", self.out_dir.display().to_string()),
            ("output.trials_csv", self.trials_csv.to_string()),
            ("output.emit_frames", self.emit_frames.to_string()),
            ("output.timing", self.timing.to_string()),
            ("scene.altitude_m", f(self.scene.altitude)),
            (
                "scene.area_m",
                format!(
                    "{},{}",
                    f(2.0 * self.scene.area_half_widths[0]),
                    f(2.0 * self.scene.area_half_widths[1])
                ),
            ),
            ("scene.counts", join(&self.scene.counts)),
        ];
        match self.scene.eavesdroppers {
            EavesdropperRule::Fraction(x) => pairs.push(("scene.eavesdropper_fraction", f(x))),
            EavesdropperRule::Count(k) => pairs.push(("scene.eavesdropper_count", k.to_string())),
        }
        let b = &self.scene.beam;
        pairs.extend([
            ("scene.claim_noise_m", f(self.scene.claim_noise)),
            ("scene.min_separation_m", f(self.scene.min_separation)),
            ("beam.power_w", f(b.tx_power)),
            ("beam.radius_m", f(b.beam_radius)),
            ("beam.jitter_mean_m", f(b.jitter_mean)),
            ("beam.jitter_sigma_m", f(b.jitter_sigma)),
            ("beam.attenuation_per_m", f(b.attenuation)),
            ("lens.radius_m", f(self.lens.radius)),
            ("lens.transmission", f(self.lens.transmission)),
            ("lens.focal_length_m", f(self.lens.focal_length)),
            ("lens.sensor_efficiency", f(self.lens.sensor_efficiency)),
            ("lens.sigma_diff0_m", f(self.lens.sigma_diff0)),
            ("lens.sigma_sens_m", f(self.lens.sigma_sens)),
            ("sensor.nx", self.sensor.nx.to_string()),
            ("sensor.ny", self.sensor.ny.to_string()),
            ("sensor.width_m", f(self.sensor.width)),
            ("sensor.height_m", f(self.sensor.height)),
        ]);
        if let Some(z) = self.sensor.plane_z {
            pairs.push(("sensor.plane_z_m", f(z)));
        }
        pairs.extend([
            ("acquisition.t_int_s", f(self.t_int)),
            ("acquisition.t_coh_s", f(self.t_coh)),
            ("acquisition.noise_n0", f(self.noise_n0)),
            ("acquisition.fading", Named(self.fading).to_string()),
            ("acquisition.fixed_fade", f(self.fixed_fade)),
            ("acquisition.jitter", Named(self.jitter).to_string()),
            ("turbulence.alpha", f(self.turbulence.alpha)),
            ("turbulence.beta", f(self.turbulence.beta)),
        ]);
        let det = &self.detector;
        if let Some(x) = det.sigma_tgt {
            pairs.push(("detector.sigma_tgt_m", f(x)));
        }
        if let Some(x) = det.nms_radius {
            pairs.push(("detector.nms_radius_m", f(x)));
        }
        pairs.push(("detector.peak_threshold", f(det.peak_threshold)));
        pairs.push(("detector.count_mode", Named(det.count_mode).to_string()));
        if let Some(x) = det.refine_radius {
            pairs.push(("detector.refine_radius_m", f(x)));
        }
        pairs.push(("assign.metric", Named(self.metric).to_string()));
        if let Some(x) = self.c_max {
            pairs.push(("assign.c_max_m", f(x)));
        }
        if let Some(x) = self.gate {
            pairs.push(("anomaly.gate_m", f(x)));
        }
        if let Some(p) = &self.calibration_model {
            pairs.push(("calibration.model", p.display().to_string()));
        }
        pairs.push((
            "calibration.training_frames",
            self.calibration_frames.to_string(),
        ));
        pairs.push((
            "calibration.holdout_frames",
            self.holdout_frames.to_string(),
        ));

        pairs.sort_by_key(|(k, _)| CONFIG_KEYS.iter().position(|c| c == k));
        let mut out = String::new();
        for (k, v) in pairs {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("run.trials", "must be at least 1"));
        }
        if self.array_sizes.is_empty() || self.array_sizes.iter().any(|&n| n < 2) {
            return Err(Error::config(
                "run.array_sizes",
                "every array size must be at least 2",
            ));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(Error::config("run.max_failure_rate", "must lie in [0, 1]"));
        }
        self.scene.validate()?;
        self.lens.validate()?;
        self.scene.beam.validate(&self.lens)?;
        self.sensor_config(self.sensor.nx, self.sensor.ny)?;
        self.acquisition().validate()?;
        self.sigma_eff()?;
        if !(self.fixed_fade > 0.0) {
            return Err(Error::config("acquisition.fixed_fade", "must be positive"));
        }
        let positive = |key: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(Error::config(key, "must be positive")),
            _ => Ok(()),
        };
        positive("detector.sigma_tgt_m", self.detector.sigma_tgt)?;
        positive("detector.nms_radius_m", self.detector.nms_radius)?;
        positive("detector.refine_radius_m", self.detector.refine_radius)?;
        positive("assign.c_max_m", self.c_max)?;
        positive("anomaly.gate_m", self.gate)?;
        self.detector.resolve(self.sigma_eff()?, 1).validate()?;
        if self.calibration_frames == 0 {
            return Err(Error::config(
                "calibration.training_frames",
                "must be at least 1",
            ));
        }
        if self.holdout_frames == 0 {
            return Err(Error::config(
                "calibration.holdout_frames",
                "must be at least 1",
            ));
        }
        Ok(())
    }

    pub fn plane_z(&self) -> f64 {
        self.sensor.plane_z.unwrap_or(self.lens.focal_length)
    }

    pub fn sensor_config(&self, nx: usize, ny: usize) -> Result<SensorConfig> {
        if !(self.sensor.width > 0.0) {
            return Err(Error::config("sensor.width_m", "must be positive"));
        }
        if !(self.sensor.height > 0.0) {
            return Err(Error::config("sensor.height_m", "must be positive"));
        }
        SensorConfig::centered(
            nx,
            ny,
            self.sensor.width,
            self.sensor.height,
            self.plane_z(),
        )
    }

    pub fn acquisition(&self) -> AcquisitionConfig {
        AcquisitionConfig {
            t_int: self.t_int,
            t_coh: self.t_coh,
            noise_n0: self.noise_n0,
            fading: match self.fading {
                FadingMode::GammaGamma => Fading::GammaGamma(self.turbulence),
                FadingMode::Fixed => Fading::Fixed(self.fixed_fade),
            },
            jitter: self.jitter,
        }
    }

    /// Effective spot blur at the configured sensor plane, meters.
    pub fn sigma_eff(&self) -> Result<f64> {
        blur_sigma_eff(&self.lens, self.plane_z())
            .map(|b| b.effective)
            .map_err(|e| Error::config("sensor.plane_z_m", e.to_string()))
    }

    /// Frame-synthesis settings at the configured sensor size.
    pub fn dataset_config(&self) -> Result<DatasetConfig> {
        Ok(DatasetConfig {
            scene: self.scene.clone(),
            lens: self.lens,
            sensor: self.sensor_config(self.sensor.nx, self.sensor.ny)?,
            acquisition: self.acquisition(),
        })
    }

    /// Meters on the ground per meter on the sensor.
    pub fn ground_scale(&self) -> f64 {
        self.scene.altitude / self.plane_z()
    }
}

struct Values(BTreeMap<String, (usize, String)>);

impl Values {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some((line, raw)) => raw.parse::<T>().map(Some).map_err(|e| Error::Parse {
                line: *line,
                reason: format!("`{key}`: {e}"),
            }),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some((line, raw)) => raw
                .split(',')
                .map(|s| {
                    s.trim().parse::<T>().map_err(|e| Error::Parse {
                        line: *line,
                        reason: format!("`{key}`: {e}"),
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }
}

/// Text names for the enum-valued keys.
struct Named<T>(T);

macro_rules! named {
    ($t:ty, $($v:expr => $s:literal),+) => {
        impl FromStr for Named<$t> {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($s => Ok(Named($v)),)+
                    _ => Err(format!("expected one of {}, found `{s}`", [$($s),+].join(", "))),
                }
            }
        }
        impl std::fmt::Display for Named<$t> {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                #[allow(unreachable_patterns)]
                let s = match self.0 {
                    $(v if v == $v => $s,)+
                    _ => unreachable!(),
                };
                f.write_str(s)
            }
        }
    };
}

named!(FadingMode, FadingMode::GammaGamma => "gamma-gamma", FadingMode::Fixed => "fixed");
named!(JitterMode, JitterMode::PerSlot => "per-slot", JitterMode::PerFrame => "per-frame", JitterMode::Off => "off");
named!(CountMode, CountMode::Known => "known", CountMode::Estimate => "estimate");
named!(Metric, Metric::Euclidean => "euclidean", Metric::Mahalanobis => "mahalanobis");

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.parse::<Named<Metric>>().map(|n| n.0)
    }
}

impl FromStr for CountMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.parse::<Named<CountMode>>().map(|n| n.0)
    }
}
