//! Focal-plane pixel grid, per-pixel signal integration and frame synthesis.

mod dataset;
mod scene;

pub use dataset::{
    export_dataset, read_frame, read_ground_truth, synthesize, write_frame, write_ground_truth,
    DatasetConfig, DatasetHandle, GroundTruthRow, FRAME_MAGIC, FRAME_VERSION, GROUND_TRUTH_HEADER,
};
pub use scene::{generate_scene, EavesdropperRule, Scene, SceneConfig, Transmitter};

use std::f64::consts::FRAC_1_SQRT_2;

use libm::erfc;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::optics::{
    angle_to_sensor, blur_sigma_eff, collected_power, sample_turbulence, LensConfig, LinkGeometry,
    TurbulenceParams,
};
use crate::Vec2;

/// Spots are integrated only over pixels within this many σ of their center.
pub const SPOT_CUTOFF_SIGMAS: f64 = 6.0;

/// Rectangular pixel grid on the sensor plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorConfig {
    pub nx: usize,
    pub ny: usize,
    /// Pixel pitch `(Δ_x, Δ_y)`, meters.
    pub pitch: Vec2,
    /// Lower-left corner `(x_min, y_min)`, meters.
    pub origin: Vec2,
    /// Axial distance `z` of the sensor plane from the lens, meters.
    pub plane_z: f64,
}

/// Bounds of one pixel, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRect {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl SensorConfig {
    /// Sensor of `width × height` meters centered on the optical axis.
    pub fn centered(nx: usize, ny: usize, width: f64, height: f64, plane_z: f64) -> Result<Self> {
        if nx == 0 {
            return Err(Error::config("sensor.nx", "must be at least 1"));
        }
        if ny == 0 {
            return Err(Error::config("sensor.ny", "must be at least 1"));
        }
        let s = Self {
            nx,
            ny,
            pitch: [width / nx as f64, height / ny as f64],
            origin: [-0.5 * width, -0.5 * height],
            plane_z,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 {
            return Err(Error::config("sensor.nx", "must be at least 1"));
        }
        if self.ny == 0 {
            return Err(Error::config("sensor.ny", "must be at least 1"));
        }
        if !(self.pitch[0] > 0.0 && self.pitch[1] > 0.0) {
            return Err(Error::config(
                "sensor.width_m",
                "pixel pitch must be positive",
            ));
        }
        if !(self.plane_z > 0.0) {
            return Err(Error::config("sensor.plane_z_m", "must be positive"));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.pitch[0]
    }

    pub fn height(&self) -> f64 {
        self.ny as f64 * self.pitch[1]
    }

    /// `(X_max, Y_max)`.
    pub fn half_widths(&self) -> Vec2 {
        [0.5 * self.width(), 0.5 * self.height()]
    }

    /// Pixel `(m, n)` covers `[x_min + mΔ_x, x_min + (m+1)Δ_x] × [y_min + nΔ_y, y_min + (n+1)Δ_y]`.
    pub fn pixel_bounds(&self, m: usize, n: usize) -> Result<PixelRect> {
        if m >= self.nx || n >= self.ny {
            return Err(Error::Index {
                m,
                n,
                nx: self.nx,
                ny: self.ny,
            });
        }
        Ok(PixelRect {
            x_lo: self.origin[0] + m as f64 * self.pitch[0],
            x_hi: self.origin[0] + (m + 1) as f64 * self.pitch[0],
            y_lo: self.origin[1] + n as f64 * self.pitch[1],
            y_hi: self.origin[1] + (n + 1) as f64 * self.pitch[1],
        })
    }

    pub fn pixel_center(&self, m: usize, n: usize) -> Vec2 {
        [
            self.origin[0] + (m as f64 + 0.5) * self.pitch[0],
            self.origin[1] + (n as f64 + 0.5) * self.pitch[1],
        ]
    }

    /// Pixel containing `p`, if any.
    pub fn pixel_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let fx = ((p[0] - self.origin[0]) / self.pitch[0]).floor();
        let fy = ((p[1] - self.origin[1]) / self.pitch[1]).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p[0] >= self.origin[0]
            && p[0] <= self.origin[0] + self.width()
            && p[1] >= self.origin[1]
            && p[1] <= self.origin[1] + self.height()
    }

    /// Continuous column index range `[lo, hi)` whose pixels intersect `[a, b]` along x.
    fn column_span(&self, a: f64, b: f64) -> (usize, usize) {
        span(a, b, self.origin[0], self.pitch[0], self.nx)
    }

    fn row_span(&self, a: f64, b: f64) -> (usize, usize) {
        span(a, b, self.origin[1], self.pitch[1], self.ny)
    }
}

fn span(a: f64, b: f64, origin: f64, pitch: f64, count: usize) -> (usize, usize) {
    let lo = ((a - origin) / pitch).floor().max(0.0);
    let hi = ((b - origin) / pitch).ceil().min(count as f64);
    if hi <= lo {
        return (0, 0);
    }
    (lo as usize, hi as usize)
}

/// `Φ(b) − Φ(a)` for the standard normal CDF, accurate in both tails.
pub fn normal_interval(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        0.5 * (erfc(a * FRAC_1_SQRT_2) - erfc(b * FRAC_1_SQRT_2))
    } else if b <= 0.0 {
        0.5 * (erfc(-b * FRAC_1_SQRT_2) - erfc(-a * FRAC_1_SQRT_2))
    } else {
        1.0 - 0.5 * erfc(b * FRAC_1_SQRT_2) - 0.5 * erfc(-a * FRAC_1_SQRT_2)
    }
}

/// Energy a circular Gaussian spot deposits in one pixel.
///
/// The spot integrates to `spot_energy` over the whole plane, so summing this
/// over a tiling recovers the collected energy.
pub fn pixel_contribution(
    center: Vec2,
    spot_energy: f64,
    sigma: f64,
    rect: &PixelRect,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::domain(format!(
            "spot sigma must be positive, got {sigma}"
        )));
    }
    let wx = normal_interval(
        (rect.x_lo - center[0]) / sigma,
        (rect.x_hi - center[0]) / sigma,
    );
    let wy = normal_interval(
        (rect.y_lo - center[1]) / sigma,
        (rect.y_hi - center[1]) / sigma,
    );
    Ok(spot_energy * wx * wy)
}

/// Adds one Gaussian spot to `pixels`, skipping pixels beyond [`SPOT_CUTOFF_SIGMAS`].
pub fn deposit_spot(
    pixels: &mut Array2<f64>,
    sensor: &SensorConfig,
    center: Vec2,
    spot_energy: f64,
    sigma: f64,
) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(Error::domain(format!(
            "spot sigma must be positive, got {sigma}"
        )));
    }
    if pixels.dim() != (sensor.ny, sensor.nx) {
        return Err(Error::config(
            "sensor",
            format!(
                "frame is {:?} but sensor is {}x{}",
                pixels.dim(),
                sensor.ny,
                sensor.nx
            ),
        ));
    }
    let reach = SPOT_CUTOFF_SIGMAS * sigma;
    let (m0, m1) = sensor.column_span(center[0] - reach, center[0] + reach);
    let (n0, n1) = sensor.row_span(center[1] - reach, center[1] + reach);
    if m0 == m1 || n0 == n1 {
        return Ok(());
    }
    let edge = |origin: f64, pitch: f64, k: usize| origin + k as f64 * pitch;
    let wx: Vec<f64> = (m0..m1)
        .map(|m| {
            let lo = edge(sensor.origin[0], sensor.pitch[0], m);
            let hi = edge(sensor.origin[0], sensor.pitch[0], m + 1);
            normal_interval((lo - center[0]) / sigma, (hi - center[0]) / sigma)
        })
        .collect();
    for n in n0..n1 {
        let lo = edge(sensor.origin[1], sensor.pitch[1], n);
        let hi = edge(sensor.origin[1], sensor.pitch[1], n + 1);
        let wy = spot_energy * normal_interval((lo - center[1]) / sigma, (hi - center[1]) / sigma);
        let mut row = pixels.row_mut(n);
        for (k, m) in (m0..m1).enumerate() {
            row[m] += wy * wx[k];
        }
    }
    Ok(())
}

/// How the turbulence fade is drawn for each coherence slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fading {
    GammaGamma(TurbulenceParams),
    /// Deterministic fade, e.g. `Fixed(1.0)` for a turbulence-free channel.
    Fixed(f64),
}

/// How the beam-axis pointing offset is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JitterMode {
    /// Fresh offset every coherence slot.
    PerSlot,
    /// One offset per frame, shared by all slots.
    PerFrame,
    /// Offset pinned to the jitter mean.
    Off,
}

/// Integration, coherence and noise settings of one acquisition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionConfig {
    /// Integration time `T_int`, seconds.
    pub t_int: f64,
    /// Channel coherence time `T_coh`, seconds.
    pub t_coh: f64,
    /// Per-pixel measurement noise variance in frame energy units; 0 disables noise.
    pub noise_n0: f64,
    pub fading: Fading,
    pub jitter: JitterMode,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            t_int: 1.0,
            t_coh: 0.01,
            noise_n0: 1e-12,
            fading: Fading::GammaGamma(TurbulenceParams::default()),
            jitter: JitterMode::PerSlot,
        }
    }
}

impl AcquisitionConfig {
    /// Noise-free, turbulence-free, jitter-free acquisition.
    pub fn ideal() -> Self {
        Self {
            noise_n0: 0.0,
            fading: Fading::Fixed(1.0),
            jitter: JitterMode::Off,
            ..Self::default()
        }
    }

    /// Number of independent fading slots `K = round(T_int / T_coh)`.
    pub fn slots(&self) -> usize {
        (self.t_int / self.t_coh).round().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_int > 0.0) {
            return Err(Error::config("acquisition.t_int_s", "must be positive"));
        }
        if !(self.t_coh > 0.0) {
            return Err(Error::config("acquisition.t_coh_s", "must be positive"));
        }
        if !(self.noise_n0 >= 0.0) {
            return Err(Error::config(
                "acquisition.noise_n0",
                "must be non-negative",
            ));
        }
        match self.fading {
            Fading::GammaGamma(p) => p.validate()?,
            Fading::Fixed(rho) if !(rho > 0.0) => {
                return Err(Error::config(
                    "acquisition.fading",
                    "fixed fade must be positive",
                ))
            }
            Fading::Fixed(_) => {}
        }
        Ok(())
    }
}

/// One acquired focal-plane frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// `ny × nx` pixel energies; row index is `n` (y), column index is `m` (x).
    pub pixels: Array2<f64>,
    pub sensor: SensorConfig,
    pub seed: u64,
    pub scene_id: u64,
}

impl Frame {
    pub fn zeros(sensor: SensorConfig) -> Self {
        Self {
            pixels: Array2::zeros((sensor.ny, sensor.nx)),
            sensor,
            seed: 0,
            scene_id: 0,
        }
    }

    pub fn sum(&self) -> f64 {
        self.pixels.sum()
    }
}

/// Where and how wide a transmitter's spot lands on the sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpotGeometry {
    pub geometry: LinkGeometry,
    pub center: Vec2,
    pub sigma: f64,
}

/// Noise-free spot placement of every transmitter in `scene`.
pub fn spot_layout(
    scene: &Scene,
    lens: &LensConfig,
    sensor: &SensorConfig,
) -> Result<Vec<SpotGeometry>> {
    let sigma = blur_sigma_eff(lens, sensor.plane_z)?.effective;
    scene
        .transmitters
        .iter()
        .map(|tx| {
            let geometry = LinkGeometry::new(tx.true_position, scene.altitude)?;
            let center = angle_to_sensor(geometry.angles, sensor.plane_z)?;
            Ok(SpotGeometry {
                geometry,
                center,
                sigma,
            })
        })
        .collect()
}

/// Synthesizes one frame of `scene`.
///
/// Each of the `K` coherence slots draws a fresh fade and (in
/// [`JitterMode::PerSlot`]) a fresh pointing offset per transmitter; the slot
/// frames are averaged and Gaussian noise of variance `N_0` is added once.
/// Spot position and width do not depend on the slot, so averaging the slot
/// energies before depositing is the same as averaging the slot frames.
pub fn render_frame<R: Rng + ?Sized>(
    scene: &Scene,
    lens: &LensConfig,
    sensor: &SensorConfig,
    acq: &AcquisitionConfig,
    rng: &mut R,
) -> Result<Frame> {
    lens.validate()?;
    sensor.validate()?;
    acq.validate()?;
    let layout = spot_layout(scene, lens, sensor)?;
    let energies = slot_averaged_energies(scene, &layout, lens, acq, rng)?;

    let mut frame = Frame::zeros(*sensor);
    frame.scene_id = scene.id;
    for (spot, energy) in layout.iter().zip(&energies) {
        deposit_spot(&mut frame.pixels, sensor, spot.center, *energy, spot.sigma)?;
    }
    if acq.noise_n0 > 0.0 {
        let noise = Normal::new(0.0, acq.noise_n0.sqrt())
            .map_err(|e| Error::config("acquisition.noise_n0", e.to_string()))?;
        frame
            .pixels
            .iter_mut()
            .for_each(|v| *v += noise.sample(rng));
    }
    Ok(frame)
}

/// Slot-averaged spot energy `T_int · η_s · mean_k P_L,k` per transmitter.
fn slot_averaged_energies<R: Rng + ?Sized>(
    scene: &Scene,
    layout: &[SpotGeometry],
    lens: &LensConfig,
    acq: &AcquisitionConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let slots = acq.slots();
    let n = scene.transmitters.len();
    let mut offsets: Vec<Vec2> = Vec::with_capacity(n);
    for tx in &scene.transmitters {
        offsets.push(draw_offset(tx, acq.jitter, rng)?);
    }
    let mut sums = vec![0.0; n];
    for slot in 0..slots {
        for (i, (tx, spot)) in scene.transmitters.iter().zip(layout).enumerate() {
            let fade = match acq.fading {
                Fading::GammaGamma(p) => sample_turbulence(&p, rng)?,
                Fading::Fixed(rho) => rho,
            };
            if acq.jitter == JitterMode::PerSlot && slot > 0 {
                offsets[i] = draw_offset(tx, acq.jitter, rng)?;
            }
            sums[i] += collected_power(&tx.beam, &spot.geometry, lens, offsets[i], fade)?;
        }
    }
    Ok(sums
        .into_iter()
        .map(|s| acq.t_int * lens.sensor_efficiency * s / slots as f64)
        .collect())
}

fn draw_offset<R: Rng + ?Sized>(tx: &Transmitter, mode: JitterMode, rng: &mut R) -> Result<Vec2> {
    let mu = tx.beam.jitter_mean;
    if mode == JitterMode::Off || tx.beam.jitter_sigma == 0.0 {
        return Ok([mu, mu]);
    }
    let normal = Normal::new(mu, tx.beam.jitter_sigma)
        .map_err(|e| Error::config("beam.jitter_sigma_m", e.to_string()))?;
    Ok([normal.sample(rng), normal.sample(rng)])
}
