//! Radiometric and geometric forward-model primitives.
//!
//! Everything here is a pure function of its inputs; the only randomness is
//! the caller-supplied stream passed to [`sample_turbulence`].

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::Vec2;

/// Minimum ratio `w_z / r_a` for which the lens is treated as uniformly lit.
pub const FLAT_FIELD_MIN_RATIO: f64 = 5.0;

/// Gamma–Gamma turbulence shape parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurbulenceParams {
    /// Effective number of large-scale cells.
    pub alpha: f64,
    /// Effective number of small-scale cells.
    pub beta: f64,
}

impl TurbulenceParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = Self { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("turbulence.alpha", "must be positive"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config("turbulence.beta", "must be positive"));
        }
        Ok(())
    }

    /// Variance of the unit-mean fade, `(1 + 1/α)(1 + 1/β) − 1`.
    pub fn scintillation_index(&self) -> f64 {
        (1.0 + 1.0 / self.alpha) * (1.0 + 1.0 / self.beta) - 1.0
    }
}

impl Default for TurbulenceParams {
    fn default() -> Self {
        Self {
            alpha: 4.0,
            beta: 2.0,
        }
    }
}

/// Monitoring lens and focal-plane blur parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LensConfig {
    /// Lens radius `r_a` in meters.
    pub radius: f64,
    /// Lens transmission `τ_ℓ`.
    pub transmission: f64,
    /// Focal length `f` in meters.
    pub focal_length: f64,
    /// Optical-to-sensor efficiency `η_s`.
    pub sensor_efficiency: f64,
    /// Diffraction-core standard deviation at focus, meters.
    pub sigma_diff0: f64,
    /// Sensor blur standard deviation, meters.
    pub sigma_sens: f64,
}

impl Default for LensConfig {
    fn default() -> Self {
        Self {
            radius: 0.05,
            transmission: 0.9,
            focal_length: 0.03,
            sensor_efficiency: 0.9,
            sigma_diff0: 0.008,
            sigma_sens: 0.0,
        }
    }
}

impl LensConfig {
    /// Aperture diameter `D = 2 r_a`.
    pub fn aperture_diameter(&self) -> f64 {
        2.0 * self.radius
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::config("lens.radius_m", "must be positive"));
        }
        if !(self.transmission > 0.0 && self.transmission <= 1.0) {
            return Err(Error::config("lens.transmission", "must lie in (0, 1]"));
        }
        if !(self.focal_length > 0.0) {
            return Err(Error::config("lens.focal_length_m", "must be positive"));
        }
        if !(self.sensor_efficiency > 0.0 && self.sensor_efficiency <= 1.0) {
            return Err(Error::config(
                "lens.sensor_efficiency",
                "must lie in (0, 1]",
            ));
        }
        if !(self.sigma_diff0 >= 0.0) {
            return Err(Error::config("lens.sigma_diff0_m", "must be non-negative"));
        }
        if !(self.sigma_sens >= 0.0) {
            return Err(Error::config("lens.sigma_sens_m", "must be non-negative"));
        }
        Ok(())
    }
}

/// Ground transmitter seen from the lens at `(0, 0, h_u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub ground_position: Vec2,
    pub altitude: f64,
    /// Slant range `L = sqrt(h_u² + |p|²)`.
    pub link_length: f64,
    /// Per-axis incidence angles `(θ_x, θ_y)`.
    pub angles: Vec2,
    /// Composite incidence magnitude `sqrt(θ_x² + θ_y²)`.
    pub incidence: f64,
}

impl LinkGeometry {
    pub fn new(ground_position: Vec2, altitude: f64) -> Result<Self> {
        if !(altitude > 0.0) {
            return Err(Error::domain("UAV altitude must be positive"));
        }
        let [px, py] = ground_position;
        let link_length = (altitude * altitude + px * px + py * py).sqrt();
        let angles = [(px / altitude).atan(), (py / altitude).atan()];
        let incidence = angles[0].hypot(angles[1]);
        Ok(Self {
            ground_position,
            altitude,
            link_length,
            angles,
            incidence,
        })
    }

    /// Exact polar angle `arccos(h_u / L)` of the line of sight.
    pub fn polar_angle(&self) -> f64 {
        (self.altitude / self.link_length).clamp(-1.0, 1.0).acos()
    }
}

/// Residual interrogator beam parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamParams {
    /// Transmit power `P` in watts.
    pub tx_power: f64,
    /// Gaussian beam radius `w_z` at the lens, meters.
    pub beam_radius: f64,
    /// Mean pointing offset per axis, meters.
    pub jitter_mean: f64,
    /// Pointing offset standard deviation per axis, meters.
    pub jitter_sigma: f64,
    /// Homogeneous attenuation `κ`, per meter.
    pub attenuation: f64,
}

impl Default for BeamParams {
    fn default() -> Self {
        Self {
            tx_power: 1.0,
            beam_radius: 0.6,
            jitter_mean: 0.0,
            jitter_sigma: 0.1,
            attenuation: 0.001,
        }
    }
}

impl BeamParams {
    /// Checks the beam invariants, including flat-field validity against `lens`.
    pub fn validate(&self, lens: &LensConfig) -> Result<()> {
        if !(self.tx_power > 0.0) {
            return Err(Error::config("beam.power_w", "must be positive"));
        }
        if !(self.beam_radius > 0.0) {
            return Err(Error::config("beam.radius_m", "must be positive"));
        }
        if !(self.jitter_sigma >= 0.0) {
            return Err(Error::config("beam.jitter_sigma_m", "must be non-negative"));
        }
        if !(self.attenuation >= 0.0) {
            return Err(Error::config(
                "beam.attenuation_per_m",
                "must be non-negative",
            ));
        }
        if self.beam_radius < FLAT_FIELD_MIN_RATIO * lens.radius {
            return Err(Error::config(
                "beam.radius_m",
                format!(
                    "beam radius {} m is below {}x the lens radius {} m",
                    self.beam_radius, FLAT_FIELD_MIN_RATIO, lens.radius
                ),
            ));
        }
        Ok(())
    }

    /// Peak irradiance `2P / (π w_z²)` of an unfaded, unattenuated beam.
    pub fn peak_irradiance(&self) -> f64 {
        2.0 * self.tx_power / (PI * self.beam_radius * self.beam_radius)
    }
}

/// Draws a unit-mean Gamma–Gamma fade as the product of two independent
/// unit-mean Gamma variates with shapes `α` and `β`.
pub fn sample_turbulence<R: Rng + ?Sized>(params: &TurbulenceParams, rng: &mut R) -> Result<f64> {
    params.validate()?;
    let large = Gamma::new(params.alpha, 1.0 / params.alpha)
        .map_err(|e| Error::config("turbulence.alpha", e.to_string()))?;
    let small = Gamma::new(params.beta, 1.0 / params.beta)
        .map_err(|e| Error::config("turbulence.beta", e.to_string()))?;
    Ok(large.sample(rng) * small.sample(rng))
}

/// Gamma–Gamma probability density of the fade `ρ`.
pub fn turbulence_density(rho: f64, params: &TurbulenceParams) -> Result<f64> {
    params.validate()?;
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::domain(format!(
            "turbulence density needs rho > 0, got {rho}"
        )));
    }
    let (a, b) = (params.alpha, params.beta);
    let half = 0.5 * (a + b);
    let ln_prefactor = std::f64::consts::LN_2 + half * (a * b).ln() - ln_gamma(a) - ln_gamma(b);
    let ln_k = ln_bessel_k(a - b, 2.0 * (a * b * rho).sqrt());
    Ok((ln_prefactor + (half - 1.0) * rho.ln() + ln_k).exp())
}

/// Natural log of the modified Bessel function of the second kind `K_ν(z)`,
/// `z > 0`, from `K_ν(z) = ∫₀^∞ exp(−z cosh t) cosh(νt) dt`.
///
/// The integrand is even, analytic and decays doubly exponentially, so the
/// trapezoid rule converges geometrically in the step size.
pub fn ln_bessel_k(nu: f64, z: f64) -> f64 {
    debug_assert!(z > 0.0);
    const STEP: f64 = 0.02;
    let nu = nu.abs();
    let ln_integrand = |t: f64| {
        let x = nu * t;
        // ln cosh(x) without overflow
        let ln_cosh = x + (-2.0 * x).exp().ln_1p() - std::f64::consts::LN_2;
        -z * t.cosh() + ln_cosh
    };

    let mut terms = Vec::with_capacity(512);
    let mut peak = f64::NEG_INFINITY;
    let mut t = 0.0;
    loop {
        let l = ln_integrand(t);
        peak = peak.max(l);
        terms.push(if t == 0.0 {
            l - std::f64::consts::LN_2
        } else {
            l
        });
        // past the maximum and negligible relative to it
        if l < peak - 60.0 && z * t.sinh() > nu {
            break;
        }
        t += STEP;
    }
    let sum: f64 = terms.iter().map(|&l| (l - peak).exp()).sum();
    peak + (sum * STEP).ln()
}

/// `K_ν(z)`; see [`ln_bessel_k`].
pub fn bessel_k(nu: f64, z: f64) -> f64 {
    ln_bessel_k(nu, z).exp()
}

/// Large-scale path gain `exp(−κL)`.
pub fn path_gain(kappa: f64, link_length: f64) -> Result<f64> {
    if !(kappa >= 0.0) || !(link_length >= 0.0) {
        return Err(Error::domain(format!(
            "path gain needs kappa >= 0 and L >= 0, got kappa={kappa}, L={link_length}"
        )));
    }
    Ok((-kappa * link_length).exp())
}

/// Irradiance (W/m²) of the shifted Gaussian beam at lens-plane point `r`.
pub fn irradiance_at(r: Vec2, beam: &BeamParams, offset: Vec2, fade: f64, gain: f64) -> f64 {
    let dx = r[0] - offset[0];
    let dy = r[1] - offset[1];
    let w2 = beam.beam_radius * beam.beam_radius;
    fade * gain * beam.peak_irradiance() * (-2.0 * (dx * dx + dy * dy) / w2).exp()
}

/// Optical power (W) collected by the lens under the flat-field approximation.
pub fn collected_power(
    beam: &BeamParams,
    geom: &LinkGeometry,
    lens: &LensConfig,
    offset: Vec2,
    fade: f64,
) -> Result<f64> {
    let gain = path_gain(beam.attenuation, geom.link_length)?;
    let flat = irradiance_at([0.0, 0.0], beam, offset, fade, gain);
    let area = PI * lens.radius * lens.radius;
    Ok(lens.transmission * flat * area * geom.incidence.cos())
}

/// Maps incidence angles to a point on the sensor plane at axial distance `z`.
pub fn angle_to_sensor(theta: Vec2, z: f64) -> Result<Vec2> {
    if !(z > 0.0) {
        return Err(Error::domain(format!(
            "sensor distance must be positive, got {z}"
        )));
    }
    if theta.iter().any(|t| !(t.abs() < FRAC_PI_2)) {
        return Err(Error::domain(format!(
            "incidence angles must lie inside (-pi/2, pi/2), got {theta:?}"
        )));
    }
    Ok([z * theta[0].tan(), z * theta[1].tan()])
}

/// Per-axis angular coverage `arctan(X_max / z)` of a sensor with the given half-widths.
pub fn fov_limits(half_widths: Vec2, z: f64) -> Result<Vec2> {
    if !(z > 0.0) || half_widths.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::domain(
            "field-of-view limits need z > 0 and positive half-widths",
        ));
    }
    Ok([(half_widths[0] / z).atan(), (half_widths[1] / z).atan()])
}

/// Standard deviations of the on-sensor spot and its components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurBreakdown {
    /// Geometric defocus disk diameter `d_geo`.
    pub defocus_diameter: f64,
    pub defocus: f64,
    pub diffraction: f64,
    pub sensor: f64,
    /// `sqrt(σ_def² + σ_diff² + σ_sens²)`.
    pub effective: f64,
}

/// Spot blur on a sensor plane at axial distance `z ∈ (0, f]`.
pub fn blur_sigma_eff(lens: &LensConfig, z: f64) -> Result<BlurBreakdown> {
    let f = lens.focal_length;
    if !(z > 0.0 && z <= f) {
        return Err(Error::domain(format!(
            "sensor plane must satisfy 0 < z <= f = {f}, got {z}"
        )));
    }
    let defocus_diameter = 2.0 * lens.radius * (1.0 - z / f).abs();
    let defocus = defocus_diameter / 4.0;
    let diffraction = (z / f) * lens.sigma_diff0;
    let sensor = lens.sigma_sens;
    let effective = (defocus * defocus + diffraction * diffraction + sensor * sensor).sqrt();
    Ok(BlurBreakdown {
        defocus_diameter,
        defocus,
        diffraction,
        sensor,
        effective,
    })
}
