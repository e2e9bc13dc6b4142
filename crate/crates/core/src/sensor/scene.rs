use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::optics::BeamParams;
use crate::{dist2, Vec2};

/// A ground transmitter, legitimate user or eavesdropper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmitter {
    pub id: usize,
    pub true_position: Vec2,
    pub beam: BeamParams,
    pub legitimate: bool,
    /// Position the user reported to the network; `None` for eavesdroppers.
    pub claimed_position: Option<Vec2>,
}

impl Transmitter {
    pub fn legitimate(id: usize, position: Vec2, beam: BeamParams) -> Self {
        Self {
            id,
            true_position: position,
            beam,
            legitimate: true,
            claimed_position: Some(position),
        }
    }

    pub fn eavesdropper(id: usize, position: Vec2, beam: BeamParams) -> Self {
        Self {
            id,
            true_position: position,
            beam,
            legitimate: false,
            claimed_position: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: u64,
    pub transmitters: Vec<Transmitter>,
    /// UAV altitude `h_u`, meters.
    pub altitude: f64,
    pub area_half_widths: Vec2,
}

impl Scene {
    pub fn true_positions(&self) -> Vec<Vec2> {
        self.transmitters.iter().map(|t| t.true_position).collect()
    }

    /// `(transmitter id, claimed position)` for every legitimate user.
    pub fn claims(&self) -> Vec<(usize, Vec2)> {
        self.transmitters
            .iter()
            .filter_map(|t| t.claimed_position.map(|p| (t.id, p)))
            .collect()
    }

    pub fn eavesdropper_count(&self) -> usize {
        self.transmitters.iter().filter(|t| !t.legitimate).count()
    }
}

/// How many of a scene's transmitters are eavesdroppers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EavesdropperRule {
    /// Each transmitter is independently an eavesdropper with this probability.
    Fraction(f64),
    /// Exactly this many eavesdroppers per scene.
    Count(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Candidate transmitter counts, drawn uniformly.
    pub counts: Vec<usize>,
    pub eavesdroppers: EavesdropperRule,
    pub area_half_widths: Vec2,
    pub altitude: f64,
    pub beam: BeamParams,
    /// Standard deviation of Gaussian error on reported positions, meters.
    pub claim_noise: f64,
    /// Minimum pairwise ground separation, meters (0 disables).
    pub min_separation: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            counts: vec![5, 6, 7, 8, 9],
            eavesdroppers: EavesdropperRule::Fraction(0.25),
            area_half_widths: [125.0, 125.0],
            altitude: 300.0,
            beam: BeamParams::default(),
            claim_noise: 0.0,
            min_separation: 0.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.counts.is_empty() {
            return Err(Error::config(
                "scene.counts",
                "must list at least one count",
            ));
        }
        if self.counts.contains(&0) {
            return Err(Error::config("scene.counts", "counts must be at least 1"));
        }
        match self.eavesdroppers {
            EavesdropperRule::Fraction(f) if !(0.0..=1.0).contains(&f) => {
                return Err(Error::config(
                    "scene.eavesdropper_fraction",
                    "must lie in [0, 1]",
                ))
            }
            EavesdropperRule::Count(k) if self.counts.iter().any(|&n| n < k) => {
                return Err(Error::config(
                    "scene.eavesdropper_count",
                    "exceeds the smallest transmitter count",
                ))
            }
            _ => {}
        }
        if !(self.area_half_widths[0] > 0.0 && self.area_half_widths[1] > 0.0) {
            return Err(Error::config("scene.area_m", "must be positive"));
        }
        if !(self.altitude > 0.0) {
            return Err(Error::config("scene.altitude_m", "must be positive"));
        }
        if !(self.claim_noise >= 0.0) {
            return Err(Error::config("scene.claim_noise_m", "must be non-negative"));
        }
        if !(self.min_separation >= 0.0) {
            return Err(Error::config(
                "scene.min_separation_m",
                "must be non-negative",
            ));
        }
        Ok(())
    }
}

const PLACEMENT_ATTEMPTS: usize = 10_000;

/// Draws a random scene: count, positions, and which transmitters are eavesdroppers.
pub fn generate_scene<R: Rng + ?Sized>(rng: &mut R, cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let id: u64 = rng.random();
    let n = cfg.counts[rng.random_range(0..cfg.counts.len())];
    let [hx, hy] = cfg.area_half_widths;

    let mut positions: Vec<Vec2> = Vec::with_capacity(n);
    let min_d2 = cfg.min_separation * cfg.min_separation;
    let mut attempts = 0;
    while positions.len() < n {
        let p = [rng.random_range(-hx..=hx), rng.random_range(-hy..=hy)];
        if positions.iter().all(|&q| dist2(p, q) >= min_d2) {
            positions.push(p);
        } else {
            attempts += 1;
            if attempts > PLACEMENT_ATTEMPTS {
                return Err(Error::config(
                    "scene.min_separation_m",
                    format!(
                        "could not place {n} transmitters {} m apart",
                        cfg.min_separation
                    ),
                ));
            }
        }
    }

    let mut eavesdropper = vec![false; n];
    match cfg.eavesdroppers {
        EavesdropperRule::Fraction(f) => {
            for e in eavesdropper.iter_mut() {
                *e = rng.random_bool(f);
            }
        }
        EavesdropperRule::Count(k) => {
            for i in sample(rng, n, k) {
                eavesdropper[i] = true;
            }
        }
    }

    let claim_noise = if cfg.claim_noise > 0.0 {
        Some(
            Normal::new(0.0, cfg.claim_noise)
                .map_err(|e| Error::config("scene.claim_noise_m", e.to_string()))?,
        )
    } else {
        None
    };
    let transmitters = positions
        .into_iter()
        .zip(eavesdropper)
        .enumerate()
        .map(|(i, (p, eaves))| {
            if eaves {
                Transmitter::eavesdropper(i, p, cfg.beam)
            } else {
                let mut t = Transmitter::legitimate(i, p, cfg.beam);
                if let Some(noise) = &claim_noise {
                    t.claimed_position = Some([p[0] + noise.sample(rng), p[1] + noise.sample(rng)]);
                }
                t
            }
        })
        .collect();

    Ok(Scene {
        id,
        transmitters,
        altitude: cfg.altitude,
        area_half_widths: cfg.area_half_widths,
    })
}
