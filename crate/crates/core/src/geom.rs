//! Inverse lens geometry, position error metrics and eavesdropper flagging.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use crate::assign::{euclidean_cost, solve_lap_rect, AssignmentResult};
use crate::error::{Error, Result};
use crate::{dist2, Vec2};

pub const ANOMALY_HEADER: &str = "trial,est_x_m,est_y_m,matched_claim_id,anomaly";

/// One localized transmitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundEstimate {
    /// Ground coordinates, meters.
    pub position: Vec2,
    /// Sensor-plane centroid the estimate came from, meters.
    pub source_centroid: Vec2,
    /// Incidence angles `(θ̂_x, θ̂_y)`, radians.
    pub angles: Vec2,
    /// Id of the claimed position this estimate explains, if any.
    pub matched_claim: Option<usize>,
    pub anomaly: bool,
}

impl GroundEstimate {
    /// Inverts a sensor centroid at plane distance `z` for a UAV at altitude `hu`.
    pub fn from_centroid(centroid: Vec2, z: f64, hu: f64) -> Result<Self> {
        let angles = invert_to_angles(centroid, z)?;
        let position = reconstruct_ground(angles, hu)?;
        Ok(Self {
            position,
            source_centroid: centroid,
            angles,
            matched_claim: None,
            anomaly: false,
        })
    }

    /// Builds the estimate a centroid at `z` would produce for a known ground point.
    pub fn from_position(position: Vec2, z: f64, hu: f64) -> Result<Self> {
        if !(hu > 0.0 && z > 0.0) {
            return Err(Error::domain(
                "altitude and sensor distance must be positive",
            ));
        }
        let angles = [(position[0] / hu).atan(), (position[1] / hu).atan()];
        Ok(Self {
            position,
            source_centroid: [z * position[0] / hu, z * position[1] / hu],
            angles,
            matched_claim: None,
            anomaly: false,
        })
    }
}

/// `θ̂ = arctan(x̂ / z)` per axis.
pub fn invert_to_angles(centroid: Vec2, z: f64) -> Result<Vec2> {
    if !(z > 0.0) {
        return Err(Error::domain(format!(
            "sensor distance must be positive, got {z}"
        )));
    }
    Ok([(centroid[0] / z).atan(), (centroid[1] / z).atan()])
}

/// `p̂ = h_u (tan θ̂_x, tan θ̂_y)`.
pub fn reconstruct_ground(angles: Vec2, hu: f64) -> Result<Vec2> {
    if !(hu > 0.0) {
        return Err(Error::domain(format!(
            "altitude must be positive, got {hu}"
        )));
    }
    if angles.iter().any(|a| !(a.abs() < FRAC_PI_2)) {
        return Err(Error::domain(format!(
            "angles must lie inside (-pi/2, pi/2), got {angles:?}"
        )));
    }
    Ok([hu * angles[0].tan(), hu * angles[1].tan()])
}

/// Slant range implied by the estimated angles and a known altitude,
/// `h_u / cos ψ` with `tan ψ = |p̂| / h_u`.
///
/// This only restates the altitude; the frames carry no independent range.
pub fn link_length_estimate(angles: Vec2, hu: f64) -> Result<f64> {
    let p = reconstruct_ground(angles, hu)?;
    Ok((hu * hu + p[0] * p[0] + p[1] * p[1]).sqrt())
}

/// Position error over an assignment of truths (refs) to estimates (dets).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseSummary {
    /// Mean squared ground error over matched pairs, m²; `None` if nothing matched.
    pub mse: Option<f64>,
    /// Sum of squared errors over matched pairs, m².
    pub sse: f64,
    pub matched: usize,
    /// Truths without an estimate.
    pub missed: usize,
    /// Estimates without a truth.
    pub spurious: usize,
}

/// Unmatched truths are excluded from the mean and counted as misses.
pub fn mse_position(
    estimates: &[Vec2],
    truths: &[Vec2],
    assignment: &AssignmentResult,
) -> Result<MseSummary> {
    if !assignment.is_valid(truths.len(), estimates.len()) {
        return Err(Error::domain(format!(
            "assignment does not cover {} truths and {} estimates",
            truths.len(),
            estimates.len()
        )));
    }
    let sse: f64 = assignment
        .pairs
        .iter()
        .map(|&(t, e)| dist2(truths[t], estimates[e]))
        .sum();
    let matched = assignment.pairs.len();
    Ok(MseSummary {
        mse: (matched > 0).then(|| sse / matched as f64),
        sse,
        matched,
        missed: assignment.unassigned_refs.len(),
        spurious: assignment.unassigned_dets.len(),
    })
}

/// Outcome of cross-checking estimates against the network's claimed positions.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyReport {
    pub estimates: Vec<GroundEstimate>,
    /// Claim ids no estimate accounted for.
    pub missing_claims: Vec<usize>,
}

impl AnomalyReport {
    pub fn flagged(&self) -> impl Iterator<Item = (usize, &GroundEstimate)> {
        self.estimates.iter().enumerate().filter(|(_, e)| e.anomaly)
    }
}

/// Gated assignment of estimates to claims; estimates left unmatched are anomalies.
///
/// Claims and estimates each pay `gate_radius` to stay unmatched, so a pair is
/// kept only when its distance beats leaving both ends out (at most `2·gate`),
/// and an estimate is flagged only if no unclaimed report lies within `2·gate`.
pub fn flag_anomalies(
    estimates: &[GroundEstimate],
    claims: &[(usize, Vec2)],
    gate_radius: f64,
) -> Result<AnomalyReport> {
    if !(gate_radius > 0.0 && gate_radius.is_finite()) {
        return Err(Error::domain(format!(
            "gate radius must be positive, got {gate_radius}"
        )));
    }
    let claim_points: Vec<Vec2> = claims.iter().map(|c| c.1).collect();
    let est_points: Vec<Vec2> = estimates.iter().map(|e| e.position).collect();
    let result = solve_lap_rect(&euclidean_cost(&claim_points, &est_points), gate_radius)?;

    let mut out = estimates.to_vec();
    for e in out.iter_mut() {
        e.matched_claim = None;
        e.anomaly = true;
    }
    for &(c, e) in &result.pairs {
        out[e].matched_claim = Some(claims[c].0);
        out[e].anomaly = false;
    }
    Ok(AnomalyReport {
        estimates: out,
        missing_claims: result
            .unassigned_refs
            .iter()
            .map(|&c| claims[c].0)
            .collect(),
    })
}

/// Writes one CSV row per estimate, prefixed by its trial index.
pub fn write_anomaly_csv<W: Write>(
    mut out: W,
    reports: &[(usize, AnomalyReport)],
) -> std::io::Result<()> {
    writeln!(out, "{ANOMALY_HEADER}")?;
    for (trial, report) in reports {
        for e in &report.estimates {
            let claim = e.matched_claim.map(|c| c.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{trial},{:.6},{:.6},{claim},{}",
                e.position[0],
                e.position[1],
                u8::from(e.anomaly)
            )?;
        }
    }
    Ok(())
}
