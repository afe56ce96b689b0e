//! Off-line tube design: feedback gain selection, the radii of the robust
//! control invariant error balls, the ancillary feedback law and the
//! tightening of state and input constraints by those radii.

use nalgebra::SVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::RobotModel;
use crate::geometry::{feedback_image_radius, Aabb, Ball, GeometryError};
use crate::workspace::{RegionIndex, Workspace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TubeError {
    #[error("invalid gain design input: {0}")]
    InvalidInput(String),
    #[error("over-tightening: {set} eroded by radius {radius:.4} is empty (largest admissible {limit:.4})")]
    OverTightening {
        set: String,
        radius: f64,
        limit: f64,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Gains `k`, `ρ`, the decay constants `α₁`, `α₂`, and the tube radii.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeGains {
    pub k: f64,
    pub rho: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Radius of the position-error ball Ω₁.
    pub r_e: f64,
    /// Radius of the velocity-error ball Ω₂.
    pub r_v: f64,
    pub disturbance_bound: f64,
}

impl TubeGains {
    pub fn min_alpha(&self) -> f64 {
        self.alpha1.min(self.alpha2)
    }

    /// `k (r_e + r_v)`: how far the ancillary feedback can push the input.
    pub fn feedback_radius(&self) -> f64 {
        feedback_image_radius(self.k, self.r_e, self.r_v)
    }
}

pub const DEFAULT_RHO_MARGIN: f64 = 1.2;
pub const DEFAULT_K_MARGIN: f64 = 1.1;

/// `ρ = m_ρ L/2`, `k = m_k [(1 + 2ρ)L + 5/4] / J̲`, then
/// `α₁ = 1 − L/(2ρ)`, `α₂ = kJ̲ − (1 + 2ρ)L − 5/4`,
/// `r_e = d̃/√min{α₁, α₂}`, `r_v = 2 r_e`.
pub fn design_gains(
    lipschitz: f64,
    j_lower: f64,
    disturbance_bound: f64,
    rho_margin: f64,
    k_margin: f64,
) -> Result<TubeGains, TubeError> {
    if !(lipschitz > 0.0) {
        return Err(TubeError::InvalidInput(format!("L = {lipschitz} must be positive")));
    }
    if !(j_lower > 0.0) {
        return Err(TubeError::InvalidInput(format!("J_lower = {j_lower} must be positive")));
    }
    if !(disturbance_bound >= 0.0) {
        return Err(TubeError::InvalidInput(format!(
            "disturbance bound {disturbance_bound} must be nonnegative"
        )));
    }
    if !(rho_margin > 1.0) || !(k_margin > 1.0) {
        return Err(TubeError::InvalidInput(format!(
            "margins must exceed 1 (rho_margin = {rho_margin}, k_margin = {k_margin})"
        )));
    }
    let rho = rho_margin * lipschitz / 2.0;
    let k = k_margin * ((1.0 + 2.0 * rho) * lipschitz + 1.25) / j_lower;
    let alpha1 = 1.0 - lipschitz / (2.0 * rho);
    let alpha2 = k * j_lower - (1.0 + 2.0 * rho) * lipschitz - 1.25;
    let m = alpha1.min(alpha2);
    if !(m > 0.0) {
        return Err(TubeError::InvalidInput(format!(
            "decay constants not positive (alpha1 = {alpha1}, alpha2 = {alpha2})"
        )));
    }
    let r_e = disturbance_bound / m.sqrt();
    Ok(TubeGains {
        k,
        rho,
        alpha1,
        alpha2,
        r_e,
        r_v: 2.0 * r_e,
        disturbance_bound,
    })
}

/// `κ = −k(e − ē) − k(v − v̄)`.
pub fn ancillary_feedback<const N: usize>(
    gains: &TubeGains,
    e: &SVector<f64, N>,
    v: &SVector<f64, N>,
    e_nominal: &SVector<f64, N>,
    v_nominal: &SVector<f64, N>,
) -> SVector<f64, N> {
    -(e - e_nominal) * gains.k - (v - v_nominal) * gains.k
}

/// Closed-ball membership in `Ω₁ × Ω₂`.
pub fn tube_contains<const N: usize>(
    gains: &TubeGains,
    e_dev: &SVector<f64, N>,
    v_dev: &SVector<f64, N>,
) -> bool {
    e_dev.norm() <= gains.r_e && v_dev.norm() <= gains.r_v
}

/// How the input constraint is tightened.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TubeMode {
    /// `Ū = 𝒰 ⊖ B(0, k(r_e + r_v))`: the real input provably stays in 𝒰.
    Guaranteed,
    /// `Ū = 𝒰 ⊖ B(0, input_reserve)`; the applied input is saturated to 𝒰
    /// and tube containment is monitored rather than guaranteed.
    MonitorOnly { input_reserve: f64 },
}

/// The tightened sets for one leg, in error coordinates `e = χ − χ_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightenedSets<const N: usize> {
    pub target: SVector<f64, N>,
    /// Box part of Ē: the workspace shrunk by robot radius and `r_e`.
    pub e_box: Aabb<N>,
    /// Forbidden part of Ē: other regions inflated by robot radius and `r_e`.
    pub e_forbidden: Vec<Ball<N>>,
    pub v_box: Aabb<N>,
    pub u_box: Aabb<N>,
    pub mode: TubeMode,
    /// `k(r_e + r_v)`, reported even when monitor-only mode does not use it.
    pub required_input_radius: f64,
}

impl<const N: usize> TightenedSets<N> {
    /// Position (absolute coordinates) satisfies the tightened state set.
    pub fn position_admissible(&self, pos: &SVector<f64, N>) -> bool {
        let e = pos - self.target;
        self.e_box.contains_point(&e)
            && self
                .e_forbidden
                .iter()
                .all(|b| (e - b.center).norm() > b.radius)
    }
}

pub fn tighten<const N: usize>(
    workspace: &Workspace<N>,
    model: &RobotModel<N>,
    gains: &TubeGains,
    mode: TubeMode,
    source: RegionIndex,
    dest: RegionIndex,
) -> Result<TightenedSets<N>, TubeError> {
    let target = workspace.regions[dest].ball.center;
    let shift = -target;
    let shrunk = workspace
        .bounds
        .erode_named(workspace.robot_radius, "workspace")
        .map_err(over)?;
    let e_box = shrunk
        .erode_named(gains.r_e, "state set E")
        .map_err(over)?
        .translate(&shift);
    let inflation = workspace.robot_radius + gains.r_e;
    let e_forbidden = workspace
        .regions
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != source && *i != dest)
        .map(|(_, r)| r.ball.inflate(inflation).translate(&shift))
        .collect();
    let v_box = model
        .velocity_box
        .erode_named(gains.r_v, "velocity set V")
        .map_err(over)?;
    let required = gains.feedback_radius();
    let u_radius = match mode {
        TubeMode::Guaranteed => required,
        TubeMode::MonitorOnly { input_reserve } => {
            if !(input_reserve >= 0.0) {
                return Err(TubeError::InvalidInput(format!(
                    "input reserve {input_reserve} must be nonnegative"
                )));
            }
            input_reserve
        }
    };
    let u_box = model
        .input_box
        .erode_named(u_radius, "input set U")
        .map_err(over)?;
    Ok(TightenedSets {
        target,
        e_box,
        e_forbidden,
        v_box,
        u_box,
        mode,
        required_input_radius: required,
    })
}

fn over(e: GeometryError) -> TubeError {
    match e {
        GeometryError::EmptyErosion { set, radius, limit } => {
            TubeError::OverTightening { set, radius, limit }
        }
        other => TubeError::Geometry(other),
    }
}
