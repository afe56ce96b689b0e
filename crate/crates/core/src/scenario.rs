//! Scenario files (TOML) and their resolution into the objects the
//! pipeline works with.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    check_stabilizability, estimate_j_lower, estimate_lipschitz, origin_residual,
    DisturbanceSignal, Dynamics, LinearDynamics, PlanarExample, RobotModel,
};
use crate::exact::{parse_rational, rational_from_decimal_f64, to_f64, Rational};
use crate::fhocp::{FhocpConfig, InitMode, SolverOptions, TerminalOptions};
use crate::geometry::{ball_in_box, Aabb, Ball};
use crate::mitl::{parse, validate_fragment, Fragment};
use crate::navigator::{check_assumption4, Assumption4Report, NavigationOptions};
use crate::tube::{design_gains, TubeGains, TubeMode};
use crate::workspace::{Region, Workspace};

/// Scenario files describe planar workspaces.
pub const DIM: usize = 2;

/// Smallest `L` used when the estimate comes out smaller.
pub const LIPSCHITZ_FLOOR: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid scenario: {field}: {msg}")]
    Invalid { field: String, msg: String },
}

fn invalid(field: impl Into<String>, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        msg: msg.into(),
    }
}

/// A number written either as a TOML number or as a string `p/q` or
/// decimal; converted exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExactNumber {
    Int(i64),
    Float(f64),
    Text(String),
}

impl ExactNumber {
    pub fn to_rational(&self) -> Result<Rational, String> {
        match self {
            Self::Int(i) => Ok(Rational::from_integer(*i)),
            Self::Float(x) => rational_from_decimal_f64(*x).map_err(|e| e.to_string()),
            Self::Text(s) => parse_rational(s).map_err(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceSpec {
    pub lower: [f64; DIM],
    pub upper: [f64; DIM],
    pub robot_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub id: String,
    pub center: [f64; DIM],
    pub radius: f64,
    #[serde(default)]
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    /// `f₁ = 0.25x² + u₁`, `f₂ = 0.1 tanh(x/2) + 0.25y² + u₂ + 0.1u₂³`.
    PlanarExample,
    DoubleIntegrator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: ModelName,
    /// Half-width of the velocity box `𝒱`.
    pub velocity_bound: f64,
    /// Half-width of the input box `𝒰`.
    pub input_bound: f64,
    /// Declared `L`; estimated by sampling when absent.
    pub lipschitz: Option<f64>,
    /// Declared `J̲`; estimated by sampling when absent.
    pub j_lower: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    Zero,
    Sinusoidal,
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub kind: DisturbanceKind,
    /// `d̃`, used for the tube design whatever the signal.
    pub bound: f64,
    /// Redraw period of the random signal (s).
    #[serde(default = "default_hold")]
    pub hold: f64,
}

fn default_hold() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub position: [f64; DIM],
    #[serde(default)]
    pub velocity: [f64; DIM],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FhocpSpec {
    pub h: ExactNumber,
    pub horizon: ExactNumber,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub init: InitMode,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub terminal: TerminalOptions,
}

fn default_substeps() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSpec {
    pub rho_margin: f64,
    pub k_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavigationSpec {
    #[serde(default = "default_tube_mode")]
    pub tube: TubeMode,
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    #[serde(default = "default_tail")]
    pub tail: f64,
    #[serde(default = "default_stall")]
    pub stall_window: Option<f64>,
}

fn default_tube_mode() -> TubeMode {
    TubeMode::Guaranteed
}
fn default_timeout() -> f64 {
    60.0
}
fn default_tail() -> f64 {
    2.0
}
fn default_stall() -> Option<f64> {
    Some(5.0)
}

impl Default for NavigationSpec {
    fn default() -> Self {
        Self {
            tube: default_tube_mode(),
            timeout: default_timeout(),
            tail: default_tail(),
            stall_window: default_stall(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractionSpec {
    /// Regions carrying any of these labels are never leg destinations.
    #[serde(default = "default_excluded")]
    pub exclude_labels: Vec<String>,
}

fn default_excluded() -> Vec<String> {
    vec!["obs".into()]
}

impl Default for AbstractionSpec {
    fn default() -> Self {
        Self {
            exclude_labels: default_excluded(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub formula: String,
    pub workspace: WorkspaceSpec,
    pub regions: Vec<RegionSpec>,
    pub model: ModelSpec,
    pub disturbance: DisturbanceSpec,
    pub initial: InitialSpec,
    pub fhocp: FhocpSpec,
    pub gains: GainsSpec,
    #[serde(default)]
    pub navigation: NavigationSpec,
    #[serde(default)]
    pub abstraction: AbstractionSpec,
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Schema(e.to_string()))?;
    s.validate()?;
    Ok(s)
}

/// The 14-region planar scenario bundled with the crate.
pub const PAPER_S5: &str = include_str!("../scenarios/paper_s5.toml");

impl Scenario {
    pub fn paper_s5() -> Self {
        parse_scenario(PAPER_S5).unwrap_or_else(|e| panic!("bundled scenario is invalid: {e}"))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let ws = &self.workspace;
        if !(ws.robot_radius > 0.0) {
            return Err(invalid("workspace.robot_radius", "must be positive"));
        }
        let bounds = Aabb::new(Vector2::from(ws.lower), Vector2::from(ws.upper))
            .map_err(|e| invalid("workspace", e.to_string()))?;
        let mut ids = BTreeSet::new();
        for (i, r) in self.regions.iter().enumerate() {
            let field = format!("regions[{i}]");
            if !ids.insert(r.id.as_str()) {
                return Err(invalid(field, format!("duplicate id `{}`", r.id)));
            }
            if !(r.radius > ws.robot_radius) {
                return Err(invalid(
                    format!("{field}.radius"),
                    format!("{} must exceed the robot radius {}", r.radius, ws.robot_radius),
                ));
            }
            let ball = Ball {
                center: Vector2::from(r.center),
                radius: r.radius,
            };
            if !ball_in_box(&ball, &bounds) {
                return Err(invalid(field, format!("region `{}` leaves the workspace", r.id)));
            }
        }
        if !bounds.contains_point(&Vector2::from(self.initial.position)) {
            return Err(invalid("initial.position", "outside the workspace"));
        }
        if !(self.disturbance.bound >= 0.0) {
            return Err(invalid("disturbance.bound", "must be nonnegative"));
        }
        if !(self.model.velocity_bound > 0.0) || !(self.model.input_bound > 0.0) {
            return Err(invalid("model", "box half-widths must be positive"));
        }
        if self.fhocp.q_diag.len() != 2 * DIM || self.fhocp.r_diag.len() != DIM {
            return Err(invalid("fhocp", format!("q_diag needs {} and r_diag {} entries", 2 * DIM, DIM)));
        }
        self.horizon_steps()?;
        self.fragment()?;
        Ok(())
    }

    pub fn h(&self) -> Result<Rational, ScenarioError> {
        let h = self.fhocp.h.to_rational().map_err(|e| invalid("fhocp.h", e))?;
        if h <= Rational::from_integer(0) {
            return Err(invalid("fhocp.h", "must be positive"));
        }
        Ok(h)
    }

    pub fn horizon_steps(&self) -> Result<usize, ScenarioError> {
        let h = self.h()?;
        let t = self
            .fhocp
            .horizon
            .to_rational()
            .map_err(|e| invalid("fhocp.horizon", e))?;
        let steps = t / h;
        if !steps.is_integer() || steps < Rational::from_integer(1) {
            return Err(invalid("fhocp.horizon", "must be a positive multiple of h"));
        }
        Ok(*steps.numer() as usize)
    }

    pub fn alphabet(&self) -> BTreeSet<String> {
        self.regions.iter().flat_map(|r| r.labels.iter().cloned()).collect()
    }

    pub fn fragment(&self) -> Result<Fragment, ScenarioError> {
        let f = parse(&self.formula, &self.alphabet()).map_err(|e| invalid("formula", e.to_string()))?;
        validate_fragment(&f).map_err(|e| invalid("formula", e.to_string()))
    }

    pub fn workspace(&self) -> Workspace<DIM> {
        Workspace {
            bounds: Aabb {
                lower: Vector2::from(self.workspace.lower),
                upper: Vector2::from(self.workspace.upper),
            },
            robot_radius: self.workspace.robot_radius,
            regions: self
                .regions
                .iter()
                .map(|r| Region {
                    id: r.id.clone(),
                    ball: Ball {
                        center: Vector2::from(r.center),
                        radius: r.radius,
                    },
                    labels: r.labels.iter().cloned().collect(),
                })
                .collect(),
        }
    }

    fn dynamics(&self) -> Arc<dyn Dynamics<DIM>> {
        match self.model.name {
            ModelName::PlanarExample => Arc::new(PlanarExample),
            ModelName::DoubleIntegrator => Arc::new(LinearDynamics::<DIM>::double_integrator()),
        }
    }

    /// Disturbance signal of the given kind at the scenario bound.
    pub fn disturbance_signal(&self, kind: DisturbanceKind, seed: u64) -> DisturbanceSignal {
        let bound = self.disturbance.bound;
        match kind {
            DisturbanceKind::Zero => DisturbanceSignal::Zero,
            DisturbanceKind::Sinusoidal => DisturbanceSignal::Sinusoidal { bound },
            DisturbanceKind::UniformRandom => DisturbanceSignal::UniformRandom {
                bound,
                hold: self.disturbance.hold,
                seed,
            },
        }
    }

    pub fn initial_state(&self) -> (Vector2<f64>, Vector2<f64>) {
        (
            Vector2::from(self.initial.position),
            Vector2::from(self.initial.velocity),
        )
    }

    /// Resolves models, gains and options. Missing `L`/`J̲` are estimated
    /// by sampling `W × 𝒱 × 𝒰`.
    pub fn design(&self) -> Result<Design, ScenarioError> {
        self.validate()?;
        let ws = self.workspace();
        let vb = self.model.velocity_bound;
        let ib = self.model.input_bound;
        let mut model = RobotModel {
            dynamics: self.dynamics(),
            velocity_box: Aabb::symmetric(vb),
            input_box: Aabb::symmetric(ib),
            lipschitz: self.model.lipschitz.unwrap_or(1.0),
            j_lower: self.model.j_lower.unwrap_or(1.0),
        };
        let mut notes = Vec::new();
        if self.model.lipschitz.is_none() {
            let rep = estimate_lipschitz(&model, &ws.bounds, 100_000, self.seed)
                .map_err(|e| invalid("model.lipschitz", e.to_string()))?;
            // The gain design divides by L.
            model.lipschitz = rep.combined.max(LIPSCHITZ_FLOOR);
            notes.push(format!("L estimated as {:.6}, using {}", rep.combined, model.lipschitz));
        }
        if self.model.j_lower.is_none() {
            let rep = estimate_j_lower(&model, &ws.bounds, 100_000, self.seed)
                .map_err(|e| invalid("model.j_lower", e.to_string()))?;
            if rep.violated {
                return Err(invalid("model.j_lower", "input Jacobian is not positive definite"));
            }
            model.j_lower = rep.estimate;
            notes.push(format!("J_lower estimated as {:.6}", rep.estimate));
        }
        let gains = design_gains(
            model.lipschitz,
            model.j_lower,
            self.disturbance.bound,
            self.gains.rho_margin,
            self.gains.k_margin,
        )
        .map_err(|e| invalid("gains", e.to_string()))?;
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.fhocp.q_diag.clone()));
        let r = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.fhocp.r_diag.clone()));
        let mut config = FhocpConfig::new(to_f64(&self.h()?), self.horizon_steps()?, q, r);
        config.substeps = self.fhocp.substeps;
        config.init = self.fhocp.init;
        config.solver = self.fhocp.solver.clone();
        config.validate(DIM).map_err(|e| invalid("fhocp", e.to_string()))?;
        let nav = NavigationOptions {
            mode: self.navigation.tube,
            terminal: self.fhocp.terminal.clone(),
            timeout: self.navigation.timeout,
            tail: self.navigation.tail,
            stall_window: self.navigation.stall_window,
            ..NavigationOptions::default()
        };
        Ok(Design {
            workspace: ws,
            model,
            gains,
            config,
            nav,
            notes,
        })
    }
}

/// Everything a leg needs, resolved from a scenario.
#[derive(Debug, Clone)]
pub struct Design {
    pub workspace: Workspace<DIM>,
    pub model: RobotModel<DIM>,
    pub gains: TubeGains,
    pub config: FhocpConfig,
    pub nav: NavigationOptions,
    /// How undeclared constants were obtained.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// `‖f(0,0,0)‖`.
    pub origin_residual: f64,
    pub stabilizable: bool,
    pub lipschitz_declared: f64,
    pub lipschitz_estimate: f64,
    pub j_lower_declared: f64,
    pub j_lower_estimate: f64,
    pub assumption4: Assumption4Report,
    pub initial_region: Option<String>,
    pub messages: BTreeMap<String, String>,
    pub ok: bool,
}

impl Design {
    /// Numerical checks of the modelling assumptions and region spacing.
    pub fn check_assumptions(&self, scenario: &Scenario) -> AssumptionReport {
        let ws = &self.workspace;
        let m = &self.model;
        let residual = origin_residual(m);
        let stabilizable = check_stabilizability(m);
        let lip = estimate_lipschitz(m, &ws.bounds, 100_000, scenario.seed);
        let jl = estimate_j_lower(m, &ws.bounds, 100_000, scenario.seed);
        let a4 = check_assumption4(ws, &self.gains);
        let initial = ws
            .region_containing_robot(&Vector2::from(scenario.initial.position))
            .map(|i| ws.regions[i].id.clone());
        let mut messages = BTreeMap::new();
        let mut ok = true;
        if residual > 1e-9 {
            ok = false;
            messages.insert("assumption1".into(), format!("f(0,0,0) has norm {residual:.3e}"));
        }
        if !stabilizable {
            ok = false;
            messages.insert("assumption2".into(), "linearisation at the origin is not stabilizable".into());
        }
        let (lip_est, j_est) = match (&lip, &jl) {
            (Ok(l), Ok(j)) => (l.combined, j.estimate),
            _ => (f64::NAN, f64::NAN),
        };
        if lip_est > m.lipschitz * (1.0 + 1e-6) {
            messages.insert(
                "lipschitz".into(),
                format!("sampled L = {lip_est:.6} exceeds the declared {}", m.lipschitz),
            );
        }
        if !(j_est > 0.0) {
            ok = false;
            messages.insert("assumption3".into(), format!("sampled J_lower = {j_est:.6} is not positive"));
        } else if j_est < m.j_lower * (1.0 - 1e-6) {
            messages.insert(
                "assumption3".into(),
                format!("sampled J_lower = {j_est:.6} is below the declared {}", m.j_lower),
            );
        }
        if !a4.holds() {
            ok = false;
            let pairs: Vec<String> = a4
                .failures
                .iter()
                .map(|p| format!("{}-{}", ws.regions[p.a].id, ws.regions[p.b].id))
                .collect();
            messages.insert(
                "assumption4".into(),
                format!("gap below {:.4} for {}", a4.required_gap, pairs.join(", ")),
            );
        }
        if initial.is_none() {
            ok = false;
            messages.insert("initial".into(), "robot footprint is not inside any region".into());
        }
        AssumptionReport {
            origin_residual: residual,
            stabilizable,
            lipschitz_declared: m.lipschitz,
            lipschitz_estimate: lip_est,
            j_lower_declared: m.j_lower,
            j_lower_estimate: j_est,
            assumption4: a4,
            initial_region: initial,
            messages,
            ok,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenario_loads() {
        let s = Scenario::paper_s5();
        assert_eq!(s.regions.len(), 14);
        assert!(s.regions.iter().all(|r| r.radius == 0.7));
        assert_eq!(s.disturbance.bound, 0.25);
        assert_eq!(s.h().unwrap(), Rational::new(1, 10));
        assert_eq!(s.horizon_steps().unwrap(), 12);
        assert_eq!(s.fragment().unwrap().conjuncts.len(), 3);
    }

    #[test]
    fn missing_formula_is_a_schema_error() {
        let text = PAPER_S5.replace("formula =", "# formula =");
        match parse_scenario(&text) {
            Err(ScenarioError::Schema(msg)) => assert!(msg.contains("formula"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn small_region_is_rejected() {
        let mut s = Scenario::paper_s5();
        s.regions[3].radius = 0.1;
        match s.validate() {
            Err(ScenarioError::Invalid { field, .. }) => assert_eq!(field, "regions[3].radius"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_and_bad_horizon_are_rejected() {
        let mut s = Scenario::paper_s5();
        s.regions[1].id = s.regions[0].id.clone();
        assert!(s.validate().is_err());
        let mut s = Scenario::paper_s5();
        s.fhocp.horizon = ExactNumber::Text("1.25".into());
        assert!(s.validate().is_err());
    }

    #[test]
    fn exact_numbers() {
        assert_eq!(ExactNumber::Float(0.1).to_rational().unwrap(), Rational::new(1, 10));
        assert_eq!(ExactNumber::Text("1/3".into()).to_rational().unwrap(), Rational::new(1, 3));
        assert_eq!(ExactNumber::Int(2).to_rational().unwrap(), Rational::from_integer(2));
    }

    #[test]
    fn bundled_assumptions_hold() {
        let s = Scenario::paper_s5();
        let d = s.design().unwrap();
        let rep = d.check_assumptions(&s);
        assert!(rep.ok, "{:?}", rep.messages);
        assert_eq!(rep.initial_region.as_deref(), Some("R1"));
        assert!(rep.j_lower_estimate >= 1.0 - 1e-9);
    }
}
