//! Point-to-point navigation between regions: the receding-horizon nominal
//! controller plus the ancillary feedback on the real robot, the
//! steady-state test that fixes a transition's duration, and the checks
//! on the resulting trajectories.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{rk4_step, DisturbanceSignal, DynamicsError, RobotModel, StateTrajectory, Vector};
use crate::exact::{rational_from_decimal_f64, Rational};
use crate::fhocp::{
    terminal_ingredients, Fhocp, FhocpConfig, FhocpError, InitMode, NominalState,
    RecedingHorizon, SolveRecord, TerminalCondition, TerminalOptions,
};
use crate::geometry::{ball_strictly_in_ball, Ball};
use crate::linalg;
use crate::tube::{ancillary_feedback, tighten, TubeError, TubeGains, TubeMode};
use crate::workspace::{RegionIndex, Workspace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NavError {
    #[error("start state is not inside source region {0}")]
    StartOutsideSource(String),
    #[error("sampling period {0} has no exact decimal form")]
    InexactPeriod(f64),
    #[error(transparent)]
    Tube(#[from] TubeError),
    #[error(transparent)]
    Fhocp(#[from] FhocpError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairGap {
    pub a: RegionIndex,
    pub b: RegionIndex,
    /// Center distance minus radius sum.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assumption4Report {
    /// `2𝔯 + 2d̃/√min{α₁, α₂}`.
    pub required_gap: f64,
    pub min_gap: Option<PairGap>,
    pub failures: Vec<PairGap>,
}

impl Assumption4Report {
    pub fn holds(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn pair_ok(&self, a: RegionIndex, b: RegionIndex) -> bool {
        !self
            .failures
            .iter()
            .any(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
    }
}

/// Spacing between every pair of regions against the tube diameter.
pub fn check_assumption4<const N: usize>(ws: &Workspace<N>, gains: &TubeGains) -> Assumption4Report {
    let required = 2.0 * ws.robot_radius + 2.0 * gains.r_e;
    let mut failures = Vec::new();
    let mut min_gap: Option<PairGap> = None;
    for a in 0..ws.regions.len() {
        for b in a + 1..ws.regions.len() {
            let (ra, rb) = (&ws.regions[a].ball, &ws.regions[b].ball);
            let gap = (ra.center - rb.center).norm() - ra.radius - rb.radius;
            let pair = PairGap { a, b, gap };
            if min_gap.map_or(true, |m| gap < m.gap) {
                min_gap = Some(pair);
            }
            if !(gap > required) {
                failures.push(pair);
            }
        }
    }
    Assumption4Report {
        required_gap: required,
        min_gap,
        failures,
    }
}

/// Position-error and velocity norms of the nominal state within
/// `ε/√λ_min(P)`.
pub fn steady_state_reached<const N: usize>(
    nominal: &NominalState<N>,
    target: &Vector<N>,
    p: &DMatrix<f64>,
    epsilon: f64,
) -> bool {
    within_radius(nominal, target, epsilon / linalg::min_sym_eigenvalue(p).sqrt())
}

fn within_radius<const N: usize>(nominal: &NominalState<N>, target: &Vector<N>, radius: f64) -> bool {
    (nominal.0 - target).norm() <= radius && nominal.1.norm() <= radius
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigationOptions {
    pub mode: TubeMode,
    pub terminal: TerminalOptions,
    /// Simulated-time cap on a leg (s).
    pub timeout: f64,
    /// Verification tail after the steady-state test fires (s).
    pub tail: f64,
    /// Abort when the nominal distance to the target has not improved by
    /// `stall_tolerance` for this long (s); `None` disables it.
    pub stall_window: Option<f64>,
    pub stall_tolerance: f64,
    /// Cap `ε` so the steady-state ball fits inside the destination.
    pub fit_destination: bool,
}

impl Default for NavigationOptions {
    fn default() -> Self {
        Self {
            mode: TubeMode::Guaranteed,
            terminal: TerminalOptions::default(),
            timeout: 60.0,
            tail: 2.0,
            stall_window: Some(5.0),
            stall_tolerance: 1e-3,
            fit_destination: true,
        }
    }
}

/// Everything fixed for one ordered pair of regions.
#[derive(Debug, Clone)]
pub struct LegSetup<const N: usize> {
    pub source: RegionIndex,
    pub dest: RegionIndex,
    pub source_id: String,
    pub dest_id: String,
    pub problem: Fhocp<N>,
    pub gains: TubeGains,
    pub h: Rational,
    pub init: InitMode,
    pub warnings: Vec<String>,
}

impl<const N: usize> LegSetup<N> {
    pub fn target(&self) -> Vector<N> {
        self.problem.terminal().target
    }

    /// `ε/√λ_min(P)`.
    pub fn steady_state_radius(&self) -> f64 {
        self.problem.terminal().steady_state_radius()
    }

    /// Right-hand sides of the two steady-state bounds on the real state.
    pub fn steady_state_bounds(&self) -> (f64, f64) {
        let s = self.steady_state_radius();
        (s + self.gains.r_e, s + self.gains.r_v)
    }
}

pub fn prepare_leg<const N: usize>(
    ws: &Workspace<N>,
    model: &RobotModel<N>,
    gains: &TubeGains,
    config: &FhocpConfig,
    opts: &NavigationOptions,
    source: RegionIndex,
    dest: RegionIndex,
) -> Result<LegSetup<N>, NavError> {
    let h = rational_from_decimal_f64(config.h).map_err(|_| NavError::InexactPeriod(config.h))?;
    let sets = tighten(ws, model, gains, opts.mode, source, dest)?;
    let mut warnings = Vec::new();
    let mut terminal_opts = opts.terminal.clone();
    let room = ws.regions[dest].ball.radius - ws.robot_radius - gains.r_e;
    if opts.fit_destination {
        if room > 0.0 {
            // Strict containment of the robot ball at the steady-state bound.
            terminal_opts.position_cap = Some(room * (1.0 - 1e-9));
        } else {
            warnings.push(format!(
                "region {} too small for the tube: radius {:.4} <= robot radius + r_e = {:.4}",
                ws.regions[dest].id,
                ws.regions[dest].ball.radius,
                ws.robot_radius + gains.r_e
            ));
        }
    }
    let terminal = terminal_ingredients(model, &sets, &config.q, &config.r, &terminal_opts)?;
    if terminal.steady_state_radius() + gains.r_e + ws.robot_radius >= ws.regions[dest].ball.radius
        && !warnings.iter().any(|w| w.contains("too small"))
    {
        warnings.push(format!(
            "steady-state ball does not fit inside region {}",
            ws.regions[dest].id
        ));
    }
    let problem = Fhocp::new(model, config, &sets, &terminal)?;
    Ok(LegSetup {
        source,
        dest,
        source_id: ws.regions[source].id.clone(),
        dest_id: ws.regions[dest].id.clone(),
        problem,
        gains: *gains,
        h,
        init: config.init,
        warnings,
    })
}

/// Why a leg stopped before its verification tail finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LegOutcome {
    Completed,
    Timeout { after: f64 },
    Stalled { after: f64, distance: f64 },
    Infeasible { after: f64, detail: String },
}

/// Receding-horizon nominal run: `ū` per sampling interval and the nominal
/// state at every integration sub-step. Independent of the disturbance when
/// the FHOCP is initialised from the nominal state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalLeg<const N: usize> {
    /// Number of sampling periods until the steady-state test fired.
    pub duration_steps: Option<usize>,
    pub controls: Vec<Vector<N>>,
    pub states: Vec<NominalState<N>>,
    pub solves: Vec<SolveRecord>,
    pub outcome: LegOutcome,
}

/// Runs the nominal closed loop until the steady-state test fires (checked
/// after each sampling period) and then for the verification tail.
pub fn plan_nominal<const N: usize>(
    setup: &LegSetup<N>,
    start: &NominalState<N>,
    opts: &NavigationOptions,
) -> Result<NominalLeg<N>, NavError> {
    let problem = &setup.problem;
    let m = problem.substeps();
    let h = problem.h();
    let dt = h / m as f64;
    let target = setup.target();
    let radius = setup.steady_state_radius();
    let tail_steps = (opts.tail / h).round() as usize;
    let max_steps = (opts.timeout / h).round() as usize;
    let stall_steps = opts.stall_window.map(|w| (w / h).round() as usize);
    let zero = Vector::<N>::zeros();

    let mut rh = RecedingHorizon::new(problem.clone());
    let mut state = *start;
    let mut states = vec![state];
    let mut controls = Vec::new();
    let mut fired = None;
    let mut best = (f64::INFINITY, 0usize);
    let mut k = 0usize;
    let outcome = loop {
        if k >= 1 && fired.is_none() && within_radius(&state, &target, radius) {
            fired = Some(k);
        }
        if let Some(f) = fired {
            if k >= f + tail_steps {
                break LegOutcome::Completed;
            }
        } else {
            if k >= max_steps {
                break LegOutcome::Timeout { after: k as f64 * h };
            }
            let dist = (state.0 - target).norm();
            if dist < best.0 - opts.stall_tolerance {
                best = (dist, k);
            }
            if let Some(w) = stall_steps {
                if k >= best.1 + w {
                    break LegOutcome::Stalled {
                        after: k as f64 * h,
                        distance: dist,
                    };
                }
            }
        }
        let sol = match rh.step(&state) {
            Ok(sol) => sol,
            Err(FhocpError::InfeasibleStart { max_violation, worst }) => {
                break LegOutcome::Infeasible {
                    after: k as f64 * h,
                    detail: format!("initial problem infeasible: {max_violation:.3e} ({worst})"),
                };
            }
            Err(e) => return Err(e.into()),
        };
        if !sol.report.path_feasible || (!sol.feasible && rh.terminal_enforced()) {
            break LegOutcome::Infeasible {
                after: k as f64 * h,
                detail: format!(
                    "no feasible solution: path violation {:.3e} ({}), terminal norm {:.4e}",
                    sol.report.max_path_violation, sol.report.worst, sol.report.terminal_norm
                ),
            };
        }
        let u = sol.controls[0];
        controls.push(u);
        for _ in 0..m {
            state = rk4_step(problem.model(), &state.0, &state.1, &u, &zero, dt)?;
            states.push(state);
        }
        k += 1;
    };
    Ok(NominalLeg {
        duration_steps: fired,
        controls,
        states,
        solves: rh.records,
        outcome,
    })
}

/// One logged instant of a leg (times relative to the leg start).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow<const N: usize> {
    pub t: f64,
    pub pos: Vector<N>,
    pub vel: Vector<N>,
    pub nominal_pos: Vector<N>,
    pub nominal_vel: Vector<N>,
    pub u: Vector<N>,
    pub u_nominal: Vector<N>,
    pub d: Vector<N>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TubeStats {
    pub max_position_deviation: f64,
    pub max_velocity_deviation: f64,
    pub violations: usize,
    pub saturated_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TailStats {
    pub position_bound: f64,
    pub velocity_bound: f64,
    pub max_position_error: f64,
    pub max_speed: f64,
    pub violations: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionResult<const N: usize> {
    pub source: String,
    pub dest: String,
    /// Absolute time at which the leg started (for the disturbance clock).
    pub start_time: f64,
    /// `𝔱(source, dest)`: an integer multiple of `h`.
    pub duration: Rational,
    pub duration_steps: usize,
    pub feasible: bool,
    pub outcome: LegOutcome,
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
    pub tube: TubeStats,
    pub tail: TailStats,
    pub epsilon: f64,
    pub steady_state_radius: f64,
    pub terminal_limit: TerminalCondition,
    pub solves: Vec<SolveRecord>,
    /// Real state at the end of the leg (time `duration`).
    pub end_state: NominalState<N>,
    pub log: Vec<LogRow<N>>,
}

impl<const N: usize> TransitionResult<N> {
    pub fn real_trajectory(&self) -> StateTrajectory<N> {
        let mut t = StateTrajectory::default();
        for r in &self.log {
            t.push(r.t, r.pos, r.vel);
        }
        t
    }

    pub fn nominal_trajectory(&self) -> StateTrajectory<N> {
        let mut t = StateTrajectory::default();
        for r in &self.log {
            t.push(r.t, r.nominal_pos, r.nominal_vel);
        }
        t
    }

    /// Log rows up to and including the end of the leg proper.
    pub fn leg_rows(&self) -> &[LogRow<N>] {
        let dur = crate::exact::to_f64(&self.duration);
        let end = self
            .log
            .iter()
            .position(|r| r.t > dur + 1e-9)
            .unwrap_or(self.log.len());
        &self.log[..end]
    }
}

/// Applies `u = sat_U(ū + κ)` to the real robot along a nominal run, with
/// the ancillary feedback refreshed at every integration sub-step.
pub fn replay_real<const N: usize>(
    setup: &LegSetup<N>,
    ws: &Workspace<N>,
    nominal: &NominalLeg<N>,
    real_start: &NominalState<N>,
    disturbance: &DisturbanceSignal,
    start_time: f64,
) -> Result<TransitionResult<N>, NavError> {
    let problem = &setup.problem;
    let model = problem.model();
    let m = problem.substeps();
    let dt = problem.h() / m as f64;
    let target = setup.target();
    let gains = &setup.gains;
    let mut log = Vec::with_capacity(nominal.states.len());
    let mut real = *real_start;
    let mut tube = TubeStats::default();
    for (k, u_bar) in nominal.controls.iter().enumerate() {
        for s in 0..m {
            let idx = k * m + s;
            let (np, nv) = nominal.states[idx];
            let t = idx as f64 * dt;
            let kappa = ancillary_feedback(gains, &(real.0 - target), &real.1, &(np - target), &nv);
            let raw = u_bar + kappa;
            let u = model.input_box.project(&raw);
            if u != raw {
                tube.saturated_steps += 1;
            }
            let d = disturbance.sample::<N>(start_time + t);
            log.push(LogRow {
                t,
                pos: real.0,
                vel: real.1,
                nominal_pos: np,
                nominal_vel: nv,
                u,
                u_nominal: *u_bar,
                d,
            });
            real = rk4_step(model, &real.0, &real.1, &u, &d, dt)?;
        }
    }
    let last = nominal.states.len() - 1;
    let t_end = last as f64 * dt;
    let (np, nv) = nominal.states[last];
    let u_last = nominal.controls.last().copied().unwrap_or(problem.terminal().u_eq);
    log.push(LogRow {
        t: t_end,
        pos: real.0,
        vel: real.1,
        nominal_pos: np,
        nominal_vel: nv,
        u: model
            .input_box
            .project(&(u_last + ancillary_feedback(gains, &(real.0 - target), &real.1, &(np - target), &nv))),
        u_nominal: u_last,
        d: disturbance.sample::<N>(start_time + t_end),
    });
    Ok(assess(setup, ws, nominal, log, tube, start_time))
}

fn assess<const N: usize>(
    setup: &LegSetup<N>,
    ws: &Workspace<N>,
    nominal: &NominalLeg<N>,
    log: Vec<LogRow<N>>,
    mut tube: TubeStats,
    start_time: f64,
) -> TransitionResult<N> {
    let terminal = setup.problem.terminal();
    let target = terminal.target;
    let gains = &setup.gains;
    let m = setup.problem.substeps();
    let mut violations = Vec::new();
    let mut warnings = setup.warnings.clone();
    let duration_steps = nominal.duration_steps.unwrap_or(0);
    let fired_index = nominal.duration_steps.map(|k| k * m);
    let (pos_bound, vel_bound) = setup.steady_state_bounds();
    let mut tail = TailStats {
        position_bound: pos_bound,
        velocity_bound: vel_bound,
        ..TailStats::default()
    };
    let bounds_ok = ws.bounds.erode(ws.robot_radius).ok();
    let mut first_unsafe: Option<String> = None;
    let vbox = &setup.problem.model().velocity_box;
    for (i, row) in log.iter().enumerate() {
        let de = (row.pos - row.nominal_pos).norm();
        let dv = (row.vel - row.nominal_vel).norm();
        tube.max_position_deviation = tube.max_position_deviation.max(de);
        tube.max_velocity_deviation = tube.max_velocity_deviation.max(dv);
        if de > gains.r_e + 1e-6 || dv > gains.r_v + 1e-6 {
            tube.violations += 1;
        }
        let inside = bounds_ok.as_ref().map_or(false, |b| b.contains_point(&row.pos));
        if !inside && first_unsafe.is_none() {
            first_unsafe = Some(format!("robot leaves the workspace at t = {:.3}", row.t));
        }
        if !vbox.contains_point(&row.vel) && first_unsafe.is_none() {
            first_unsafe = Some(format!("velocity leaves V at t = {:.3}", row.t));
        }
        for (j, r) in ws.regions.iter().enumerate() {
            if j == setup.source || j == setup.dest {
                continue;
            }
            if (row.pos - r.ball.center).norm() <= r.ball.radius + ws.robot_radius
                && first_unsafe.is_none()
            {
                first_unsafe = Some(format!("robot touches region {} at t = {:.3}", r.id, row.t));
            }
        }
        if let Some(fi) = fired_index {
            if i >= fi {
                let pe = (row.pos - target).norm();
                let sp = row.vel.norm();
                tail.samples += 1;
                tail.max_position_error = tail.max_position_error.max(pe);
                tail.max_speed = tail.max_speed.max(sp);
                if pe > pos_bound + 1e-6 || sp > vel_bound + 1e-6 {
                    tail.violations += 1;
                }
            }
        }
    }
    if let Some(v) = first_unsafe {
        violations.push(v);
    }
    match &nominal.outcome {
        LegOutcome::Completed => {}
        LegOutcome::Timeout { after } => violations.push(format!("timeout after {after:.1} s")),
        LegOutcome::Stalled { after, distance } => violations.push(format!(
            "stalled after {after:.1} s at distance {distance:.3} from the target"
        )),
        LegOutcome::Infeasible { after, detail } => {
            violations.push(format!("infeasible at t = {after:.1}: {detail}"))
        }
    }
    if tail.violations > 0 {
        violations.push(format!(
            "steady-state bounds violated at {} of {} tail samples",
            tail.violations, tail.samples
        ));
    }
    if tube.violations > 0 {
        warnings.push(format!("tube left at {} logged instants", tube.violations));
    }
    let end_index = fired_index.unwrap_or(log.len() - 1).min(log.len() - 1);
    let end_state = (log[end_index].pos, log[end_index].vel);
    if fired_index.is_some() {
        let robot = Ball {
            center: end_state.0,
            radius: ws.robot_radius,
        };
        if !ball_strictly_in_ball(&robot, &ws.regions[setup.dest].ball) {
            warnings.push(format!(
                "robot not strictly inside region {} at the end of the leg",
                setup.dest_id
            ));
        }
    }
    let feasible = violations.is_empty() && nominal.duration_steps.is_some();
    TransitionResult {
        source: setup.source_id.clone(),
        dest: setup.dest_id.clone(),
        start_time,
        duration: setup.h * Rational::from_integer(duration_steps as i64),
        duration_steps,
        feasible,
        outcome: nominal.outcome.clone(),
        violations,
        warnings,
        tube,
        tail,
        epsilon: terminal.epsilon,
        steady_state_radius: terminal.steady_state_radius(),
        terminal_limit: terminal.limiting,
        solves: nominal.solves.clone(),
        end_state,
        log,
    }
}

/// Coupled loop in which the FHOCP is re-initialised from the measured
/// state at every sample.
fn navigate_measured<const N: usize>(
    setup: &LegSetup<N>,
    ws: &Workspace<N>,
    real_start: &NominalState<N>,
    disturbance: &DisturbanceSignal,
    start_time: f64,
    opts: &NavigationOptions,
) -> Result<TransitionResult<N>, NavError> {
    let problem = &setup.problem;
    let model = problem.model();
    let m = problem.substeps();
    let h = problem.h();
    let dt = h / m as f64;
    let target = setup.target();
    let radius = setup.steady_state_radius();
    let tail_steps = (opts.tail / h).round() as usize;
    let max_steps = (opts.timeout / h).round() as usize;
    let zero = Vector::<N>::zeros();
    let gains = &setup.gains;

    let mut rh = RecedingHorizon::new(problem.clone());
    let mut real = *real_start;
    let mut log = Vec::new();
    let mut states = vec![real];
    let mut controls = Vec::new();
    let mut fired = None;
    let mut tube = TubeStats::default();
    let mut k = 0usize;
    let outcome = loop {
        if k >= 1 && fired.is_none() && within_radius(&real, &target, radius) {
            fired = Some(k);
        }
        if let Some(f) = fired {
            if k >= f + tail_steps {
                break LegOutcome::Completed;
            }
        } else if k >= max_steps {
            break LegOutcome::Timeout { after: k as f64 * h };
        }
        let sol = match rh.step(&real) {
            Ok(sol) => sol,
            Err(FhocpError::InfeasibleStart { max_violation, worst }) => {
                break LegOutcome::Infeasible {
                    after: k as f64 * h,
                    detail: format!("initial problem infeasible: {max_violation:.3e} ({worst})"),
                }
            }
            Err(e) => return Err(e.into()),
        };
        let u_bar = sol.controls[0];
        controls.push(u_bar);
        let mut nominal = real;
        for s in 0..m {
            let t = (k * m + s) as f64 * dt;
            let kappa =
                ancillary_feedback(gains, &(real.0 - target), &real.1, &(nominal.0 - target), &nominal.1);
            let raw = u_bar + kappa;
            let u = model.input_box.project(&raw);
            if u != raw {
                tube.saturated_steps += 1;
            }
            let d = disturbance.sample::<N>(start_time + t);
            log.push(LogRow {
                t,
                pos: real.0,
                vel: real.1,
                nominal_pos: nominal.0,
                nominal_vel: nominal.1,
                u,
                u_nominal: u_bar,
                d,
            });
            real = rk4_step(model, &real.0, &real.1, &u, &d, dt)?;
            nominal = rk4_step(model, &nominal.0, &nominal.1, &u_bar, &zero, dt)?;
            states.push(nominal);
        }
        k += 1;
    };
    let t_end = (k * m) as f64 * dt;
    log.push(LogRow {
        t: t_end,
        pos: real.0,
        vel: real.1,
        nominal_pos: real.0,
        nominal_vel: real.1,
        u: controls.last().copied().unwrap_or(problem.terminal().u_eq),
        u_nominal: controls.last().copied().unwrap_or(problem.terminal().u_eq),
        d: disturbance.sample::<N>(start_time + t_end),
    });
    let nominal = NominalLeg {
        duration_steps: fired,
        controls,
        states,
        solves: rh.records,
        outcome,
    };
    Ok(assess(setup, ws, &nominal, log, tube, start_time))
}

/// Drive from `start` (whose robot ball must lie inside the source region)
/// to the destination center. The nominal run starts at `nominal_start`,
/// normally the source center at rest.
#[allow(clippy::too_many_arguments)]
pub fn navigate<const N: usize>(
    setup: &LegSetup<N>,
    ws: &Workspace<N>,
    nominal_start: &NominalState<N>,
    real_start: &NominalState<N>,
    disturbance: &DisturbanceSignal,
    start_time: f64,
    opts: &NavigationOptions,
) -> Result<TransitionResult<N>, NavError> {
    let robot = ws.robot_ball(&real_start.0);
    if !ball_strictly_in_ball(&robot, &ws.regions[setup.source].ball) {
        return Err(NavError::StartOutsideSource(setup.source_id.clone()));
    }
    match setup.init {
        InitMode::Nominal => {
            let nominal = plan_nominal(setup, nominal_start, opts)?;
            replay_real(setup, ws, &nominal, real_start, disturbance, start_time)
        }
        InitMode::Measured => navigate_measured(setup, ws, real_start, disturbance, start_time, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LinearDynamics, PlanarExample};
    use crate::exact::to_f64;
    use crate::geometry::Aabb;
    use crate::tube::design_gains;
    use crate::workspace::Region;
    use nalgebra::Vector2;
    use std::collections::BTreeSet;
    use std::sync::Arc;

    fn region(id: &str, x: f64, y: f64, radius: f64) -> Region<2> {
        Region {
            id: id.into(),
            ball: Ball {
                center: Vector2::new(x, y),
                radius,
            },
            labels: BTreeSet::new(),
        }
    }

    fn workspace() -> Workspace<2> {
        Workspace {
            bounds: Aabb::symmetric(5.0),
            robot_radius: 0.2,
            regions: vec![
                region("a", -2.0, -2.0, 0.7),
                region("b", 1.0, 0.5, 0.7),
                region("c", -1.5, 1.5, 0.7),
            ],
        }
    }

    fn model(planar: bool) -> RobotModel<2> {
        RobotModel {
            dynamics: if planar {
                Arc::new(PlanarExample)
            } else {
                Arc::new(LinearDynamics::<2>::double_integrator())
            },
            velocity_box: Aabb::symmetric(5.0),
            input_box: Aabb::symmetric(2.125),
            lipschitz: if planar { 2.5 } else { 1.0 },
            j_lower: 1.0,
        }
    }

    fn gains() -> TubeGains {
        design_gains(2.5, 1.0, 0.25, 3.0, 1.1).unwrap()
    }

    fn config() -> FhocpConfig {
        FhocpConfig::new(0.1, 12, DMatrix::identity(4, 4), DMatrix::identity(2, 2) * 0.5)
    }

    fn options() -> NavigationOptions {
        NavigationOptions {
            mode: TubeMode::MonitorOnly { input_reserve: 0.375 },
            ..NavigationOptions::default()
        }
    }

    fn at_rest(ws: &Workspace<2>, i: usize) -> NominalState<2> {
        (ws.regions[i].ball.center, Vector2::zeros())
    }

    #[test]
    fn assumption4_matches_direct_inequality() {
        let g = gains();
        let mut ws = workspace();
        ws.regions = vec![region("a", 0.0, 0.0, 0.7), region("b", 5.0, 0.0, 0.7)];
        let rep = check_assumption4(&ws, &g);
        assert!((rep.required_gap - (0.4 + 2.0 * 0.25 / g.min_alpha().sqrt())).abs() < 1e-12);
        assert!(rep.holds());
        assert!((rep.min_gap.unwrap().gap - 3.6).abs() < 1e-12);

        ws.regions[1].ball.center = Vector2::zeros();
        let rep = check_assumption4(&ws, &g);
        assert!(!rep.holds());
        assert!(!rep.pair_ok(1, 0));
    }

    #[test]
    fn assumption4_degenerates_to_disjointness() {
        let g = TubeGains {
            r_e: 0.0,
            r_v: 0.0,
            disturbance_bound: 0.0,
            ..gains()
        };
        let mut ws = workspace();
        ws.robot_radius = 0.0;
        ws.regions = vec![region("a", 0.0, 0.0, 0.7), region("b", 1.41, 0.0, 0.7)];
        assert!(check_assumption4(&ws, &g).holds());
        ws.regions[1].ball.center.x = 1.4;
        assert!(!check_assumption4(&ws, &g).holds());
    }

    #[test]
    fn steady_state_test_examples() {
        let target = Vector2::new(1.0, -1.0);
        let p = DMatrix::identity(4, 4);
        assert!(steady_state_reached(&(target, Vector2::zeros()), &target, &p, 0.1));
        let edge = (target + Vector2::new(0.125, 0.0), Vector2::new(0.0, 0.125));
        assert!(steady_state_reached(&edge, &target, &p, 0.125));
        let far = (target + Vector2::new(0.2, 0.0), Vector2::zeros());
        assert!(!steady_state_reached(&far, &target, &p, 0.1));
        // λ_min = 4 halves the radius.
        let p4 = DMatrix::identity(4, 4) * 4.0;
        assert!(!steady_state_reached(&edge, &target, &p4, 0.125));
    }

    #[test]
    fn start_at_destination_takes_one_period() {
        let ws = workspace();
        let m = model(true);
        let setup = prepare_leg(&ws, &m, &gains(), &config(), &options(), 1, 1).unwrap();
        let s = at_rest(&ws, 1);
        let r = navigate(&setup, &ws, &s, &s, &DisturbanceSignal::Zero, 0.0, &options()).unwrap();
        assert!(r.feasible, "{:?}", r.violations);
        assert_eq!(r.duration_steps, 1);
        assert_eq!(r.duration, Rational::new(1, 10));
    }

    #[test]
    fn start_outside_source_is_rejected() {
        let ws = workspace();
        let m = model(false);
        let setup = prepare_leg(&ws, &m, &gains(), &config(), &options(), 0, 1).unwrap();
        let s = (Vector2::new(-2.0, -1.5), Vector2::zeros());
        let err = navigate(&setup, &ws, &s, &s, &DisturbanceSignal::Zero, 0.0, &options());
        assert_eq!(err.unwrap_err(), NavError::StartOutsideSource("a".into()));
    }

    #[test]
    fn planar_leg_is_safe_and_inside_the_tube() {
        let ws = workspace();
        let m = model(true);
        let setup = prepare_leg(&ws, &m, &gains(), &config(), &options(), 0, 1).unwrap();
        let s = at_rest(&ws, 0);
        let d = DisturbanceSignal::Sinusoidal { bound: 0.25 };
        let r = navigate(&setup, &ws, &s, &s, &d, 0.0, &options()).unwrap();
        assert!(r.feasible, "{:?}", r.violations);
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
        assert!(r.duration_steps > 0);
        // Duration is an exact multiple of h.
        assert_eq!(r.duration, Rational::new(r.duration_steps as i64, 10));
        assert_eq!(r.tube.violations, 0);
        assert_eq!(r.tail.violations, 0);
        assert_eq!(r.tail.samples, 201);
        // Independent recomputation from the log.
        for row in &r.log {
            assert!((row.pos - row.nominal_pos).norm() <= setup.gains.r_e);
            assert!((row.vel - row.nominal_vel).norm() <= setup.gains.r_v);
            assert!(ws.robot_inside_bounds(&row.pos));
            assert!(ws.clearance(&row.pos, 2) > 0.0);
            assert!(m.input_box.contains_point(&row.u));
        }
        let end = ws.robot_ball(&r.end_state.0);
        assert!(ball_strictly_in_ball(&end, &ws.regions[1].ball));
        let dur = to_f64(&r.duration);
        let at_end = r.log.iter().find(|row| (row.t - dur).abs() < 1e-9).unwrap();
        assert_eq!(at_end.pos, r.end_state.0);
    }

    #[test]
    fn zero_disturbance_tracks_the_nominal_exactly() {
        let ws = workspace();
        let m = model(true);
        let setup = prepare_leg(&ws, &m, &gains(), &config(), &options(), 0, 2).unwrap();
        let s = at_rest(&ws, 0);
        let r = navigate(&setup, &ws, &s, &s, &DisturbanceSignal::Zero, 0.0, &options()).unwrap();
        assert!(r.feasible, "{:?}", r.violations);
        assert_eq!(r.tube.max_position_deviation, 0.0);
        assert_eq!(r.tube.max_velocity_deviation, 0.0);
        let nominal = plan_nominal(&setup, &s, &options()).unwrap();
        assert_eq!(nominal.duration_steps, Some(r.duration_steps));
        let last = r.log.last().unwrap();
        assert_eq!((last.nominal_pos, last.nominal_vel), *nominal.states.last().unwrap());
    }

    #[test]
    fn durations_are_deterministic_and_disturbance_independent() {
        let ws = workspace();
        let m = model(true);
        let setup = prepare_leg(&ws, &m, &gains(), &config(), &options(), 2, 1).unwrap();
        let s = at_rest(&ws, 2);
        let run = |d: &DisturbanceSignal| navigate(&setup, &ws, &s, &s, d, 0.0, &options()).unwrap();
        let a = run(&DisturbanceSignal::Zero);
        let b = run(&DisturbanceSignal::UniformRandom {
            bound: 0.25,
            hold: 0.01,
            seed: 3,
        });
        let c = run(&DisturbanceSignal::Zero);
        assert_eq!(a.duration, b.duration);
        assert_eq!(a.log, c.log);
        assert!(b.feasible, "{:?}", b.violations);
    }

    #[test]
    fn measured_init_duration_close_to_nominal() {
        let ws = workspace();
        let m = model(true);
        let mut cfg = config();
        let s = at_rest(&ws, 0);
        let nominal = prepare_leg(&ws, &m, &gains(), &cfg, &options(), 0, 1).unwrap();
        let base = navigate(&nominal, &ws, &s, &s, &DisturbanceSignal::Zero, 0.0, &options()).unwrap();
        cfg.init = InitMode::Measured;
        let measured = prepare_leg(&ws, &m, &gains(), &cfg, &options(), 0, 1).unwrap();
        let d = DisturbanceSignal::Sinusoidal { bound: 0.25 };
        let r = navigate(&measured, &ws, &s, &s, &d, 0.0, &options()).unwrap();
        assert!(r.feasible, "{:?}", r.violations);
        assert!(r.duration_steps.abs_diff(base.duration_steps) <= 5);
        assert_eq!(r.tail.violations, 0);
    }

    #[test]
    fn small_destination_warns() {
        let mut ws = workspace();
        ws.regions[1].ball.radius = 0.45;
        let setup = prepare_leg(&ws, &model(false), &gains(), &config(), &options(), 0, 1).unwrap();
        assert!(setup.warnings.iter().any(|w| w.contains("too small")));
    }

    #[test]
    fn timeout_is_reported_as_infeasible() {
        let ws = workspace();
        let m = model(false);
        let opts = NavigationOptions {
            timeout: 0.5,
            ..options()
        };
        let setup = prepare_leg(&ws, &m, &gains(), &config(), &opts, 0, 1).unwrap();
        let s = at_rest(&ws, 0);
        let r = navigate(&setup, &ws, &s, &s, &DisturbanceSignal::Zero, 0.0, &opts).unwrap();
        assert!(!r.feasible);
        assert!(matches!(r.outcome, LegOutcome::Timeout { .. }));
        assert!(r.violations[0].contains("timeout"));
    }
}
