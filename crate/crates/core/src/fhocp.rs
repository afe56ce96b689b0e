//! Nominal finite-horizon optimal control problem: terminal ingredients,
//! a single-shooting augmented-Lagrangian solver with a projected spectral
//! gradient inner loop, an independent feasibility checker, and the
//! receding-horizon loop that re-solves the problem every sampling period.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    equilibrium_input, linearize, rk4_step, DynamicsError, Matrix, RobotModel, Vector,
};
use crate::linalg::{self, LinalgError};
use crate::tube::TightenedSets;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FhocpError {
    #[error("terminal design failed ({condition}): {detail}")]
    TerminalDesign {
        condition: TerminalCondition,
        detail: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("initial FHOCP infeasible: max violation {max_violation:.3e} ({worst})")]
    InfeasibleStart { max_violation: f64, worst: String },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// The condition that limits (or defeats) the terminal level `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalCondition {
    Equilibrium,
    Stabilizability,
    WeightNotPositiveDefinite,
    /// `u_eq + Kξ ∈ Ū`.
    InputBound,
    /// `d/dt ‖ξ‖²_P ≤ −‖ξ‖²_Q̃`.
    Decrease,
    /// `ξ ∈ Ē × V̄`.
    StateSet,
    /// The steady-state position ball no longer fits inside the destination.
    GeometricCap,
    SearchLimit,
}

impl fmt::Display for TerminalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Equilibrium => "equilibrium input",
            Self::Stabilizability => "stabilizability",
            Self::WeightNotPositiveDefinite => "positive definiteness of P",
            Self::InputBound => "local control inside tightened input set",
            Self::Decrease => "terminal decrease condition",
            Self::StateSet => "terminal set inside tightened state set",
            Self::GeometricCap => "steady-state ball inside destination",
            Self::SearchLimit => "search limit",
        };
        f.write_str(s)
    }
}

/// Quadratic form on `ξ = (e, v)` stored as `N × N` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateWeight<const N: usize> {
    pub ee: Matrix<N>,
    pub ev: Matrix<N>,
    pub vv: Matrix<N>,
}

impl<const N: usize> StateWeight<N> {
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self, FhocpError> {
        if m.shape() != (2 * N, 2 * N) {
            return Err(FhocpError::Config(format!(
                "state weight must be {}x{}, got {}x{}",
                2 * N,
                2 * N,
                m.nrows(),
                m.ncols()
            )));
        }
        let s = (m + m.transpose()) * 0.5;
        Ok(Self {
            ee: Matrix::<N>::from_fn(|i, j| s[(i, j)]),
            ev: Matrix::<N>::from_fn(|i, j| s[(i, N + j)]),
            vv: Matrix::<N>::from_fn(|i, j| s[(N + i, N + j)]),
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(2 * N, 2 * N);
        for i in 0..N {
            for j in 0..N {
                m[(i, j)] = self.ee[(i, j)];
                m[(i, N + j)] = self.ev[(i, j)];
                m[(N + j, i)] = self.ev[(i, j)];
                m[(N + i, N + j)] = self.vv[(i, j)];
            }
        }
        m
    }

    #[inline]
    pub fn quad(&self, e: &Vector<N>, v: &Vector<N>) -> f64 {
        e.dot(&(self.ee * e)) + 2.0 * e.dot(&(self.ev * v)) + v.dot(&(self.vv * v))
    }

    #[inline]
    pub fn grad(&self, e: &Vector<N>, v: &Vector<N>) -> (Vector<N>, Vector<N>) {
        (
            (self.ee * e + self.ev * v) * 2.0,
            (self.ev.transpose() * e + self.vv * v) * 2.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Reverse sweep through the Runge–Kutta stages.
    Adjoint,
    /// Central differences on the shooting map; slow, kept as an oracle.
    FiniteDifference,
}

/// What the FHOCP is initialised from at each sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// The nominal state propagated with `ū`; keeps `ẽ(0) = ṽ(0) = 0`.
    #[default]
    Nominal,
    /// The measured state of the real robot.
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_inner_iterations: usize,
    pub max_outer_iterations: usize,
    pub feasibility_tol: f64,
    pub stationarity_tol: f64,
    pub initial_penalty: f64,
    pub gradient: GradientMode,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_inner_iterations: 200,
            max_outer_iterations: 25,
            feasibility_tol: 1e-6,
            stationarity_tol: 1e-6,
            initial_penalty: 10.0,
            gradient: GradientMode::Adjoint,
        }
    }
}

/// Sampling period, horizon and weights of the FHOCP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhocpConfig {
    pub h: f64,
    /// `T / h`.
    pub horizon_steps: usize,
    /// Integration sub-steps per sampling period.
    pub substeps: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub init: InitMode,
    pub solver: SolverOptions,
}

impl FhocpConfig {
    pub fn new(h: f64, horizon_steps: usize, q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        Self {
            h,
            horizon_steps,
            substeps: 10,
            q,
            r,
            init: InitMode::Nominal,
            solver: SolverOptions::default(),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.h * self.horizon_steps as f64
    }

    pub fn dt(&self) -> f64 {
        self.h / self.substeps as f64
    }

    pub fn validate(&self, n: usize) -> Result<(), FhocpError> {
        if !(self.h > 0.0) || self.horizon_steps < 2 || self.substeps == 0 {
            return Err(FhocpError::Config(format!(
                "need h > 0 and T > h (h = {}, T/h = {}, substeps = {})",
                self.h, self.horizon_steps, self.substeps
            )));
        }
        if self.q.shape() != (2 * n, 2 * n) || !linalg::is_positive_definite(&self.q) {
            return Err(FhocpError::Config("Q must be symmetric positive definite".into()));
        }
        if self.r.shape() != (n, n) || !linalg::is_positive_definite(&self.r) {
            return Err(FhocpError::Config("R must be symmetric positive definite".into()));
        }
        Ok(())
    }
}

/// How the terminal weight `P` is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalWeight {
    /// `(A+BK)ᵀP + P(A+BK) = −β Q̃`.
    Lyapunov { beta: f64 },
    Given { matrix: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalOptions {
    pub weight: TerminalWeight,
    pub samples: usize,
    pub seed: u64,
    /// Upper bound on `ε / √λ_min(P)`.
    pub position_cap: Option<f64>,
    pub epsilon_limit: f64,
}

impl Default for TerminalOptions {
    fn default() -> Self {
        Self {
            weight: TerminalWeight::Lyapunov { beta: 1.05 },
            samples: 1000,
            seed: 7,
            position_cap: None,
            epsilon_limit: 1e3,
        }
    }
}

/// Local controller `u = u_eq + K_e e + K_v v`, terminal weight `P` and level `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalIngredients<const N: usize> {
    pub target: Vector<N>,
    pub u_eq: Vector<N>,
    pub k_pos: Matrix<N>,
    pub k_vel: Matrix<N>,
    pub p: StateWeight<N>,
    pub q_tilde: StateWeight<N>,
    pub epsilon: f64,
    pub lambda_min_p: f64,
    pub limiting: TerminalCondition,
}

impl<const N: usize> TerminalIngredients<N> {
    pub fn local_control(&self, e: &Vector<N>, v: &Vector<N>) -> Vector<N> {
        self.u_eq + self.k_pos * e + self.k_vel * v
    }

    /// `ε / √λ_min(P)`: the Algorithm-1 threshold on `‖ē‖` and `‖v̄‖`.
    pub fn steady_state_radius(&self) -> f64 {
        self.epsilon / self.lambda_min_p.sqrt()
    }

    pub fn p_norm(&self, e: &Vector<N>, v: &Vector<N>) -> f64 {
        self.p.quad(e, v).max(0.0).sqrt()
    }

    pub fn in_terminal_set(&self, e: &Vector<N>, v: &Vector<N>) -> bool {
        self.p_norm(e, v) <= self.epsilon
    }
}

/// `d/dt ‖ξ‖²_P + ‖ξ‖²_Q̃` under the nominal dynamics and the local controller;
/// nonpositive where the terminal decrease condition holds.
pub fn decrease_margin<const N: usize>(
    model: &RobotModel<N>,
    ti: &TerminalIngredients<N>,
    e: &Vector<N>,
    v: &Vector<N>,
) -> f64 {
    let u = ti.local_control(e, v);
    let acc = model.accel(&(ti.target + e), v, &u);
    let (ge, gv) = ti.p.grad(e, v);
    ge.dot(v) + gv.dot(&acc) + ti.q_tilde.quad(e, v)
}

fn block_gain<const N: usize>(k: &DMatrix<f64>) -> (Matrix<N>, Matrix<N>) {
    (
        Matrix::<N>::from_fn(|i, j| k[(i, j)]),
        Matrix::<N>::from_fn(|i, j| k[(i, N + j)]),
    )
}

/// Unit directions on the `P`-sphere: coordinate axes plus uniform samples.
fn p_sphere_points<const N: usize>(
    p: &DMatrix<f64>,
    samples: usize,
    seed: u64,
) -> Option<Vec<(Vector<N>, Vector<N>)>> {
    let s = linalg::spd_inv_sqrt(p)?;
    let dim = 2 * N;
    let mut dirs: Vec<DVector<f64>> = Vec::with_capacity(samples + 2 * dim);
    for i in 0..dim {
        for sign in [1.0, -1.0] {
            let mut d = DVector::zeros(dim);
            d[i] = sign;
            dirs.push(d);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while dirs.len() < samples + 2 * dim {
        let d = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
        let n = d.norm();
        if n > 1e-3 && n <= 1.0 {
            dirs.push(d / n);
        }
    }
    Some(
        dirs.into_iter()
            .map(|d| {
                let x = &s * d;
                (
                    Vector::<N>::from_fn(|i, _| x[i]),
                    Vector::<N>::from_fn(|i, _| x[N + i]),
                )
            })
            .collect(),
    )
}

const TERMINAL_LEVELS: [f64; 4] = [1.0, 0.75, 0.5, 0.25];
const EPSILON_MIN: f64 = 1e-6;

/// LQR local gain at the destination, terminal weight and the largest
/// sampled-verified level `ε`.
pub fn terminal_ingredients<const N: usize>(
    model: &RobotModel<N>,
    sets: &TightenedSets<N>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    opts: &TerminalOptions,
) -> Result<TerminalIngredients<N>, FhocpError> {
    let target = sets.target;
    let u_eq = equilibrium_input(model, &target, &sets.u_box).map_err(|e| {
        FhocpError::TerminalDesign {
            condition: TerminalCondition::Equilibrium,
            detail: e.to_string(),
        }
    })?;
    let zero = Vector::<N>::zeros();
    let (a, b) = linearize(model, &target, &zero, &u_eq);
    if !linalg::is_stabilizable(&a, &b) {
        return Err(FhocpError::TerminalDesign {
            condition: TerminalCondition::Stabilizability,
            detail: "linearization at the destination is not stabilizable".into(),
        });
    }
    let k = linalg::lqr_gain(&a, &b, q, r)?;
    let acl = &a + &b * &k;
    let q_tilde = q + k.transpose() * r * &k;
    let p = match &opts.weight {
        TerminalWeight::Lyapunov { beta } => linalg::solve_lyapunov(&acl, &(&q_tilde * *beta))?,
        TerminalWeight::Given { matrix } => matrix.clone(),
    };
    if p.shape() != (2 * N, 2 * N) || !linalg::is_positive_definite(&p) {
        return Err(FhocpError::TerminalDesign {
            condition: TerminalCondition::WeightNotPositiveDefinite,
            detail: "terminal weight P is not symmetric positive definite".into(),
        });
    }
    let (k_pos, k_vel) = block_gain::<N>(&k);
    let mut ti = TerminalIngredients {
        target,
        u_eq,
        k_pos,
        k_vel,
        p: StateWeight::from_dense(&p)?,
        q_tilde: StateWeight::from_dense(&q_tilde)?,
        epsilon: 0.0,
        lambda_min_p: linalg::min_sym_eigenvalue(&p),
        limiting: TerminalCondition::SearchLimit,
    };
    let points = p_sphere_points::<N>(&p, opts.samples, opts.seed).ok_or_else(|| {
        FhocpError::TerminalDesign {
            condition: TerminalCondition::WeightNotPositiveDefinite,
            detail: "P has no inverse square root".into(),
        }
    })?;
    let check = |eps: f64| -> Result<(), TerminalCondition> {
        if let Some(cap) = opts.position_cap {
            if eps / ti.lambda_min_p.sqrt() > cap {
                return Err(TerminalCondition::GeometricCap);
            }
        }
        for (pe, pv) in &points {
            for level in TERMINAL_LEVELS {
                let e = pe * (eps * level);
                let v = pv * (eps * level);
                if !sets.u_box.contains_point(&ti.local_control(&e, &v)) {
                    return Err(TerminalCondition::InputBound);
                }
                let inside_state = sets.e_box.contains_point(&e)
                    && sets.v_box.contains_point(&v)
                    && sets.e_forbidden.iter().all(|b| (e - b.center).norm() > b.radius);
                if !inside_state {
                    return Err(TerminalCondition::StateSet);
                }
                if decrease_margin(model, &ti, &e, &v) > 0.0 {
                    return Err(TerminalCondition::Decrease);
                }
            }
        }
        Ok(())
    };
    if let Err(c) = check(EPSILON_MIN) {
        return Err(FhocpError::TerminalDesign {
            condition: c,
            detail: format!("fails already at epsilon = {EPSILON_MIN:e}"),
        });
    }
    let mut lo = EPSILON_MIN;
    let mut hi = f64::NAN;
    let mut limiting = TerminalCondition::SearchLimit;
    while lo < opts.epsilon_limit {
        let t = (lo * 2.0).min(opts.epsilon_limit);
        match check(t) {
            Ok(()) => lo = t,
            Err(c) => {
                hi = t;
                limiting = c;
                break;
            }
        }
    }
    if hi.is_finite() {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            match check(mid) {
                Ok(()) => lo = mid,
                Err(c) => {
                    hi = mid;
                    limiting = c;
                }
            }
            if hi - lo <= 1e-10 * hi {
                break;
            }
        }
    }
    ti.epsilon = lo;
    ti.limiting = limiting;
    Ok(ti)
}

/// Nominal state `(χ̄, v̄)` in absolute coordinates.
pub type NominalState<const N: usize> = (Vector<N>, Vector<N>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub cost: f64,
    /// Largest path or input violation (distance units; 0 when satisfied).
    pub max_path_violation: f64,
    pub worst: String,
    /// `‖ξ̄(t_k + T)‖_P`.
    pub terminal_norm: f64,
    pub path_feasible: bool,
    pub terminal_feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution<const N: usize> {
    pub controls: Vec<Vector<N>>,
    /// Predicted nominal states at the `N + 1` sampling instants.
    pub predicted: Vec<NominalState<N>>,
    pub cost: f64,
    pub feasible: bool,
    pub report: FeasibilityReport,
    pub iterations: usize,
    pub outer_iterations: usize,
    #[serde(skip)]
    multipliers: Vec<f64>,
}

/// One instance of the FHOCP for a fixed destination and tightened sets.
#[derive(Debug, Clone)]
pub struct Fhocp<const N: usize> {
    model: RobotModel<N>,
    sets: TightenedSets<N>,
    terminal: TerminalIngredients<N>,
    q: StateWeight<N>,
    r: Matrix<N>,
    h: f64,
    steps: usize,
    substeps: usize,
    options: SolverOptions,
}

struct Evaluation<const N: usize> {
    value: f64,
    grad: Vec<Vector<N>>,
    constraints: Vec<f64>,
}

impl<const N: usize> Fhocp<N> {
    pub fn new(
        model: &RobotModel<N>,
        config: &FhocpConfig,
        sets: &TightenedSets<N>,
        terminal: &TerminalIngredients<N>,
    ) -> Result<Self, FhocpError> {
        config.validate(N)?;
        Ok(Self {
            model: model.clone(),
            sets: sets.clone(),
            terminal: terminal.clone(),
            q: StateWeight::from_dense(&config.q)?,
            r: Matrix::<N>::from_fn(|i, j| 0.5 * (config.r[(i, j)] + config.r[(j, i)])),
            h: config.h,
            steps: config.horizon_steps,
            substeps: config.substeps,
            options: config.solver.clone(),
        })
    }

    pub fn terminal(&self) -> &TerminalIngredients<N> {
        &self.terminal
    }

    pub fn sets(&self) -> &TightenedSets<N> {
        &self.sets
    }

    pub fn model(&self) -> &RobotModel<N> {
        &self.model
    }

    pub fn horizon_steps(&self) -> usize {
        self.steps
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    fn dt(&self) -> f64 {
        self.h / self.substeps as f64
    }

    fn constraints_per_node(&self) -> usize {
        4 * N + self.sets.e_forbidden.len()
    }

    fn multiplier_len(&self) -> usize {
        self.steps * self.substeps * self.constraints_per_node() + 1
    }

    fn project(&self, u: &Vector<N>) -> Vector<N> {
        self.sets.u_box.project(u)
    }

    #[inline]
    fn stage_cost(&self, e: &Vector<N>, v: &Vector<N>, u: &Vector<N>) -> f64 {
        let du = u - self.terminal.u_eq;
        self.q.quad(e, v) + du.dot(&(self.r * du))
    }

    /// Scaled constraint values at one node with their gradients folded into
    /// `(ge, gv)` through `weight(index, g) -> multiplier`.
    #[inline]
    fn node_constraints(
        &self,
        e: &Vector<N>,
        v: &Vector<N>,
        out: &mut [f64],
    ) {
        let eb = &self.sets.e_box;
        let vb = &self.sets.v_box;
        for i in 0..N {
            out[2 * i] = e[i] - eb.upper[i];
            out[2 * i + 1] = eb.lower[i] - e[i];
            out[2 * N + 2 * i] = v[i] - vb.upper[i];
            out[2 * N + 2 * i + 1] = vb.lower[i] - v[i];
        }
        for (m, b) in self.sets.e_forbidden.iter().enumerate() {
            let d = e - b.center;
            out[4 * N + m] = (b.radius * b.radius - d.norm_squared()) / (2.0 * b.radius);
        }
    }

    #[inline]
    fn node_constraint_grad(
        &self,
        e: &Vector<N>,
        idx: usize,
        w: f64,
        ge: &mut Vector<N>,
        gv: &mut Vector<N>,
    ) {
        if idx < 2 * N {
            let i = idx / 2;
            ge[i] += if idx % 2 == 0 { w } else { -w };
        } else if idx < 4 * N {
            let i = (idx - 2 * N) / 2;
            gv[i] += if idx % 2 == 0 { w } else { -w };
        } else {
            let b = &self.sets.e_forbidden[idx - 4 * N];
            *ge -= (e - b.center) * (w / b.radius);
        }
    }

    fn terminal_constraint(&self, e: &Vector<N>, v: &Vector<N>) -> f64 {
        let eps2 = self.terminal.epsilon * self.terminal.epsilon;
        (self.terminal.p.quad(e, v) - eps2) / eps2
    }

    /// Cost plus augmented-Lagrangian penalty, with the adjoint gradient
    /// when requested. `e0` is in error coordinates.
    fn evaluate(
        &self,
        e0: &Vector<N>,
        v0: &Vector<N>,
        u: &[Vector<N>],
        lam: &[f64],
        mu: f64,
        hard: bool,
        want_grad: bool,
    ) -> Evaluation<N> {
        let m = self.substeps;
        let dt = self.dt();
        let half = 0.5 * dt;
        let nc = self.constraints_per_node();
        let total = self.steps * m;
        let tgt = self.terminal.target;
        let f = self.model.dynamics.as_ref();

        let mut nodes = Vec::with_capacity(total + 1);
        let mut stages: Vec<[(Vector<N>, Vector<N>); 4]> =
            Vec::with_capacity(if want_grad { total } else { 0 });
        nodes.push((*e0, *v0));
        let mut cost = 0.0;
        for ui in u.iter().take(self.steps) {
            let du = ui - self.terminal.u_eq;
            let lu = du.dot(&(self.r * du));
            for _ in 0..m {
                let (e, v) = nodes[nodes.len() - 1];
                let a1 = f.accel(&(e + tgt), &v, ui);
                let l1 = self.q.quad(&e, &v) + lu;
                let (e2, v2) = (e + v * half, v + a1 * half);
                let a2 = f.accel(&(e2 + tgt), &v2, ui);
                let l2 = self.q.quad(&e2, &v2) + lu;
                let (e3, v3) = (e + v2 * half, v + a2 * half);
                let a3 = f.accel(&(e3 + tgt), &v3, ui);
                let l3 = self.q.quad(&e3, &v3) + lu;
                let (e4, v4) = (e + v3 * dt, v + a3 * dt);
                let a4 = f.accel(&(e4 + tgt), &v4, ui);
                let l4 = self.q.quad(&e4, &v4) + lu;
                let sixth = dt / 6.0;
                nodes.push((
                    e + (v + v2 * 2.0 + v3 * 2.0 + v4) * sixth,
                    v + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * sixth,
                ));
                cost += (l1 + 2.0 * l2 + 2.0 * l3 + l4) * sixth;
                if want_grad {
                    stages.push([(e, v), (e2, v2), (e3, v3), (e4, v4)]);
                }
            }
        }
        let (en, vn) = nodes[total];
        cost += self.terminal.p.quad(&en, &vn);

        let mut constraints = vec![0.0; total * nc + 1];
        for j in 1..=total {
            let (e, v) = nodes[j];
            self.node_constraints(&e, &v, &mut constraints[(j - 1) * nc..j * nc]);
        }
        constraints[total * nc] = if hard {
            self.terminal_constraint(&en, &vn)
        } else {
            f64::NEG_INFINITY
        };

        let mut value = cost;
        let mut weights = vec![0.0; constraints.len()];
        for (k, &g) in constraints.iter().enumerate() {
            if !g.is_finite() {
                continue;
            }
            let l = lam.get(k).copied().unwrap_or(0.0);
            let t = l + mu * g;
            if t > 0.0 {
                value += (t * t - l * l) / (2.0 * mu);
                weights[k] = t;
            } else {
                value -= l * l / (2.0 * mu);
            }
        }
        if !want_grad {
            return Evaluation {
                value,
                grad: Vec::new(),
                constraints,
            };
        }

        let (mut lam_e, mut lam_v) = self.terminal.p.grad(&en, &vn);
        if hard && weights[total * nc] > 0.0 {
            let eps2 = self.terminal.epsilon * self.terminal.epsilon;
            let (pe, pv) = self.terminal.p.grad(&en, &vn);
            lam_e += pe * (weights[total * nc] / eps2);
            lam_v += pv * (weights[total * nc] / eps2);
        }
        let mut grad = vec![Vector::<N>::zeros(); self.steps];
        let w = [dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0];
        for j in (0..total).rev() {
            // Penalty gradient at node j + 1.
            let (e_next, _) = nodes[j + 1];
            for c in 0..nc {
                let wk = weights[j * nc + c];
                if wk > 0.0 {
                    self.node_constraint_grad(&e_next, c, wk, &mut lam_e, &mut lam_v);
                }
            }
            let ui = &u[j / m];
            let st = &stages[j];
            let mut gu = Vector::<N>::zeros();
            let mut back = |s: &(Vector<N>, Vector<N>), ae: Vector<N>, av: Vector<N>, ac: f64| {
                let jac = self.model.jacobians(&(s.0 + tgt), &s.1, ui);
                let (qe, qv) = self.q.grad(&s.0, &s.1);
                gu += jac.wrt_input.transpose() * av
                    + self.r * (ui - self.terminal.u_eq) * (2.0 * ac);
                (
                    jac.wrt_pos.transpose() * av + qe * ac,
                    ae + jac.wrt_vel.transpose() * av + qv * ac,
                )
            };
            let (ge4, gv4) = back(&st[3], lam_e * w[3], lam_v * w[3], w[3]);
            let (ge3, gv3) = back(&st[2], lam_e * w[2] + ge4 * dt, lam_v * w[2] + gv4 * dt, w[2]);
            let (ge2, gv2) =
                back(&st[1], lam_e * w[1] + ge3 * half, lam_v * w[1] + gv3 * half, w[1]);
            let (ge1, gv1) =
                back(&st[0], lam_e * w[0] + ge2 * half, lam_v * w[0] + gv2 * half, w[0]);
            grad[j / m] += gu;
            lam_e += ge1 + ge2 + ge3 + ge4;
            lam_v += gv1 + gv2 + gv3 + gv4;
        }
        Evaluation {
            value,
            grad,
            constraints,
        }
    }

    fn gradient_fd(
        &self,
        e0: &Vector<N>,
        v0: &Vector<N>,
        u: &[Vector<N>],
        lam: &[f64],
        mu: f64,
        hard: bool,
    ) -> Vec<Vector<N>> {
        let step = 1e-6;
        let mut grad = vec![Vector::<N>::zeros(); u.len()];
        let mut work = u.to_vec();
        for i in 0..u.len() {
            for c in 0..N {
                let orig = work[i][c];
                work[i][c] = orig + step;
                let fp = self.evaluate(e0, v0, &work, lam, mu, hard, false).value;
                work[i][c] = orig - step;
                let fm = self.evaluate(e0, v0, &work, lam, mu, hard, false).value;
                work[i][c] = orig;
                grad[i][c] = (fp - fm) / (2.0 * step);
            }
        }
        grad
    }

    fn eval_full(
        &self,
        e0: &Vector<N>,
        v0: &Vector<N>,
        u: &[Vector<N>],
        lam: &[f64],
        mu: f64,
        hard: bool,
    ) -> Evaluation<N> {
        match self.options.gradient {
            GradientMode::Adjoint => self.evaluate(e0, v0, u, lam, mu, hard, true),
            GradientMode::FiniteDifference => {
                let mut ev = self.evaluate(e0, v0, u, lam, mu, hard, false);
                ev.grad = self.gradient_fd(e0, v0, u, lam, mu, hard);
                ev
            }
        }
    }

    /// Objective gradient (cost only, no constraints) for derivative tests.
    pub fn cost_gradient(
        &self,
        start: &NominalState<N>,
        controls: &[Vector<N>],
        mode: GradientMode,
    ) -> Vec<Vector<N>> {
        let e0 = start.0 - self.terminal.target;
        match mode {
            GradientMode::Adjoint => self.evaluate(&e0, &start.1, controls, &[], 1.0, false, true).grad,
            GradientMode::FiniteDifference => self.gradient_fd(&e0, &start.1, controls, &[], 1.0, false),
        }
    }

    /// Projected spectral gradient on the input box with a nonmonotone
    /// Armijo search. Returns the iterate, its evaluation, the iteration
    /// count and whether stationarity was reached.
    fn minimize(
        &self,
        e0: &Vector<N>,
        v0: &Vector<N>,
        x0: Vec<Vector<N>>,
        lam: &[f64],
        mu: f64,
        hard: bool,
    ) -> (Vec<Vector<N>>, Evaluation<N>, usize, bool) {
        let mut x: Vec<Vector<N>> = x0.iter().map(|u| self.project(u)).collect();
        let mut ev = self.eval_full(e0, v0, &x, lam, mu, hard);
        let mut history: VecDeque<f64> = VecDeque::with_capacity(10);
        history.push_back(ev.value);
        let pg_norm = |x: &[Vector<N>], g: &[Vector<N>]| -> f64 {
            x.iter()
                .zip(g)
                .map(|(xi, gi)| (self.project(&(xi - gi)) - xi).amax())
                .fold(0.0, f64::max)
        };
        let gmax = ev.grad.iter().map(|g| g.amax()).fold(0.0, f64::max);
        let mut alpha = 1.0 / gmax.max(1.0);
        let mut iters = 0;
        let mut converged = false;
        while iters < self.options.max_inner_iterations {
            if pg_norm(&x, &ev.grad) <= self.options.stationarity_tol * (1.0 + ev.value.abs()) {
                converged = true;
                break;
            }
            iters += 1;
            let d: Vec<Vector<N>> = x
                .iter()
                .zip(&ev.grad)
                .map(|(xi, gi)| self.project(&(xi - gi * alpha)) - xi)
                .collect();
            let gd: f64 = d.iter().zip(&ev.grad).map(|(di, gi)| di.dot(gi)).sum();
            if gd >= 0.0 {
                converged = true;
                break;
            }
            let fmax = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let xn: Vec<Vector<N>> = x.iter().zip(&d).map(|(xi, di)| xi + di * t).collect();
                let vn = self.evaluate(e0, v0, &xn, lam, mu, hard, false).value;
                if vn.is_finite() && vn <= fmax + 1e-4 * t * gd {
                    accepted = Some(xn);
                    break;
                }
                t *= 0.5;
            }
            let Some(xn) = accepted else {
                break;
            };
            let evn = self.eval_full(e0, v0, &xn, lam, mu, hard);
            let mut ss = 0.0;
            let mut sy = 0.0;
            for i in 0..x.len() {
                let s = xn[i] - x[i];
                let y = evn.grad[i] - ev.grad[i];
                ss += s.dot(&s);
                sy += s.dot(&y);
            }
            alpha = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e4) } else { (alpha * 10.0).min(1e4) };
            let stalled = (ev.value - evn.value).abs() <= 1e-15 * (1.0 + ev.value.abs());
            x = xn;
            ev = evn;
            if history.len() == 10 {
                history.pop_front();
            }
            history.push_back(ev.value);
            if stalled {
                break;
            }
        }
        (x, ev, iters, converged)
    }

    /// Solve from `start` (absolute nominal state) with initial guess `warm`.
    pub fn solve(
        &self,
        start: &NominalState<N>,
        warm: &[Vector<N>],
        hard_terminal: bool,
    ) -> Result<OcpSolution<N>, FhocpError> {
        self.solve_with_multipliers(start, warm, None, hard_terminal)
    }

    fn solve_with_multipliers(
        &self,
        start: &NominalState<N>,
        warm: &[Vector<N>],
        multipliers: Option<&[f64]>,
        hard: bool,
    ) -> Result<OcpSolution<N>, FhocpError> {
        if warm.len() != self.steps {
            return Err(FhocpError::Config(format!(
                "warm start has {} controls, expected {}",
                warm.len(),
                self.steps
            )));
        }
        let e0 = start.0 - self.terminal.target;
        let v0 = start.1;
        let len = self.multiplier_len();
        let mut lam = match multipliers {
            Some(m) if m.len() == len => m.to_vec(),
            _ => vec![0.0; len],
        };
        if !hard {
            lam[len - 1] = 0.0;
        }
        let mut mu = self.options.initial_penalty;
        let mut x = warm.to_vec();
        let mut total_iters = 0;
        let mut outer = 0;
        let mut prev_viol = f64::INFINITY;
        while outer < self.options.max_outer_iterations {
            outer += 1;
            let (xn, ev, it, converged) = self.minimize(&e0, &v0, x, &lam, mu, hard);
            total_iters += it;
            x = xn;
            let viol = ev
                .constraints
                .iter()
                .filter(|g| g.is_finite())
                .fold(0.0f64, |a, &g| a.max(g));
            let mut compl = 0.0f64;
            for (l, &g) in lam.iter_mut().zip(&ev.constraints) {
                if g.is_finite() {
                    compl = compl.max((-g).min(*l / mu).abs());
                    *l = (*l + mu * g).max(0.0);
                }
            }
            if viol <= self.options.feasibility_tol
                && (converged || compl <= self.options.feasibility_tol)
            {
                break;
            }
            if viol > 0.25 * prev_viol {
                mu = (mu * 10.0).min(1e9);
            }
            prev_viol = viol;
        }
        let (report, predicted) = self.check(start, &x)?;
        Ok(OcpSolution {
            feasible: report.path_feasible && (!hard || report.terminal_feasible),
            cost: report.cost,
            controls: x,
            predicted,
            report,
            iterations: total_iters,
            outer_iterations: outer,
            multipliers: lam,
        })
    }

    /// Independent feasibility check: re-integrates the controls with
    /// [`rk4_step`] and tests every constraint at every sub-step, evaluating
    /// the cost with Simpson's rule on the sub-step grid.
    pub fn check(
        &self,
        start: &NominalState<N>,
        controls: &[Vector<N>],
    ) -> Result<(FeasibilityReport, Vec<NominalState<N>>), FhocpError> {
        let m = self.substeps;
        let dt = self.dt();
        let zero = Vector::<N>::zeros();
        let tgt = self.terminal.target;
        let mut worst = String::new();
        let mut max_viol = 0.0f64;
        let mut note = |viol: f64, what: &dyn Fn() -> String| {
            if viol > max_viol {
                max_viol = viol;
                worst = what();
            }
        };
        let mut predicted = vec![*start];
        let (mut pos, mut vel) = *start;
        let mut cost = 0.0;
        for (i, u) in controls.iter().enumerate() {
            let below = (self.sets.u_box.lower - u).max().max(0.0);
            let above = (u - self.sets.u_box.upper).max().max(0.0);
            note(below.max(above), &|| format!("input at step {i}"));
            let mut ell = Vec::with_capacity(m + 1);
            ell.push(self.stage_cost(&(pos - tgt), &vel, u));
            for s in 0..m {
                let (p, v) = rk4_step(&self.model, &pos, &vel, u, &zero, dt)?;
                pos = p;
                vel = v;
                let e = pos - tgt;
                ell.push(self.stage_cost(&e, &vel, u));
                let t = (i * m + s + 1) as f64 * dt;
                let eb = &self.sets.e_box;
                let vb = &self.sets.v_box;
                let ev = (eb.lower - e).max().max((e - eb.upper).max()).max(0.0);
                note(ev, &|| format!("state box at t = {t:.3}"));
                let vv = (vb.lower - vel).max().max((vel - vb.upper).max()).max(0.0);
                note(vv, &|| format!("velocity box at t = {t:.3}"));
                for (k, b) in self.sets.e_forbidden.iter().enumerate() {
                    let pen = b.radius - (e - b.center).norm();
                    note(pen.max(0.0), &|| format!("forbidden ball {k} at t = {t:.3}"));
                }
            }
            cost += simpson(&ell, dt);
            predicted.push((pos, vel));
        }
        let e = pos - tgt;
        let terminal_norm = self.terminal.p_norm(&e, &vel);
        cost += self.terminal.p.quad(&e, &vel);
        let tol = self.options.feasibility_tol;
        Ok((
            FeasibilityReport {
                cost,
                max_path_violation: max_viol,
                worst,
                terminal_norm,
                path_feasible: max_viol <= tol,
                terminal_feasible: terminal_norm - self.terminal.epsilon <= tol,
            },
            predicted,
        ))
    }

    /// Closed-loop local controller held over each sampling interval.
    pub fn local_controller_guess(&self, start: &NominalState<N>) -> Vec<Vector<N>> {
        let zero = Vector::<N>::zeros();
        let dt = self.dt();
        let (mut pos, mut vel) = *start;
        let mut out = Vec::with_capacity(self.steps);
        for _ in 0..self.steps {
            let u = self.project(&self.terminal.local_control(&(pos - self.terminal.target), &vel));
            out.push(u);
            for _ in 0..self.substeps {
                match rk4_step(&self.model, &pos, &vel, &u, &zero, dt) {
                    Ok((p, v)) => {
                        pos = p;
                        vel = v;
                    }
                    Err(_) => return vec![self.terminal.u_eq; self.steps],
                }
            }
        }
        out
    }

    /// Previous controls shifted by one interval, with the local controller
    /// appended at the predicted end of the shortened horizon.
    pub fn shifted_guess(&self, start: &NominalState<N>, previous: &[Vector<N>]) -> Vec<Vector<N>> {
        let zero = Vector::<N>::zeros();
        let dt = self.dt();
        let mut out: Vec<Vector<N>> = previous.iter().skip(1).copied().collect();
        let (mut pos, mut vel) = *start;
        for u in &out {
            for _ in 0..self.substeps {
                match rk4_step(&self.model, &pos, &vel, u, &zero, dt) {
                    Ok((p, v)) => {
                        pos = p;
                        vel = v;
                    }
                    Err(_) => return self.local_controller_guess(start),
                }
            }
        }
        out.push(self.project(&self.terminal.local_control(&(pos - self.terminal.target), &vel)));
        out
    }
}

fn simpson(values: &[f64], dt: f64) -> f64 {
    let n = values.len() - 1;
    let even = n - n % 2;
    let mut acc = 0.0;
    let mut i = 0;
    while i < even {
        acc += dt / 3.0 * (values[i] + 4.0 * values[i + 1] + values[i + 2]);
        i += 2;
    }
    if even < n {
        acc += 0.5 * dt * (values[n - 1] + values[n]);
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub step: usize,
    pub cost: f64,
    pub terminal_enforced: bool,
    pub feasible: bool,
    pub max_violation: f64,
    pub terminal_norm: f64,
    pub iterations: usize,
    pub kept_warm_start: bool,
}

/// Receding-horizon loop. The terminal constraint is enforced as soon as a
/// candidate satisfies it; before that only the terminal cost acts.
#[derive(Debug, Clone)]
pub struct RecedingHorizon<const N: usize> {
    problem: Fhocp<N>,
    previous: Option<OcpSolution<N>>,
    terminal_enforced: bool,
    pub records: Vec<SolveRecord>,
}

impl<const N: usize> RecedingHorizon<N> {
    pub fn new(problem: Fhocp<N>) -> Self {
        Self {
            problem,
            previous: None,
            terminal_enforced: false,
            records: Vec::new(),
        }
    }

    pub fn problem(&self) -> &Fhocp<N> {
        &self.problem
    }

    pub fn terminal_enforced(&self) -> bool {
        self.terminal_enforced
    }

    /// Solve at the current nominal state and return the accepted solution;
    /// its first control is applied over the next sampling interval.
    pub fn step(&mut self, start: &NominalState<N>) -> Result<OcpSolution<N>, FhocpError> {
        let p = &self.problem;
        let first = self.previous.is_none();
        let (warm, multipliers) = match &self.previous {
            Some(prev) => {
                let nc = p.constraints_per_node();
                let shift = p.substeps * nc;
                let mut lam: Vec<f64> = prev.multipliers.iter().skip(shift).copied().collect();
                let term = lam.pop().unwrap_or(0.0);
                lam.extend(std::iter::repeat(0.0).take(shift));
                lam.push(term);
                (p.shifted_guess(start, &prev.controls), Some(lam))
            }
            None => (p.local_controller_guess(start), None),
        };
        let (warm_report, warm_pred) = p.check(start, &warm)?;
        if !self.terminal_enforced && warm_report.path_feasible && warm_report.terminal_feasible {
            self.terminal_enforced = true;
        }
        let hard = self.terminal_enforced;
        let solved = p.solve_with_multipliers(start, &warm, multipliers.as_deref(), hard)?;
        let warm_ok = warm_report.path_feasible && (!hard || warm_report.terminal_feasible);
        let keep_warm = warm_ok && (!solved.feasible || warm_report.cost < solved.cost);
        let mut chosen = if keep_warm {
            OcpSolution {
                controls: warm,
                predicted: warm_pred,
                cost: warm_report.cost,
                feasible: true,
                report: warm_report,
                iterations: solved.iterations,
                outer_iterations: solved.outer_iterations,
                multipliers: solved.multipliers.clone(),
            }
        } else {
            solved
        };
        if !chosen.feasible && !chosen.report.path_feasible && first {
            return Err(FhocpError::InfeasibleStart {
                max_violation: chosen.report.max_path_violation,
                worst: chosen.report.worst.clone(),
            });
        }
        if !self.terminal_enforced && chosen.report.path_feasible && chosen.report.terminal_feasible
        {
            self.terminal_enforced = true;
            chosen.feasible = true;
        }
        self.records.push(SolveRecord {
            step: self.records.len(),
            cost: chosen.cost,
            terminal_enforced: hard,
            feasible: chosen.feasible,
            max_violation: chosen.report.max_path_violation,
            terminal_norm: chosen.report.terminal_norm,
            iterations: chosen.iterations,
            kept_warm_start: keep_warm,
        });
        self.previous = Some(chosen.clone());
        Ok(chosen)
    }
}
