//! Second-order robot models `χ̇ = v, v̇ = f(χ, v, u) + d`, their numerical
//! integration, bounded disturbance signals, and numerical checks of the
//! standing assumptions on `f` (smoothness at the origin, stabilizability of
//! the linearization, the lower bound on the input Jacobian and the
//! Lipschitz constants).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Aabb;
use crate::linalg;

pub type Vector<const N: usize> = SVector<f64, N>;
pub type Matrix<const N: usize> = SMatrix<f64, N, N>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("integration produced a non-finite state at t = {time:.3} s")]
    NonFinite { time: f64 },
    #[error("no equilibrium input inside the input box holds the robot at rest at {0:?}")]
    NoEquilibrium(Vec<f64>),
    #[error("sample count must be positive")]
    NoSamples,
}

/// Partial derivatives of `f` with respect to position, velocity and input.
/// `wrt_input` is the `J(χ, v, u)` matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobians<const N: usize> {
    pub wrt_pos: Matrix<N>,
    pub wrt_vel: Matrix<N>,
    pub wrt_input: Matrix<N>,
}

/// The known part `f` of the acceleration. The disturbance is kept separate
/// so nominal predictions never see it.
pub trait Dynamics<const N: usize>: Send + Sync {
    fn name(&self) -> &str;

    fn accel(&self, pos: &Vector<N>, vel: &Vector<N>, u: &Vector<N>) -> Vector<N>;

    /// Analytic derivatives; `None` falls back to central differences.
    fn analytic_jacobians(
        &self,
        _pos: &Vector<N>,
        _vel: &Vector<N>,
        _u: &Vector<N>,
    ) -> Option<Jacobians<N>> {
        None
    }
}

/// Robot model: dynamics plus the velocity and input constraint boxes and
/// the declared constants `L` and `J̲`.
#[derive(Clone)]
pub struct RobotModel<const N: usize> {
    pub dynamics: Arc<dyn Dynamics<N>>,
    pub velocity_box: Aabb<N>,
    pub input_box: Aabb<N>,
    pub lipschitz: f64,
    pub j_lower: f64,
}

impl<const N: usize> fmt::Debug for RobotModel<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RobotModel")
            .field("dynamics", &self.dynamics.name())
            .field("velocity_box", &self.velocity_box)
            .field("input_box", &self.input_box)
            .field("lipschitz", &self.lipschitz)
            .field("j_lower", &self.j_lower)
            .finish()
    }
}

impl<const N: usize> RobotModel<N> {
    pub fn accel(&self, pos: &Vector<N>, vel: &Vector<N>, u: &Vector<N>) -> Vector<N> {
        self.dynamics.accel(pos, vel, u)
    }

    pub fn jacobians(&self, pos: &Vector<N>, vel: &Vector<N>, u: &Vector<N>) -> Jacobians<N> {
        self.dynamics
            .analytic_jacobians(pos, vel, u)
            .unwrap_or_else(|| finite_difference_jacobians(self.dynamics.as_ref(), pos, vel, u))
    }
}

pub const FD_STEP: f64 = 1e-6;

/// Central differences with step [`FD_STEP`].
pub fn finite_difference_jacobians<const N: usize>(
    f: &dyn Dynamics<N>,
    pos: &Vector<N>,
    vel: &Vector<N>,
    u: &Vector<N>,
) -> Jacobians<N> {
    let mut j: Jacobians<N> = Jacobians {
        wrt_pos: Matrix::<N>::zeros(),
        wrt_vel: Matrix::<N>::zeros(),
        wrt_input: Matrix::<N>::zeros(),
    };
    for c in 0..N {
        let mut e = Vector::<N>::zeros();
        e[c] = FD_STEP;
        let dp: Vector<N> = (f.accel(&(pos + e), vel, u) - f.accel(&(pos - e), vel, u)) / (2.0 * FD_STEP);
        let dv: Vector<N> = (f.accel(pos, &(vel + e), u) - f.accel(pos, &(vel - e), u)) / (2.0 * FD_STEP);
        let du: Vector<N> = (f.accel(pos, vel, &(u + e)) - f.accel(pos, vel, &(u - e))) / (2.0 * FD_STEP);
        for r in 0..N {
            j.wrt_pos[(r, c)] = dp[r];
            j.wrt_vel[(r, c)] = dv[r];
            j.wrt_input[(r, c)] = du[r];
        }
    }
    j
}

pub fn jacobians<const N: usize>(
    model: &RobotModel<N>,
    pos: &Vector<N>,
    vel: &Vector<N>,
    u: &Vector<N>,
) -> Jacobians<N> {
    model.jacobians(pos, vel, u)
}

/// The planar example robot:
/// `v̇₁ = 0.25x² + u₁`, `v̇₂ = (0.1 − 0.1e⁻ˣ)/(1 + e⁻ˣ) + 0.25y² + u₂ + 0.1u₂³`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlanarExample;

impl Dynamics<2> for PlanarExample {
    fn name(&self) -> &str {
        "planar_example"
    }

    fn accel(&self, pos: &Vector<2>, _vel: &Vector<2>, u: &Vector<2>) -> Vector<2> {
        let (x, y) = (pos[0], pos[1]);
        // (0.1 − 0.1e^{−x}) / (1 + e^{−x}) = 0.1·tanh(x/2), written stably.
        let drift = 0.1 * (0.5 * x).tanh();
        Vector::<2>::new(
            0.25 * x * x + u[0],
            drift + 0.25 * y * y + u[1] + 0.1 * u[1].powi(3),
        )
    }

    fn analytic_jacobians(
        &self,
        pos: &Vector<2>,
        _vel: &Vector<2>,
        u: &Vector<2>,
    ) -> Option<Jacobians<2>> {
        let (x, y) = (pos[0], pos[1]);
        let sech = 1.0 / (0.5 * x).cosh();
        Some(Jacobians {
            wrt_pos: Matrix::<2>::new(0.5 * x, 0.0, 0.05 * sech * sech, 0.5 * y),
            wrt_vel: Matrix::<2>::zeros(),
            wrt_input: Matrix::<2>::new(1.0, 0.0, 0.0, 1.0 + 0.3 * u[1] * u[1]),
        })
    }
}

/// `f(χ, v, u) = A_χ χ + A_v v + B u`.
#[derive(Debug, Clone)]
pub struct LinearDynamics<const N: usize> {
    pub name: String,
    pub pos_gain: Matrix<N>,
    pub vel_gain: Matrix<N>,
    pub input_gain: Matrix<N>,
}

impl<const N: usize> LinearDynamics<N> {
    /// Fully actuated double integrator `v̇ = u`.
    pub fn double_integrator() -> Self {
        Self {
            name: "double_integrator".into(),
            pos_gain: Matrix::zeros(),
            vel_gain: Matrix::zeros(),
            input_gain: Matrix::identity(),
        }
    }
}

impl<const N: usize> Dynamics<N> for LinearDynamics<N> {
    fn name(&self) -> &str {
        &self.name
    }

    fn accel(&self, pos: &Vector<N>, vel: &Vector<N>, u: &Vector<N>) -> Vector<N> {
        self.pos_gain * pos + self.vel_gain * vel + self.input_gain * u
    }

    fn analytic_jacobians(
        &self,
        _pos: &Vector<N>,
        _vel: &Vector<N>,
        _u: &Vector<N>,
    ) -> Option<Jacobians<N>> {
        Some(Jacobians {
            wrt_pos: self.pos_gain,
            wrt_vel: self.vel_gain,
            wrt_input: self.input_gain,
        })
    }
}

/// Wraps a closure; derivatives come from finite differences.
pub struct FnDynamics<F> {
    pub name: String,
    pub f: F,
}

impl<F, const N: usize> Dynamics<N> for FnDynamics<F>
where
    F: Fn(&Vector<N>, &Vector<N>, &Vector<N>) -> Vector<N> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn accel(&self, pos: &Vector<N>, vel: &Vector<N>, u: &Vector<N>) -> Vector<N> {
        (self.f)(pos, vel, u)
    }
}

/// Bounded additive disturbance `d(t)` with `‖d(t)‖₂ ≤ bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceSignal {
    Zero,
    /// `bound · (cos t, sin t, 0, …)`.
    Sinusoidal { bound: f64 },
    /// Piecewise constant, uniform in the ball, redrawn every `hold` seconds.
    UniformRandom { bound: f64, hold: f64, seed: u64 },
    /// A fixed vector (saturated to the bound).
    Constant { value: Vec<f64>, bound: f64 },
}

impl DisturbanceSignal {
    pub fn bound(&self) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Sinusoidal { bound }
            | Self::UniformRandom { bound, .. }
            | Self::Constant { bound, .. } => *bound,
        }
    }

    pub fn sample<const N: usize>(&self, t: f64) -> Vector<N> {
        match self {
            Self::Zero => Vector::zeros(),
            Self::Sinusoidal { bound } => {
                let mut d = Vector::<N>::zeros();
                if N >= 1 {
                    d[0] = bound * t.cos();
                }
                if N >= 2 {
                    d[1] = bound * t.sin();
                }
                d
            }
            Self::UniformRandom { bound, hold, seed } => {
                let slot = (t / hold).floor().max(0.0) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(slot);
                sample_in_ball::<N>(&mut rng, *bound)
            }
            Self::Constant { value, bound } => {
                let d = Vector::<N>::from_fn(|i, _| value.get(i).copied().unwrap_or(0.0));
                let norm = d.norm();
                if norm > *bound && norm > 0.0 {
                    d * (bound / norm)
                } else {
                    d
                }
            }
        }
    }
}

/// Uniform sample from the closed ball of the given radius.
pub fn sample_in_ball<const N: usize>(rng: &mut impl Rng, radius: f64) -> Vector<N> {
    loop {
        let dir = Vector::<N>::from_fn(|_, _| rng.gen_range(-1.0..=1.0));
        let n = dir.norm();
        if n > 1e-12 && n <= 1.0 {
            let r = radius * rng.gen::<f64>().powf(1.0 / N as f64);
            return dir / n * r;
        }
    }
}

/// Sampled positions and velocities of one robot.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateTrajectory<const N: usize> {
    pub times: Vec<f64>,
    pub positions: Vec<Vector<N>>,
    pub velocities: Vec<Vector<N>>,
}

impl<const N: usize> StateTrajectory<N> {
    pub fn push(&mut self, t: f64, pos: Vector<N>, vel: Vector<N>) {
        debug_assert!(self.times.last().map_or(true, |&last| t > last));
        self.times.push(t);
        self.positions.push(pos);
        self.velocities.push(vel);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// One classical Runge–Kutta step of `χ̇ = v, v̇ = f + d` with `u`, `d` held.
pub fn rk4_step<const N: usize>(
    model: &RobotModel<N>,
    pos: &Vector<N>,
    vel: &Vector<N>,
    u: &Vector<N>,
    d: &Vector<N>,
    dt: f64,
) -> Result<(Vector<N>, Vector<N>), DynamicsError> {
    let (p, v) = rk4_raw(model.dynamics.as_ref(), pos, vel, u, d, dt);
    if p.iter().chain(v.iter()).all(|x| x.is_finite()) {
        Ok((p, v))
    } else {
        Err(DynamicsError::NonFinite { time: f64::NAN })
    }
}

#[inline]
pub(crate) fn rk4_raw<const N: usize>(
    f: &dyn Dynamics<N>,
    pos: &Vector<N>,
    vel: &Vector<N>,
    u: &Vector<N>,
    d: &Vector<N>,
    dt: f64,
) -> (Vector<N>, Vector<N>) {
    let half = 0.5 * dt;
    let k1p = *vel;
    let k1v = f.accel(pos, vel, u) + d;
    let p2 = pos + k1p * half;
    let v2 = vel + k1v * half;
    let k2p = v2;
    let k2v = f.accel(&p2, &v2, u) + d;
    let p3 = pos + k2p * half;
    let v3 = vel + k2v * half;
    let k3p = v3;
    let k3v = f.accel(&p3, &v3, u) + d;
    let p4 = pos + k3p * dt;
    let v4 = vel + k3v * dt;
    let k4p = v4;
    let k4v = f.accel(&p4, &v4, u) + d;
    let sixth = dt / 6.0;
    (
        pos + (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * sixth,
        vel + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * sixth,
    )
}

fn sample_box<const N: usize>(rng: &mut impl Rng, b: &Aabb<N>) -> Vector<N> {
    Vector::<N>::from_fn(|i, _| {
        if b.lower[i] == b.upper[i] {
            b.lower[i]
        } else {
            rng.gen_range(b.lower[i]..=b.upper[i])
        }
    })
}

/// Deterministic sample of `W × V × U`: every vertex of the product box
/// followed by uniform random points.
fn product_samples<const N: usize>(
    workspace: &Aabb<N>,
    model: &RobotModel<N>,
    samples: usize,
    seed: u64,
) -> Vec<(Vector<N>, Vector<N>, Vector<N>)> {
    let boxes = [workspace, &model.velocity_box, &model.input_box];
    let mut out = Vec::with_capacity(samples + (1 << (3 * N).min(16)));
    if 3 * N <= 16 {
        for mask in 0u32..(1 << (3 * N)) {
            let mut vecs = [Vector::<N>::zeros(); 3];
            for (k, b) in boxes.iter().enumerate() {
                for i in 0..N {
                    let bit = (mask >> (k * N + i)) & 1;
                    vecs[k][i] = if bit == 0 { b.lower[i] } else { b.upper[i] };
                }
            }
            out.push((vecs[0], vecs[1], vecs[2]));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        out.push((
            sample_box(&mut rng, workspace),
            sample_box(&mut rng, &model.velocity_box),
            sample_box(&mut rng, &model.input_box),
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JLowerReport {
    pub estimate: f64,
    pub declared: f64,
    /// Estimate fell below the declared constant.
    pub below_declared: bool,
    /// Estimate is not positive: the input Jacobian assumption fails.
    pub violated: bool,
}

/// Minimum over samples of `λ_min[(J + Jᵀ)/2]`.
pub fn estimate_j_lower<const N: usize>(
    model: &RobotModel<N>,
    workspace: &Aabb<N>,
    samples: usize,
    seed: u64,
) -> Result<JLowerReport, DynamicsError> {
    if samples == 0 {
        return Err(DynamicsError::NoSamples);
    }
    let estimate = product_samples(workspace, model, samples, seed)
        .iter()
        .map(|(p, v, u)| {
            let j = model.jacobians(p, v, u).wrt_input;
            linalg::min_sym_eigenvalue(&dyn_matrix(&j))
        })
        .fold(f64::INFINITY, f64::min);
    Ok(JLowerReport {
        estimate,
        declared: model.j_lower,
        below_declared: estimate < model.j_lower - 1e-9,
        violated: estimate <= 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub wrt_pos: f64,
    pub wrt_vel: f64,
    pub combined: f64,
    pub declared: f64,
    pub above_declared: bool,
}

fn spectral_norm<const N: usize>(m: &Matrix<N>) -> f64 {
    dyn_matrix(m).singular_values().max()
}

/// Static-size matrices of generic dimension lack the decompositions, so
/// those go through a dynamically sized copy.
pub(crate) fn dyn_matrix<const N: usize>(m: &Matrix<N>) -> DMatrix<f64> {
    DMatrix::from_fn(N, N, |i, j| m[(i, j)])
}

/// Maxima over samples of `‖∂f/∂χ‖₂` and `‖∂f/∂v‖₂`.
pub fn estimate_lipschitz<const N: usize>(
    model: &RobotModel<N>,
    workspace: &Aabb<N>,
    samples: usize,
    seed: u64,
) -> Result<LipschitzReport, DynamicsError> {
    if samples == 0 {
        return Err(DynamicsError::NoSamples);
    }
    let (l1, l2) = product_samples(workspace, model, samples, seed)
        .iter()
        .map(|(p, v, u)| {
            let j = model.jacobians(p, v, u);
            (spectral_norm(&j.wrt_pos), spectral_norm(&j.wrt_vel))
        })
        .fold((0.0f64, 0.0f64), |(a, b), (x, y)| (a.max(x), b.max(y)));
    let combined = l1.max(l2);
    Ok(LipschitzReport {
        wrt_pos: l1,
        wrt_vel: l2,
        combined,
        declared: model.lipschitz,
        above_declared: combined > model.lipschitz + 1e-3 * model.lipschitz.max(1.0),
    })
}

/// `(A, B)` of `η̇ = Aη + Bu` with `η = (χ, v)`, linearised at the given point.
pub fn linearize<const N: usize>(
    model: &RobotModel<N>,
    pos: &Vector<N>,
    vel: &Vector<N>,
    u: &Vector<N>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let j = model.jacobians(pos, vel, u);
    let mut a = DMatrix::zeros(2 * N, 2 * N);
    let mut b = DMatrix::zeros(2 * N, N);
    for i in 0..N {
        a[(i, N + i)] = 1.0;
        for c in 0..N {
            a[(N + i, c)] = j.wrt_pos[(i, c)];
            a[(N + i, N + c)] = j.wrt_vel[(i, c)];
            b[(N + i, c)] = j.wrt_input[(i, c)];
        }
    }
    (a, b)
}

/// Stabilizability of the Jacobian linearization at `(0, 0, 0)`.
pub fn check_stabilizability<const N: usize>(model: &RobotModel<N>) -> bool {
    let z = Vector::<N>::zeros();
    let (a, b) = linearize(model, &z, &z, &z);
    linalg::is_stabilizable(&a, &b)
}

/// `‖f(0, 0, 0)‖`; zero when the origin is an equilibrium.
pub fn origin_residual<const N: usize>(model: &RobotModel<N>) -> f64 {
    let z = Vector::<N>::zeros();
    model.accel(&z, &z, &z).norm()
}

/// Input `u` with `f(pos, 0, u) = 0` inside `bounds`, by damped Newton on `u`.
pub fn equilibrium_input<const N: usize>(
    model: &RobotModel<N>,
    pos: &Vector<N>,
    bounds: &Aabb<N>,
) -> Result<Vector<N>, DynamicsError> {
    let vel = Vector::<N>::zeros();
    let mut u = Vector::<N>::zeros();
    for _ in 0..100 {
        let r = model.accel(pos, &vel, &u);
        if r.norm() < 1e-13 {
            break;
        }
        let j = model.jacobians(pos, &vel, &u).wrt_input;
        let rhs = nalgebra::DVector::from_column_slice(r.as_slice());
        let Some(step) = dyn_matrix(&j).lu().solve(&rhs) else {
            break;
        };
        let step = Vector::<N>::from_column_slice(step.as_slice());
        let mut alpha = 1.0;
        loop {
            let cand = u - step * alpha;
            if model.accel(pos, &vel, &cand).norm() < r.norm() || alpha < 1e-6 {
                u = cand;
                break;
            }
            alpha *= 0.5;
        }
    }
    if model.accel(pos, &vel, &u).norm() < 1e-9 && bounds.contains_point(&u) {
        Ok(u)
    } else {
        Err(DynamicsError::NoEquilibrium(pos.iter().copied().collect()))
    }
}
