//! Dense linear-algebra helpers for terminal-ingredient design: continuous
//! algebraic Riccati and Lyapunov equations, and stabilizability tests.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is singular")]
    Singular,
    #[error("Riccati iteration did not converge (Hamiltonian has eigenvalues near the imaginary axis)")]
    RiccatiDiverged,
    #[error("Riccati residual {0:.3e} too large")]
    RiccatiResidual(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Stabilizing solution `X` of `AᵀX + XA − X B R⁻¹ Bᵀ X + Q = 0`, computed
/// with the scaled Newton iteration for the matrix sign of the Hamiltonian.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, LinalgError> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.nrows() != b.ncols() {
        return Err(LinalgError::Dimension("care".into()));
    }
    let r_inv = r.clone().try_inverse().ok_or(LinalgError::Singular)?;
    let g = b * &r_inv * b.transpose();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let dim = (2 * n) as f64;
    let mut z = h;
    let mut converged = false;
    for _ in 0..100 {
        let det = z.determinant();
        if !det.is_finite() || det.abs() < 1e-300 {
            return Err(LinalgError::RiccatiDiverged);
        }
        let inv = z.clone().try_inverse().ok_or(LinalgError::RiccatiDiverged)?;
        let c = det.abs().powf(-1.0 / dim);
        let next = (&z * c + inv / c) * 0.5;
        let change = (&next - &z).abs().sum();
        let scale = z.abs().sum();
        z = next;
        if change <= 1e-13 * scale {
            converged = true;
            break;
        }
    }
    if !converged || z.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::RiccatiDiverged);
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let w11 = z.view((0, 0), (n, n)).into_owned();
    let w12 = z.view((0, n), (n, n)).into_owned();
    let w21 = z.view((n, 0), (n, n)).into_owned();
    let w22 = z.view((n, n), (n, n)).into_owned();
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w12);
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w22 + &eye));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w11 + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w21));
    let x = lhs
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|_| LinalgError::Singular)?;
    let x = (&x + x.transpose()) * 0.5;

    let residual = a.transpose() * &x + &x * a - &x * &g * &x + q;
    let res = residual.abs().max();
    if res > 1e-6 * (1.0 + x.abs().max()) {
        return Err(LinalgError::RiccatiResidual(res));
    }
    Ok(x)
}

/// LQR state-feedback gain `K = −R⁻¹BᵀX` so that `u = K x`.
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, LinalgError> {
    let x = solve_care(a, b, q, r)?;
    let r_inv = r.clone().try_inverse().ok_or(LinalgError::Singular)?;
    Ok(-(r_inv * b.transpose() * x))
}

/// Solves `AᵀP + PA = −M` through the Kronecker-vectorised linear system.
pub fn solve_lyapunov(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    // vec(AᵀP) = (I ⊗ Aᵀ) vec(P); vec(PA) = (Aᵀ ⊗ I) vec(P) with column-major vec.
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, m.iter().map(|v| -v));
    let sol = op.lu().solve(&rhs).ok_or(LinalgError::Singular)?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .all(|l| l.re < -1e-12)
}

fn numeric_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    let tol = max * 1e-10 * (m.nrows().max(m.ncols()) as f64);
    sv.iter().filter(|&&s| s > tol).count()
}

pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut c = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        c.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    c
}

/// Kalman rank test, falling back to the PBH test on the non-strictly-stable
/// eigenvalues when the pair is not fully controllable.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    if numeric_rank(&controllability_matrix(a, b)) == n {
        return true;
    }
    let m = b.ncols();
    a.clone()
        .complex_eigenvalues()
        .iter()
        .filter(|l| l.re >= -1e-12)
        .all(|l| {
            // Realified [A − λI, B]: rank is twice the complex rank.
            let mut real = DMatrix::zeros(2 * n, 2 * (n + m));
            let eye = DMatrix::<f64>::identity(n, n);
            let mr_a = a - &eye * l.re;
            let mi_a = &eye * (-l.im);
            real.view_mut((0, 0), (n, n)).copy_from(&mr_a);
            real.view_mut((0, n), (n, m)).copy_from(b);
            real.view_mut((0, n + m), (n, n)).copy_from(&(-&mi_a));
            real.view_mut((n, 0), (n, n)).copy_from(&mi_a);
            real.view_mut((n, n + m), (n, n)).copy_from(&mr_a);
            real.view_mut((n, 2 * n + m), (n, m)).copy_from(b);
            numeric_rank(&real) == 2 * n
        })
}

pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Inverse square root of a symmetric positive definite matrix.
pub fn spd_inv_sqrt(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return None;
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Some(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - m.transpose()).abs().max() < 1e-9 && min_sym_eigenvalue(m) > 0.0
}
