//! Dense symmetric positive definite factorization, metric norms, spectral
//! comparison of curvature matrices, and the fast Walsh-Hadamard transform.

use nalgebra::{Cholesky, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

/// Largest dimension accepted by the dense factorization paths.
pub const MAX_SPD_DIM: usize = 2000;

/// Cholesky factorization of a symmetric positive definite matrix, retained
/// for repeated O(d^2) solves. The original matrix is kept alongside the
/// factor so metric-norm queries need no reconstruction.
#[derive(Debug, Clone)]
pub struct SpdFactorization {
    matrix: Matrix,
    chol: Cholesky<f64, Dyn>,
}

fn check_symmetric(m: &Matrix, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::contract(format!("{what} must be square")));
    }
    if m.nrows() > MAX_SPD_DIM {
        return Err(Error::contract(format!(
            "{what} dimension {} exceeds the dense limit {MAX_SPD_DIM}",
            m.nrows()
        )));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::contract(format!("{what} is not symmetric")));
            }
        }
    }
    Ok(())
}

impl SpdFactorization {
    /// Factors a symmetric positive definite matrix. Fails loudly on a
    /// nonpositive pivot instead of regularizing silently.
    pub fn new(m: &Matrix) -> Result<Self> {
        check_symmetric(m, "spd matrix")?;
        let chol = Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite)?;
        Ok(SpdFactorization { matrix: m.clone(), chol })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// The matrix that was factored.
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    /// Solves M x = b against the retained factorization.
    pub fn solve(&self, b: &Vector) -> Vector {
        self.chol.solve(b)
    }

    /// Lower triangular factor L with M = L L^T.
    pub fn lower(&self) -> Matrix {
        self.chol.l()
    }
}

/// Squared metric norm v' M v. `M` must be symmetric positive semidefinite
/// for the result to be meaningful; tiny negative round-off is clamped.
pub fn h_norm_sq(m: &Matrix, v: &Vector) -> f64 {
    (v.dot(&(m * v))).max(0.0)
}

/// Metric norm sqrt(v' M v). Errors when the quadratic form is negative
/// beyond round-off, which signals a matrix that is not positive
/// semidefinite.
pub fn h_norm(m: &Matrix, v: &Vector) -> Result<f64> {
    let q = v.dot(&(m * v));
    if q < -1e-12 {
        return Err(Error::contract(format!(
            "quadratic form is negative ({q:.3e}); matrix is not psd"
        )));
    }
    Ok(q.max(0.0).sqrt())
}

/// Measures how far `a` is from `b` in the relative spectral sense: returns
/// `(holds, eps_actual)` where `eps_actual` is the largest deviation of an
/// eigenvalue of B^{-1/2} A B^{-1/2} from 1 and `holds = eps_actual <= eps`.
///
/// Intended for diagnostics and tests; cost is a dense factorization plus a
/// symmetric eigendecomposition.
pub fn spectral_approx(a: &Matrix, b: &Matrix, eps: f64) -> Result<(bool, f64)> {
    check_symmetric(a, "spectral_approx lhs")?;
    if a.shape() != b.shape() {
        return Err(Error::contract("spectral_approx shapes differ"));
    }
    let f = SpdFactorization::new(b)?;
    let l = f.lower();
    // L^{-1} A L^{-T}, computed with two triangular solves.
    let x = l
        .solve_lower_triangular(a)
        .ok_or(Error::NotPositiveDefinite)?;
    let m = l
        .solve_lower_triangular(&x.transpose())
        .ok_or(Error::NotPositiveDefinite)?;
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let eps_actual = eig
        .eigenvalues
        .iter()
        .map(|l| (l - 1.0).abs())
        .fold(0.0, f64::max);
    Ok((eps_actual <= eps, eps_actual))
}

/// In-place orthonormal fast Walsh-Hadamard transform. The length must be a
/// power of two; the 1/sqrt(n) scaling is applied once at the end, which
/// makes the transform an involution.
pub fn fwht(v: &mut [f64]) -> Result<()> {
    let n = v.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::contract(format!(
            "fwht length {n} is not a power of two"
        )));
    }
    let mut h = 1;
    while h < n {
        for block in v.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
    let scale = 1.0 / (n as f64).sqrt();
    for x in v {
        *x *= scale;
    }
    Ok(())
}
