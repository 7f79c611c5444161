//! Running average of Hessian estimates with a refreshed factorization.

use crate::error::{Error, Result};
use crate::linalg::SpdFactorization;
use crate::{Matrix, Vector};

/// Uniformly weighted running average of Hessian estimates.
///
/// After `s` updates the model holds the arithmetic mean of all `s + 1`
/// matrices seen so far, maintained through the recursion
/// `H_s = s/(s+1) H_{s-1} + 1/(s+1) E_s`, together with a Cholesky
/// factorization of the current mean.
#[derive(Debug)]
pub struct HessianModel {
    mean: Matrix,
    count: usize,
    fact: SpdFactorization,
}

impl HessianModel {
    pub fn from_matrix(h: Matrix) -> Result<Self> {
        let fact = SpdFactorization::new(&h)?;
        Ok(HessianModel { mean: h, count: 1, fact })
    }

    /// Folds one more estimate into the average and refactorizes. On error
    /// the model keeps its previous state.
    pub fn update(&mut self, h: &Matrix) -> Result<()> {
        if h.shape() != self.mean.shape() {
            return Err(Error::contract("hessian estimate has the wrong shape"));
        }
        let c = self.count as f64;
        let new_mean = (&self.mean * c + h) / (c + 1.0);
        let fact = SpdFactorization::new(&new_mean)?;
        self.mean = new_mean;
        self.fact = fact;
        self.count += 1;
        Ok(())
    }

    pub fn mean(&self) -> &Matrix {
        &self.mean
    }

    /// Number of estimates folded in so far.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn factorization(&self) -> &SpdFactorization {
        &self.fact
    }

    pub fn solve(&self, v: &Vector) -> Vector {
        self.fact.solve(v)
    }
}
