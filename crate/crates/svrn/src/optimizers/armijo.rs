//! Backtracking line search with the Armijo sufficient-decrease condition.

use crate::error::{Error, Result};
use crate::problem::Objective;
use crate::Vector;

#[derive(Debug, Clone, Copy)]
pub struct ArmijoParams {
    /// Sufficient-decrease constant.
    pub c: f64,
    /// Backtracking factor.
    pub beta: f64,
    /// Maximum number of step-size reductions after the unit trial.
    pub max_halvings: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        ArmijoParams { c: 1e-4, beta: 0.5, max_halvings: 50 }
    }
}

impl ArmijoParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c < 0.5) || !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::contract("line search needs 0 < c < 1/2 and 0 < beta < 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LineSearchOutcome {
    pub eta: f64,
    /// Loss at the accepted point.
    pub f_new: f64,
    /// Number of full loss evaluations performed.
    pub evals: usize,
}

/// Backtracks from a unit step along `v` until
/// f(x + eta v) <= f(x) + c eta g.v, evaluating f(x) internally.
pub fn armijo_search<O: Objective + ?Sized>(
    obj: &O,
    x: &Vector,
    v: &Vector,
    g: &Vector,
    params: &ArmijoParams,
) -> Result<LineSearchOutcome> {
    let out = armijo_search_from(obj, x, obj.loss(x), g, v, params)?;
    // The baseline evaluation counts too.
    Ok(LineSearchOutcome { evals: out.evals + 1, ..out })
}

/// Like [`armijo_search`] but takes the already-known baseline loss `f_x`,
/// which every outer loop here has on hand.
///
/// The comparison is non-strict so an exact tie — typical at the floating
/// point floor where the trial reproduces the bound bit for bit — is
/// accepted rather than halved forever. A non-finite trial loss simply fails
/// the test and backtracking continues.
pub fn armijo_search_from<O: Objective + ?Sized>(
    obj: &O,
    x: &Vector,
    f_x: f64,
    grad: &Vector,
    dir: &Vector,
    params: &ArmijoParams,
) -> Result<LineSearchOutcome> {
    params.validate()?;
    let slope = grad.dot(dir);
    if !(slope < 0.0) {
        return Err(Error::NotDescent(slope));
    }
    let mut eta = 1.0;
    let mut evals = 0;
    for _ in 0..=params.max_halvings {
        let mut trial = x.clone();
        trial.axpy(eta, dir, 1.0);
        let f_trial = obj.loss(&trial);
        evals += 1;
        if f_trial <= f_x + params.c * eta * slope {
            return Ok(LineSearchOutcome { eta, f_new: f_trial, evals });
        }
        eta *= params.beta;
    }
    Err(Error::LineSearchFailed(params.max_halvings))
}
