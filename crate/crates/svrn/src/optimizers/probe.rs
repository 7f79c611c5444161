//! Monte-Carlo probe for the quality of variance-reduced gradient estimates.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{h_norm_sq, SpdFactorization};
use crate::problem::{Objective, Weighting};
use crate::sampling::{uniform_batch, SamplingDistribution};
use crate::Vector;

/// How probe batches are drawn.
#[derive(Clone, Copy)]
pub enum ProbeSampling<'a> {
    Uniform,
    Importance(&'a SamplingDistribution),
    /// Every component exactly once; reproduces the exact gradient.
    Exhaustive,
}

/// Squared inverse-Hessian-norm errors of the variance-reduced gradient
/// estimate, normalized by the squared Hessian-norm of `x - x*`.
#[derive(Debug, Clone)]
pub struct ProbeStats {
    pub samples: Vec<f64>,
    /// Squared Hessian-norm of the displacement, used for normalization.
    pub denominator: f64,
}

impl ProbeStats {
    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Mean of the unnormalized squared errors.
    pub fn raw_mean(&self) -> f64 {
        self.mean() * self.denominator
    }

    /// Linear-interpolation quantile, `q` in [0, 1].
    pub fn quantile(&self, q: f64) -> f64 {
        let mut sorted = self.samples.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Repeatedly forms the variance-reduced gradient estimate
/// `g_B(x) - g_B(x*) + grad f(x*)` on fresh batches of size `m`, anchored at
/// the optimum, and measures its squared error against `grad f(x)` in the
/// inverse-Hessian metric, normalized by `||x - x*||^2_H`. Both the metric and
/// the normalization use the exact Hessian at `x`.
pub fn variance_probe<O: Objective + ?Sized>(
    obj: &O,
    x: &Vector,
    x_star: &Vector,
    m: usize,
    trials: usize,
    sampling: ProbeSampling,
    rng: &mut impl Rng,
) -> Result<ProbeStats> {
    if trials == 0 {
        return Err(Error::contract("probe needs at least one trial"));
    }
    let n = obj.instance().n();
    if !matches!(sampling, ProbeSampling::Exhaustive) && m == 0 {
        return Err(Error::contract("probe batch size must be positive"));
    }
    if let ProbeSampling::Importance(dist) = sampling {
        if dist.len() != n {
            return Err(Error::contract("distribution length does not match n"));
        }
    }
    let delta = x - x_star;
    if delta.amax() == 0.0 {
        return Err(Error::contract("probe point coincides with the optimum"));
    }

    let hess = obj.full_hessian(x);
    let fact = SpdFactorization::new(&hess)?;
    let g_full = obj.full_gradient(x);
    let g_star = obj.full_gradient(x_star);
    let denominator = h_norm_sq(&hess, &delta);

    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let (batch, weighting) = match sampling {
            ProbeSampling::Uniform => (uniform_batch(n, m, rng)?, Weighting::Uniform),
            ProbeSampling::Importance(dist) => {
                (dist.sample_batch(m, rng)?, Weighting::Importance(dist.weights()))
            }
            ProbeSampling::Exhaustive => ((0..n).collect(), Weighting::Uniform),
        };
        let g_cur = obj.batch_gradient(&batch, weighting, x)?;
        let g_anchor = obj.batch_gradient(&batch, weighting, x_star)?;
        // Grouped as (g_B(x) - grad f(x)) - (g_B(x*) - grad f(x*)) so that
        // exhaustive batches cancel exactly rather than to rounding.
        let err = (g_cur - &g_full) - (g_anchor - &g_star);
        let raw = err.dot(&fact.solve(&err));
        samples.push(raw.max(0.0) / denominator);
    }
    Ok(ProbeStats { samples, denominator })
}
