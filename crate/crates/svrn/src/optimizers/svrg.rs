//! Stochastic variance-reduced gradient descent, the first-order baseline.

use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::optimizers::{
    ConvergenceTrace, ErrorGauge, Phase, Reference, RunOutcome, Tally, Termination, TraceRecord,
    DEFAULT_TOL,
};
use crate::problem::{strong_smooth_estimates, Objective};
use crate::Vector;

/// Error level treated as divergence for a fixed-step first-order method.
const DIVERGENCE_LIMIT: f64 = 1e6;

/// Epochs of `x <- x - eta (grad_i(x) - grad_i(x~) + g~)` over uniformly
/// drawn components, restarting the anchor at the last iterate. `eta`
/// defaults to a quarter of the inverse smoothness estimate and `inner_m`
/// to `n`. A non-finite or exploding error ends the run with
/// [`Termination::Diverged`] and the trace collected so far.
pub fn svrg_run<O: Objective + ?Sized>(
    obj: &O,
    x0: &Vector,
    eta: Option<f64>,
    inner_m: Option<usize>,
    max_outer: usize,
    reference: Option<&Reference>,
    rng: &mut impl Rng,
) -> Result<RunOutcome> {
    let inst = obj.instance();
    let (n, d) = (inst.n(), inst.d());
    if x0.len() != d {
        return Err(Error::contract("initial point has the wrong dimension"));
    }
    let eta = match eta {
        Some(v) => v,
        None => 1.0 / (4.0 * strong_smooth_estimates(inst)?.lambda),
    };
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::contract("step size must be positive and finite"));
    }
    let steps = inner_m.unwrap_or(n);
    if steps == 0 {
        return Err(Error::contract("epoch needs at least one step"));
    }

    let t0 = Instant::now();
    let gauge = ErrorGauge::new(reference, x0);
    let mut tally = Tally::default();
    let mut trace = ConvergenceTrace::default();
    let mut x = x0.clone();
    let mut f_cur = obj.loss(&x);
    let push = |trace: &mut ConvergenceTrace, s: usize, x: &Vector, f: f64, eta: f64, tally: &Tally, t0| {
        trace.records.push(TraceRecord {
            s,
            passes: tally.passes(n),
            err: gauge.measure(x, f),
            eta,
            phase: Phase::Plain,
            wall_s: t0,
            loss: f,
            grad_evals: tally.grad,
            hess_evals: tally.hess,
            loss_evals: tally.loss,
        });
    };
    push(&mut trace, 0, &x, f_cur, 0.0, &tally, t0.elapsed().as_secs_f64());

    let mut s = 0;
    let termination = loop {
        let err = trace.last().err;
        if !err.is_finite() || err > DIVERGENCE_LIMIT {
            break Termination::Diverged { err };
        }
        if err < DEFAULT_TOL {
            break Termination::Converged;
        }
        if s == max_outer {
            break Termination::MaxStages;
        }

        let anchor = x.clone();
        let g_tilde = obj.full_gradient(&anchor);
        tally.grad += n;
        for _ in 0..steps {
            let i = rng.gen_range(0..n);
            let gi = obj.component_gradient(i, &x)?;
            let gi_anchor = obj.component_gradient(i, &anchor)?;
            tally.grad += 2;
            let mut step = gi - gi_anchor;
            step += &g_tilde;
            x.axpy(-eta, &step, 1.0);
        }
        f_cur = obj.loss(&x);
        s += 1;
        push(&mut trace, s, &x, f_cur, eta, &tally, t0.elapsed().as_secs_f64());
    };

    Ok(RunOutcome { x, termination, trace })
}
