//! Classical damped Newton iteration on the full objective.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::SpdFactorization;
use crate::optimizers::{
    armijo_search_from, ArmijoParams, ConvergenceTrace, ErrorGauge, Phase, Reference, RunOutcome,
    Tally, Termination, TraceRecord, DEFAULT_TOL,
};
use crate::problem::Objective;
use crate::Vector;

/// Full-Hessian Newton steps with a backtracking line search.
pub fn newton_run<O: Objective + ?Sized>(
    obj: &O,
    x0: &Vector,
    armijo: &ArmijoParams,
    max_outer: usize,
    reference: Option<&Reference>,
) -> Result<RunOutcome> {
    let inst = obj.instance();
    let (n, d) = (inst.n(), inst.d());
    if x0.len() != d {
        return Err(Error::contract("initial point has the wrong dimension"));
    }
    armijo.validate()?;

    let t0 = Instant::now();
    let gauge = ErrorGauge::new(reference, x0);
    let mut tally = Tally::default();
    let mut trace = ConvergenceTrace::default();
    let mut x = x0.clone();
    let mut f_cur = obj.loss(&x);
    let push = |trace: &mut ConvergenceTrace, s, x: &Vector, f, eta, tally: &Tally, wall| {
        trace.records.push(TraceRecord {
            s,
            passes: tally.passes(n),
            err: gauge.measure(x, f),
            eta,
            phase: Phase::Sn,
            wall_s: wall,
            loss: f,
            grad_evals: tally.grad,
            hess_evals: tally.hess,
            loss_evals: tally.loss,
        });
    };
    push(&mut trace, 0, &x, f_cur, 0.0, &tally, t0.elapsed().as_secs_f64());

    let mut s = 0;
    let termination = loop {
        if trace.last().err < DEFAULT_TOL {
            break Termination::Converged;
        }
        if s == max_outer {
            break Termination::MaxStages;
        }
        let h = obj.full_hessian(&x);
        tally.hess += n;
        let g = obj.full_gradient(&x);
        tally.grad += n;
        let dir = SpdFactorization::new(&h)?.solve(&(-&g));
        if !(g.dot(&dir) < 0.0) {
            break Termination::Converged;
        }
        match armijo_search_from(obj, &x, f_cur, &g, &dir, armijo) {
            Ok(out) => {
                tally.loss += out.evals * n;
                x.axpy(out.eta, &dir, 1.0);
                f_cur = out.f_new;
                s += 1;
                push(&mut trace, s, &x, f_cur, out.eta, &tally, t0.elapsed().as_secs_f64());
            }
            Err(Error::LineSearchFailed(_)) => {
                break Termination::LineSearchFailed { stage: s };
            }
            Err(e) => return Err(e),
        }
    };

    Ok(RunOutcome { x, termination, trace })
}
