//! Outer driver with Hessian averaging and automatic phase switching,
//! shared by the variance-reduced solver and its subsampled-Newton
//! baselines.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::optimizers::{
    armijo_search_from, sngs_inner, svrn_inner, svrn_schedule, ArmijoParams, ConvergenceTrace,
    ErrorGauge, HessianModel, InnerBatchSampler, Phase, Reference, ResampleSchedule, RunOutcome,
    Tally, Termination, TraceRecord, DEFAULT_TOL,
};
use crate::problem::{Objective, Weighting};
use crate::sampling::{hessian_at_indices, subsampled_hessian, DrawFrom};
use crate::Vector;

/// Which update the fast phase uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverVariant {
    /// Variance-reduced inner loop.
    Svrn,
    /// Line-searched subsampled Newton step every stage; never switches.
    Sn,
    /// Gradient-subsampled inner loop without the correction term.
    Sngs,
}

/// Configuration shared by the averaged-Hessian outer loops and the
/// standalone stage operation. Unset sizes fall back to the schedule
/// `t_max = floor(log2(n/d))`, `m = floor(n/log2(n/d))`, `k = 4 d`.
#[derive(Debug, Clone)]
pub struct SvrnConfig {
    /// Inner batch size; `None` derives `floor(n / log2(n/d))`.
    pub m: Option<usize>,
    /// Inner steps per stage; `None` derives `floor(log2(n/d))`.
    pub t_max: Option<usize>,
    /// Hessian sample size per outer iteration; `None` means `4 d`. Values
    /// at or above `n` enumerate every component once, giving the exact
    /// Hessian.
    pub k: Option<usize>,
    pub resample_policy: ResampleSchedule,
    pub armijo: ArmijoParams,
    pub max_outer: usize,
    /// Seeds the run's own generator, making traces a pure function of
    /// (problem, config).
    pub seed: u64,
    /// Stop once the trace error falls below this.
    pub tol: f64,
}

impl Default for SvrnConfig {
    fn default() -> Self {
        SvrnConfig {
            m: None,
            t_max: None,
            k: None,
            resample_policy: ResampleSchedule::PerStep,
            armijo: ArmijoParams::default(),
            max_outer: 30,
            seed: 0,
            tol: DEFAULT_TOL,
        }
    }
}

fn record(
    s: usize,
    x: &Vector,
    loss: f64,
    eta: f64,
    phase: Phase,
    gauge: &ErrorGauge,
    tally: &Tally,
    n: usize,
    t0: Instant,
) -> TraceRecord {
    TraceRecord {
        s,
        passes: tally.passes(n),
        err: gauge.measure(x, loss),
        eta,
        phase,
        wall_s: t0.elapsed().as_secs_f64(),
        loss,
        grad_evals: tally.grad,
        hess_evals: tally.hess,
        loss_evals: tally.loss,
    }
}

/// Runs the averaged-Hessian outer loop with an explicit generator.
///
/// Each stage subsamples a fresh Hessian estimate, folds it into the running
/// average, and takes either a line-searched Newton step (safe phase) or,
/// for the fast variants, an inner loop whose displacement is then passed
/// through the same line search. The solver starts in the safe phase and
/// switches to the fast phase the first time the line search accepts a unit
/// step; the switch is one-way — damped steps after it stay on the fast
/// path, so a variant whose inner estimates stop improving plateaus instead
/// of being rescued by full-gradient Newton steps. An inner displacement
/// that fails to be a descent direction rejects the stage (`eta = 0`,
/// iterate kept) rather than aborting.
pub fn ha_run<O: Objective + ?Sized>(
    obj: &O,
    x0: &Vector,
    variant: SolverVariant,
    cfg: &SvrnConfig,
    reference: Option<&Reference>,
    rng: &mut impl Rng,
) -> Result<RunOutcome> {
    let inst = obj.instance();
    let (n, d) = (inst.n(), inst.d());
    if x0.len() != d {
        return Err(Error::contract("initial point has the wrong dimension"));
    }
    cfg.armijo.validate()?;
    let k = cfg.k.unwrap_or(4 * d);
    if k == 0 {
        return Err(Error::contract("hessian batch size must be positive"));
    }
    let all_indices: Vec<usize> = if k >= n { (0..n).collect() } else { Vec::new() };

    let needs_inner = variant != SolverVariant::Sn;
    let (t_max, mut sampler) = if needs_inner {
        let (t_max, m) = match (cfg.t_max, cfg.m) {
            (Some(t), Some(m)) => (t, m),
            _ => {
                let (td, md) = svrn_schedule(n, d)?;
                (cfg.t_max.unwrap_or(td), cfg.m.unwrap_or(md))
            }
        };
        if t_max == 0 {
            return Err(Error::contract("inner loop needs at least one step"));
        }
        let resample = if variant == SolverVariant::Sngs {
            // Uncorrected gradient subsampling must redraw each step.
            ResampleSchedule::PerStep
        } else {
            cfg.resample_policy
        };
        let sampler = InnerBatchSampler::new(resample, m, DrawFrom::Uniform)?;
        (t_max, Some(sampler))
    } else {
        (0, None)
    };

    let t0 = Instant::now();
    let gauge = ErrorGauge::new(reference, x0);
    let mut tally = Tally::default();
    let mut trace = ConvergenceTrace::default();
    let mut x = x0.clone();
    let mut f_cur = obj.loss(&x);
    trace
        .records
        .push(record(0, &x, f_cur, 0.0, Phase::Sn, &gauge, &tally, n, t0));

    let mut model: Option<HessianModel> = None;
    let mut switched = false;
    let mut s = 0;
    let termination = loop {
        if trace.last().err < cfg.tol {
            break Termination::Converged;
        }
        if s == cfg.max_outer {
            break Termination::MaxStages;
        }

        let h_hat = if k >= n {
            // Exact Hessian from enumeration rather than sampling.
            tally.hess += n;
            hessian_at_indices(obj, &x, &all_indices, Weighting::Uniform)?
        } else {
            tally.hess += k;
            subsampled_hessian(obj, &x, k, DrawFrom::Uniform, rng)?
        };
        model = Some(match model.take() {
            None => HessianModel::from_matrix(h_hat)?,
            Some(mut m) => {
                m.update(&h_hat)?;
                m
            }
        });
        let prec = model.as_ref().expect("model was just set").factorization();

        let g = obj.full_gradient(&x);
        tally.grad += n;

        let safe_phase = variant == SolverVariant::Sn || !switched;
        let (dir, phase) = if safe_phase {
            (prec.solve(&(-&g)), Phase::Sn)
        } else {
            let sampler = sampler.as_mut().expect("fast variants carry a sampler");
            let x_inner = match variant {
                SolverVariant::Svrn => {
                    svrn_inner(obj, &x, &g, prec, sampler, t_max, rng, &mut tally)?
                }
                SolverVariant::Sngs => {
                    sngs_inner(obj, &x, prec, sampler, t_max, rng, &mut tally)?
                }
                SolverVariant::Sn => unreachable!("safe phase handles Sn"),
            };
            (x_inner - &x, Phase::Svrn)
        };

        let slope = g.dot(&dir);
        if !(slope < 0.0) {
            if phase == Phase::Svrn {
                // Rejected stage: keep the iterate and stay on the fast path.
                s += 1;
                trace
                    .records
                    .push(record(s, &x, f_cur, 0.0, Phase::Svrn, &gauge, &tally, n, t0));
                continue;
            }
            // A non-descent Newton direction from an SPD solve means the
            // gradient is numerically zero.
            break Termination::Converged;
        }

        match armijo_search_from(obj, &x, f_cur, &g, &dir, &cfg.armijo) {
            Ok(out) => {
                tally.loss += out.evals * n;
                x.axpy(out.eta, &dir, 1.0);
                f_cur = out.f_new;
                if out.eta >= 1.0 {
                    switched = true;
                }
                s += 1;
                trace
                    .records
                    .push(record(s, &x, f_cur, out.eta, phase, &gauge, &tally, n, t0));
            }
            Err(Error::LineSearchFailed(_)) => {
                break Termination::LineSearchFailed { stage: s };
            }
            Err(e) => return Err(e),
        }
    };

    Ok(RunOutcome { x, termination, trace })
}

/// Variance-reduced Newton with Hessian averaging and phase switching. The
/// run owns a generator seeded from the config.
pub fn svrn_ha_run<O: Objective + ?Sized>(
    obj: &O,
    x0: &Vector,
    cfg: &SvrnConfig,
    reference: Option<&Reference>,
) -> Result<RunOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    ha_run(obj, x0, SolverVariant::Svrn, cfg, reference, &mut rng)
}

/// Subsampled Newton with Hessian averaging: one line-searched step per stage.
pub fn sn_ha_run<O: Objective + ?Sized>(
    obj: &O,
    x0: &Vector,
    cfg: &SvrnConfig,
    reference: Option<&Reference>,
) -> Result<RunOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    ha_run(obj, x0, SolverVariant::Sn, cfg, reference, &mut rng)
}

/// Gradient-subsampled Newton with Hessian averaging: inner steps on fresh
/// batches without variance reduction.
pub fn sngs_ha_run<O: Objective + ?Sized>(
    obj: &O,
    x0: &Vector,
    cfg: &SvrnConfig,
    reference: Option<&Reference>,
) -> Result<RunOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    ha_run(obj, x0, SolverVariant::Sngs, cfg, reference, &mut rng)
}
