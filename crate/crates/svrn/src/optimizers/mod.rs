//! Optimization drivers: stochastic variance-reduced Newton with Hessian
//! averaging, subsampled-Newton baselines, SVRG, a classical Newton
//! reference, and a probe for the quality of stochastic Newton directions.

mod armijo;
mod driver;
mod hessian;
mod inner;
mod newton;
mod probe;
mod svrg;

pub use armijo::{armijo_search, armijo_search_from, ArmijoParams, LineSearchOutcome};
pub use driver::{
    ha_run, sn_ha_run, sngs_ha_run, svrn_ha_run, SolverVariant, SvrnConfig,
};
pub use hessian::HessianModel;
pub use inner::{
    sngs_inner, svrn_inner, svrn_stage, svrn_stage_sampled, svrn_schedule, InnerBatchSampler,
    ResampleSchedule,
};
pub use newton::newton_run;
pub use probe::{variance_probe, ProbeSampling, ProbeStats};
pub use svrg::svrg_run;

/// Error-metric level below which a run is treated as converged.
pub const DEFAULT_TOL: f64 = 1e-13;

use serde::Serialize;

use crate::linalg::h_norm_sq;
use crate::{Matrix, Vector};

/// Which kind of update produced an outer stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Subsampled Newton step with a line search.
    Sn,
    /// Variance-reduced inner loop with unit steps.
    Svrn,
    /// First-order solver without phases.
    Plain,
}

/// State of a run after each outer stage.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    /// Outer stage index; record 0 is the initial point.
    pub s: usize,
    /// Cumulative equivalent data passes: component-gradient evaluations
    /// divided by n. Hessian and loss evaluations are tracked separately.
    pub passes: f64,
    /// Normalized squared error in the reference Hessian norm, or the raw
    /// loss when no reference optimum is available.
    pub err: f64,
    /// Step size that produced this iterate (0 for the initial record and
    /// for rejected stages).
    pub eta: f64,
    pub phase: Phase,
    /// Wall-clock seconds since the start of the run.
    pub wall_s: f64,
    pub loss: f64,
    pub grad_evals: usize,
    pub hess_evals: usize,
    pub loss_evals: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
}

impl ConvergenceTrace {
    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("trace always has the initial record")
    }

    pub fn final_err(&self) -> f64 {
        self.last().err
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    Converged,
    MaxStages,
    LineSearchFailed { stage: usize },
    Diverged { err: f64 },
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub x: Vector,
    pub termination: Termination,
    pub trace: ConvergenceTrace,
}

/// A trusted optimum used to measure convergence.
#[derive(Debug, Clone)]
pub struct Reference {
    pub x_star: Vector,
    pub f_star: f64,
    /// Hessian at the optimum; errors are squared norms in this metric.
    pub hessian: Matrix,
}

impl Reference {
    /// Squared distance to the optimum in the Hessian norm.
    pub fn error_sq(&self, x: &Vector) -> f64 {
        h_norm_sq(&self.hessian, &(x - &self.x_star))
    }
}

/// Running evaluation counts. Only gradient components enter the pass
/// metric; Hessian and loss counts are reported in their own trace fields.
#[derive(Debug, Clone, Copy, Default)]
pub struct Tally {
    pub grad: usize,
    pub hess: usize,
    pub loss: usize,
}

impl Tally {
    pub fn passes(&self, n: usize) -> f64 {
        self.grad as f64 / n as f64
    }
}

/// Maps iterates to the trace error metric: relative squared Hessian-norm
/// distance when a reference is available, raw loss otherwise.
pub(crate) struct ErrorGauge<'a> {
    reference: Option<&'a Reference>,
    denom: f64,
}

impl<'a> ErrorGauge<'a> {
    pub(crate) fn new(reference: Option<&'a Reference>, x0: &Vector) -> Self {
        let denom = reference
            .map(|r| r.error_sq(x0).max(1e-300))
            .unwrap_or(1.0);
        ErrorGauge { reference, denom }
    }

    pub(crate) fn measure(&self, x: &Vector, loss: f64) -> f64 {
        match self.reference {
            Some(r) => r.error_sq(x) / self.denom,
            None => loss,
        }
    }
}
