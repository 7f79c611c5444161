//! Synthetic problem generation, trusted reference solutions, and experiment
//! orchestration: build a problem per (solver, seed), run it, stream one JSON
//! line per outer iteration, and aggregate median curves across seeds.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SpdFactorization;
use crate::optimizers::{
    armijo_search_from, newton_run, sn_ha_run, sngs_ha_run, svrg_run, svrn_ha_run, ArmijoParams,
    ConvergenceTrace, Phase, Reference, ResampleSchedule, RunOutcome, SvrnConfig,
};
use crate::problem::{objective_for, strong_smooth_estimates, Objective, ProblemInstance, Task};
use crate::{parallel, Matrix, Vector};

/// Guard for the dense generation route: n·d capped so the thin-SVD
/// construction stays a desk-scale computation.
pub const MAX_SYNTHETIC_CELLS: usize = 100_000_000;

/// Row-coherence profile of the synthetic design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coherence {
    /// Rotationally invariant rows; leverage scores concentrate near d/n.
    Gaussian,
    /// Each row divided by sqrt(g), g ~ Gamma(shape 2, scale 1/2), planting
    /// a heavy-leverage minority of rows.
    GammaScaled,
}

/// Recipe for a synthetic instance: a Gaussian matrix is reshaped to have
/// singular values on a linear grid from 1 to `kappa_a`, optionally made
/// coherent, and labels come from a planted signal.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub kappa_a: f64,
    pub coherence: Coherence,
    pub task: Task,
    /// Standard deviation of least-squares label noise.
    pub noise_sigma: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 16384,
            d: 64,
            kappa_a: 1e3,
            coherence: Coherence::Gaussian,
            task: Task::LeastSquares,
            noise_sigma: 0.1f64.sqrt(),
            gamma: 1e-4,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n < self.d {
            return Err(Error::contract("synthetic spec needs n >= d >= 1"));
        }
        if !(self.kappa_a >= 1.0 && self.kappa_a.is_finite()) {
            return Err(Error::contract("kappa_a must be finite and >= 1"));
        }
        if !(self.noise_sigma >= 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::contract("noise_sigma and gamma must be nonnegative"));
        }
        if self.n.saturating_mul(self.d) > MAX_SYNTHETIC_CELLS {
            return Err(Error::contract("synthetic problem exceeds the dense-size guard"));
        }
        Ok(())
    }
}

/// Draws the instance described by `spec` from `rng`. The same rng state
/// always produces the same instance; [`gen_from_spec`] ties the state to
/// `spec.seed`.
pub fn gen_synthetic(spec: &SyntheticSpec, rng: &mut impl Rng) -> Result<ProblemInstance> {
    spec.validate()?;
    let (n, d) = (spec.n, spec.d);
    let g = Matrix::from_fn(n, d, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        v
    });

    // Thin SVD via the d x d Gram spectrum: G = U Sigma V^T with
    // U = G V Sigma^{-1}. The Gaussian factor is well conditioned, so the
    // squaring loses nothing at these scales.
    let eig = SymmetricEigen::new(g.tr_mul(&g));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let lambda_max = eig.eigenvalues[order[0]];
    if !(lambda_max > 0.0) || eig.eigenvalues[order[d - 1]] <= 1e-12 * lambda_max {
        return Err(Error::RankDeficient(order[d - 1]));
    }
    let v = Matrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
    let mut u = &g * &v;
    for j in 0..d {
        u.column_mut(j).scale_mut(1.0 / eig.eigenvalues[order[j]].sqrt());
    }

    // Singular values replaced by a linear grid from kappa_a down to 1.
    let mut a = u;
    for j in 0..d {
        let frac = if d == 1 { 0.0 } else { j as f64 / (d - 1) as f64 };
        a.column_mut(j).scale_mut(spec.kappa_a + (1.0 - spec.kappa_a) * frac);
    }
    a *= v.transpose();

    if spec.coherence == Coherence::GammaScaled {
        let gamma_dist = Gamma::new(2.0, 0.5).expect("fixed valid parameters");
        for i in 0..n {
            let gi: f64 = gamma_dist.sample(rng);
            // The density vanishes at zero; the clamp only guards the
            // astronomically unlikely draw that would overflow the row.
            a.row_mut(i).scale_mut(1.0 / gi.max(1e-12).sqrt());
        }
    }

    let x_nat = Vector::from_fn(d, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        v / (d as f64).sqrt()
    });
    let y = match spec.task {
        Task::Logistic => (&a * &x_nat).map(|z| if z >= 0.0 { 1.0 } else { -1.0 }),
        Task::LeastSquares => {
            let noise = Vector::from_fn(n, |_, _| {
                let v: f64 = StandardNormal.sample(rng);
                v * spec.noise_sigma
            });
            &a * &x_nat + noise
        }
    };
    ProblemInstance::new(a, y, spec.gamma, spec.task)
}

/// [`gen_synthetic`] seeded from `spec.seed`.
pub fn gen_from_spec(spec: &SyntheticSpec) -> Result<ProblemInstance> {
    gen_synthetic(spec, &mut ChaCha8Rng::seed_from_u64(spec.seed))
}

/// Computes a trusted optimum starting from the origin. See
/// [`compute_reference_from`].
pub fn compute_reference<O: Objective + ?Sized>(obj: &O) -> Result<Reference> {
    let d = obj.instance().d();
    compute_reference_from(obj, &Vector::zeros(d))
}

/// Computes a trusted optimum: least squares by a QR solve of the
/// regularized system (the ridge enters as sqrt(gamma) rows stacked under
/// A/sqrt(n)), logistic by damped Newton driven to gradient norm 1e-14.
/// Strong convexity makes the result independent of `x0`.
pub fn compute_reference_from<O: Objective + ?Sized>(obj: &O, x0: &Vector) -> Result<Reference> {
    let inst = obj.instance();
    let x_star = match inst.task() {
        Task::LeastSquares => lsq_reference(inst)?,
        Task::Logistic => logistic_reference(obj, x0)?,
    };
    Ok(Reference {
        f_star: obj.loss(&x_star),
        hessian: obj.full_hessian(&x_star),
        x_star,
    })
}

fn lsq_reference(inst: &ProblemInstance) -> Result<Vector> {
    let (n, d) = (inst.n(), inst.d());
    let root_n = (n as f64).sqrt();
    let root_gamma = inst.gamma().sqrt();
    let mut stacked = Matrix::zeros(n + d, d);
    stacked
        .view_mut((0, 0), (n, d))
        .copy_from(&(inst.features_t().transpose() / root_n));
    for j in 0..d {
        stacked[(n + j, j)] = root_gamma;
    }
    let mut rhs = Vector::zeros(n + d);
    rhs.rows_mut(0, n).copy_from(&(inst.labels() / root_n));
    let qr = stacked.qr();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)].abs() <= 1e-12 * r[(0, 0)].abs().max(1.0) {
            return Err(Error::RankDeficient(j));
        }
    }
    r.solve_upper_triangular(&(qr.q().tr_mul(&rhs)))
        .ok_or(Error::RankDeficient(0))
}

fn logistic_reference<O: Objective + ?Sized>(obj: &O, x0: &Vector) -> Result<Vector> {
    const GRAD_TOL: f64 = 1e-14;
    let mut x = x0.clone();
    let params = ArmijoParams::default();
    let mut g = obj.full_gradient(&x);
    for _ in 0..200 {
        if g.norm() <= GRAD_TOL {
            return Ok(x);
        }
        let h = obj.full_hessian(&x);
        let dir = -SpdFactorization::new(&h)?.solve(&g);
        let f = obj.loss(&x);
        match armijo_search_from(obj, &x, f, &g, &dir, &params) {
            Ok(out) => x.axpy(out.eta, &dir, 1.0),
            // A failed backtrack this deep means the decrease fell below
            // float resolution; accept the point if it is already excellent.
            Err(_) => break,
        }
        g = obj.full_gradient(&x);
    }
    let gnorm = g.norm();
    // The float floor of a full-gradient sum grows with problem size; a
    // stall slightly above the target is still a reference-quality point.
    if gnorm <= 1e-12 {
        Ok(x)
    } else {
        Err(Error::ReferenceNotConverged(gnorm))
    }
}

/// Which algorithm a sweep entry runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    SvrnHa,
    SnHa,
    SngsHa,
    Newton,
    Svrg,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::SvrnHa => "svrn_ha",
            SolverKind::SnHa => "sn_ha",
            SolverKind::SngsHa => "sngs_ha",
            SolverKind::Newton => "newton",
            SolverKind::Svrg => "svrg",
        }
    }
}

/// One solver entry of an experiment: the algorithm plus optional knob
/// overrides (absent knobs keep the solver's derived defaults).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub kind: SolverKind,
    /// Trace-file label; defaults to the solver name. Must be unique within
    /// a config (it names the output file).
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub t_max: Option<usize>,
    #[serde(default)]
    pub k: Option<usize>,
    /// SVRG step size; other solvers ignore it.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub resample: Option<ResampleSchedule>,
    #[serde(default)]
    pub max_outer: Option<usize>,
}

impl SolverSpec {
    pub fn of_kind(kind: SolverKind) -> Self {
        SolverSpec {
            kind,
            label: None,
            m: None,
            t_max: None,
            k: None,
            eta: None,
            resample: None,
            max_outer: None,
        }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.kind.name())
    }
}

/// Where the experiment's data comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemSource {
    Synthetic(SyntheticSpec),
    /// Header-free CSV rows `y,a_1,...,a_d`.
    Csv { path: PathBuf, task: Task, gamma: f64 },
}

/// What the `err` column of a trace measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricMode {
    /// Squared Hessian-norm distance to a computed reference, normalized to
    /// 1 at the start.
    #[default]
    HNorm,
    /// Raw loss; skips the reference solve.
    Loss,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

/// A full experiment: one problem recipe, a list of solvers, a list of
/// seeds. Deserializable from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSource,
    pub solvers: Vec<SolverSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub metric: MetricMode,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::contract(format!("config parse error: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.solvers.is_empty() {
            return Err(Error::contract("experiment needs at least one solver"));
        }
        if self.seeds.is_empty() {
            return Err(Error::contract("experiment needs at least one seed"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::contract("seeds must be distinct"));
        }
        let mut labels: Vec<&str> = self.solvers.iter().map(|s| s.label()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.solvers.len() {
            return Err(Error::contract("solver labels must be distinct"));
        }
        if let ProblemSource::Synthetic(spec) = &self.problem {
            spec.validate()?;
        }
        Ok(())
    }
}

/// Outcome of one (solver, seed) cell of a sweep.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub solver: String,
    pub seed: u64,
    pub trace_path: Option<PathBuf>,
    pub termination: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub runs: Vec<RunReport>,
    pub summary_path: PathBuf,
}

#[derive(Serialize)]
struct TraceRow<'a> {
    solver: &'a str,
    seed: u64,
    s: usize,
    passes: f64,
    err: f64,
    eta: f64,
    phase: Phase,
    wall_s: f64,
}

fn write_trace(path: &Path, solver: &str, seed: u64, trace: &ConvergenceTrace) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in &trace.records {
        let row = TraceRow {
            solver,
            seed,
            s: r.s,
            passes: r.passes,
            err: r.err,
            eta: r.eta,
            phase: r.phase,
            wall_s: r.wall_s,
        };
        serde_json::to_writer(&mut w, &row)
            .map_err(|e| Error::contract(format!("trace serialization failed: {e}")))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn build_instance(source: &ProblemSource, seed: u64) -> Result<ProblemInstance> {
    match source {
        ProblemSource::Synthetic(spec) => {
            let mut spec = spec.clone();
            spec.seed = seed;
            gen_from_spec(&spec)
        }
        ProblemSource::Csv { path, task, gamma } => ProblemInstance::from_csv(path, *task, *gamma),
    }
}

fn run_solver(
    obj: &dyn Objective,
    x0: &Vector,
    spec: &SolverSpec,
    seed: u64,
    reference: Option<&Reference>,
) -> Result<RunOutcome> {
    let max_outer = spec.max_outer.unwrap_or(30);
    match spec.kind {
        SolverKind::SvrnHa | SolverKind::SnHa | SolverKind::SngsHa => {
            let cfg = SvrnConfig {
                m: spec.m,
                t_max: spec.t_max,
                k: spec.k,
                resample_policy: spec.resample.unwrap_or(ResampleSchedule::PerStep),
                max_outer,
                seed,
                ..SvrnConfig::default()
            };
            match spec.kind {
                SolverKind::SvrnHa => svrn_ha_run(obj, x0, &cfg, reference),
                SolverKind::SnHa => sn_ha_run(obj, x0, &cfg, reference),
                _ => sngs_ha_run(obj, x0, &cfg, reference),
            }
        }
        SolverKind::Newton => newton_run(obj, x0, &ArmijoParams::default(), max_outer, reference),
        SolverKind::Svrg => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            svrg_run(obj, x0, spec.eta, spec.m, max_outer, reference, &mut rng)
        }
    }
}

fn run_single(cfg: &ExperimentConfig, spec: &SolverSpec, seed: u64) -> Result<(RunOutcome, PathBuf)> {
    let inst = build_instance(&cfg.problem, seed)?;
    let obj = objective_for(inst);
    let reference = match cfg.metric {
        MetricMode::HNorm => Some(compute_reference(obj.as_ref())?),
        MetricMode::Loss => None,
    };
    let x0 = Vector::zeros(obj.instance().d());
    let outcome = run_solver(obj.as_ref(), &x0, spec, seed, reference.as_ref())?;
    let path = cfg.out_dir.join(format!("{}_seed{}.jsonl", spec.label(), seed));
    write_trace(&path, spec.label(), seed, &outcome.trace)?;
    Ok((outcome, path))
}

/// Deterministic order statistic: the sorted value nearest to quantile `q`.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn write_summary(
    path: &Path,
    cfg: &ExperimentConfig,
    traces: &[(String, u64, ConvergenceTrace)],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["solver", "s", "seeds", "passes_median", "err_median", "err_q25", "err_q75"])?;
    for spec in &cfg.solvers {
        let label = spec.label();
        let mine: Vec<&ConvergenceTrace> = traces
            .iter()
            .filter(|(l, _, _)| l == label)
            .map(|(_, _, t)| t)
            .collect();
        let max_len = mine.iter().map(|t| t.len()).max().unwrap_or(0);
        for s in 0..max_len {
            let mut passes: Vec<f64> = Vec::new();
            let mut errs: Vec<f64> = Vec::new();
            for t in &mine {
                if let Some(r) = t.records.get(s) {
                    passes.push(r.passes);
                    errs.push(r.err);
                }
            }
            passes.sort_by(|a, b| a.partial_cmp(b).unwrap());
            errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            w.write_record([
                label.to_string(),
                s.to_string(),
                errs.len().to_string(),
                format!("{}", quantile(&passes, 0.5)),
                format!("{}", quantile(&errs, 0.5)),
                format!("{}", quantile(&errs, 0.25)),
                format!("{}", quantile(&errs, 0.75)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Runs every (solver, seed) cell, writing one JSONL trace per run and a
/// median/quartile summary CSV. Cells run in parallel; a failing cell is
/// recorded in its report entry and does not abort the sweep.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let jobs: Vec<(usize, u64)> = cfg
        .solvers
        .iter()
        .enumerate()
        .flat_map(|(i, _)| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results = parallel::map_items(jobs, |(i, seed)| {
        let spec = &cfg.solvers[i];
        (spec.label().to_string(), seed, run_single(cfg, spec, seed))
    });

    let mut runs = Vec::with_capacity(results.len());
    let mut traces = Vec::new();
    for (label, seed, result) in results {
        match result {
            Ok((outcome, path)) => {
                runs.push(RunReport {
                    solver: label.clone(),
                    seed,
                    trace_path: Some(path),
                    termination: Some(format!("{:?}", outcome.termination)),
                    error: None,
                });
                traces.push((label, seed, outcome.trace));
            }
            Err(e) => runs.push(RunReport {
                solver: label,
                seed,
                trace_path: None,
                termination: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let summary_path = cfg.out_dir.join("summary.csv");
    write_summary(&summary_path, cfg, &traces)?;
    Ok(ExperimentReport { runs, summary_path })
}

/// Sweeps the SVRG step size over {2^-1, ..., 2^-12} / lambda and returns
/// the grid point with the smallest final error together with its run.
/// Every candidate restarts from the same seed, so the comparison is paired.
pub fn svrg_tuned<O: Objective + ?Sized>(
    obj: &O,
    x0: &Vector,
    max_outer: usize,
    reference: Option<&Reference>,
    seed: u64,
) -> Result<(f64, RunOutcome)> {
    let lambda = strong_smooth_estimates(obj.instance())?.lambda;
    let mut best: Option<(f64, RunOutcome)> = None;
    for p in 1..=12 {
        let eta = 2f64.powi(-p) / lambda;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = svrg_run(obj, x0, Some(eta), None, max_outer, reference, &mut rng)?;
        let better = match &best {
            Some((_, incumbent)) => out.trace.final_err() < incumbent.trace.final_err(),
            None => true,
        };
        if better {
            best = Some((eta, out));
        }
    }
    Ok(best.expect("grid is nonempty"))
}

/// Writes an instance as header-free CSV rows `y,a_1,...,a_d`, the format
/// [`ProblemInstance::from_csv`] reads back. Floats print in shortest
/// round-trip form, so a load-save cycle is exact.
pub fn write_problem_csv(inst: &ProblemInstance, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let (n, d) = (inst.n(), inst.d());
    let mut record: Vec<String> = Vec::with_capacity(d + 1);
    for i in 0..n {
        record.clear();
        record.push(format!("{}", inst.labels()[i]));
        let row = inst.row(i);
        for j in 0..d {
            record.push(format!("{}", row[j]));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
