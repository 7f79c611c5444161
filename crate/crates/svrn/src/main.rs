//! Command-line front door: generate synthetic problems, run experiment
//! sweeps from TOML configs, solve least-squares CSVs with the randomized
//! solver, and print sampling/sketching diagnostics.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use svrn::harness::{
    compute_reference, gen_from_spec, run_experiment, write_problem_csv, Coherence,
    ExperimentConfig, SyntheticSpec,
};
use svrn::linalg::spectral_approx;
use svrn::lsq_solver::{
    default_sketch_rows, sketched_hessian_inverse, solve_least_squares_with_status, LsqMode,
    LsqSolverConfig,
};
use svrn::optimizers::{variance_probe, ProbeSampling};
use svrn::problem::{objective_for, ProblemInstance, Task};
use svrn::sampling::{leverage_distribution, leverage_scores};
use svrn::Vector;

#[derive(Parser)]
#[command(name = "svrn", about = "Variance-reduced Newton solvers and diagnostics", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoherenceArg {
    Gaussian,
    GammaScaled,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Logistic,
    LeastSquares,
}

#[derive(Args)]
struct SpecArgs {
    #[arg(long, default_value_t = 16384)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    d: usize,
    /// Target condition number of the design matrix.
    #[arg(long, default_value_t = 1e3)]
    kappa: f64,
    #[arg(long, value_enum, default_value_t = CoherenceArg::Gaussian)]
    coherence: CoherenceArg,
    #[arg(long, value_enum, default_value_t = TaskArg::LeastSquares)]
    task: TaskArg,
    #[arg(long, default_value_t = 1e-4)]
    gamma: f64,
    /// Least-squares label noise standard deviation.
    #[arg(long, default_value_t = 0.316227766016838)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SpecArgs {
    fn to_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n: self.n,
            d: self.d,
            kappa_a: self.kappa,
            coherence: match self.coherence {
                CoherenceArg::Gaussian => Coherence::Gaussian,
                CoherenceArg::GammaScaled => Coherence::GammaScaled,
            },
            task: match self.task {
                TaskArg::Logistic => Task::Logistic,
                TaskArg::LeastSquares => Task::LeastSquares,
            },
            noise_sigma: self.noise_sigma,
            gamma: self.gamma,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LsqModeArg {
    Leverage,
    Rht,
    Uniform,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic problem and write it as CSV rows y,a_1,...,a_d.
    Gen {
        #[command(flatten)]
        spec: SpecArgs,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment sweep described by a TOML config.
    Run {
        /// Config path; see ExperimentConfig for the schema.
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a least-squares CSV with the sketched condition-free solver.
    Lsq {
        /// Input CSV of rows y,a_1,...,a_d.
        data: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, value_enum, default_value_t = LsqModeArg::Leverage)]
        mode: LsqModeArg,
        /// Relative loss-gap tolerance.
        #[arg(long, default_value_t = 1e-8)]
        eps: f64,
        #[arg(long)]
        sketch_rows: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        t_max: Option<usize>,
        #[arg(long, default_value_t = 30)]
        max_stages: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the solution vector here as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print gradient-variance and sketch-quality diagnostics.
    Probe {
        #[command(flatten)]
        spec: SpecArgs,
        /// Batch size for the gradient variance probe.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long)]
        sketch_rows: Option<usize>,
    },
}

fn main() -> anyhow::Result<()> {
    configure_threads()?;
    match Cli::parse().command {
        Command::Gen { spec, out } => cmd_gen(&spec.to_spec(), &out),
        Command::Run { config, out } => cmd_run(&config, out),
        Command::Lsq { data, gamma, mode, eps, sketch_rows, m, t_max, max_stages, seed, out } => {
            cmd_lsq(&data, gamma, mode, eps, sketch_rows, m, t_max, max_stages, seed, out)
        }
        Command::Probe { spec, m, trials, sketch_rows } => {
            cmd_probe(&spec.to_spec(), m, trials, sketch_rows)
        }
    }
}

/// `SVRN_THREADS` caps the worker pool; unset keeps the library default.
fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("SVRN_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .with_context(|| format!("SVRN_THREADS must be a positive integer, got {raw:?}"))?;
    if threads == 0 {
        bail!("SVRN_THREADS must be at least 1");
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("failed to size the worker pool")?;
    Ok(())
}

fn cmd_gen(spec: &SyntheticSpec, out: &PathBuf) -> anyhow::Result<()> {
    let inst = gen_from_spec(spec)?;
    write_problem_csv(&inst, out)?;
    println!("wrote {} rows x {} features to {}", inst.n(), inst.d(), out.display());
    Ok(())
}

fn cmd_run(config: &PathBuf, out: Option<PathBuf>) -> anyhow::Result<()> {
    let text = fs::read_to_string(config)
        .with_context(|| format!("cannot read config {}", config.display()))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(dir) = out {
        cfg.out_dir = dir;
    }
    let report = run_experiment(&cfg)?;
    for run in &report.runs {
        match &run.error {
            None => println!(
                "{} seed {}: {} -> {}",
                run.solver,
                run.seed,
                run.termination.as_deref().unwrap_or("?"),
                run.trace_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            Some(e) => println!("{} seed {}: FAILED: {e}", run.solver, run.seed),
        }
    }
    println!("summary: {}", report.summary_path.display());
    if report.runs.iter().any(|r| r.error.is_some()) {
        bail!("some runs failed; see above");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_lsq(
    data: &PathBuf,
    gamma: f64,
    mode: LsqModeArg,
    eps: f64,
    sketch_rows: Option<usize>,
    m: Option<usize>,
    t_max: Option<usize>,
    max_stages: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let inst = ProblemInstance::from_csv(data, Task::LeastSquares, gamma)?;
    let a = inst.design_matrix();
    let y = inst.labels().clone();
    let cfg = LsqSolverConfig {
        mode: match mode {
            LsqModeArg::Leverage => LsqMode::LeverageSampling,
            LsqModeArg::Rht => LsqMode::RhtUniform,
            LsqModeArg::Uniform => LsqMode::UniformDiagnostic,
        },
        sketch_rows,
        m,
        t_max,
        target_eps: eps,
        max_stages,
        seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (x, trace, status) = solve_least_squares_with_status(&a, &y, gamma, &cfg, &mut rng)?;
    let last = trace.last();
    println!(
        "{:?} after {} stages ({:.1} passes): loss {:.6e}",
        status,
        last.s,
        last.passes,
        last.loss
    );
    if let Some(path) = out {
        let payload = serde_json::json!({
            "x": x.as_slice(),
            "stages": last.s,
            "passes": last.passes,
            "loss": last.loss,
        });
        fs::write(&path, serde_json::to_string_pretty(&payload)?)?;
        println!("solution: {}", path.display());
    }
    Ok(())
}

fn cmd_probe(
    spec: &SyntheticSpec,
    m: Option<usize>,
    trials: usize,
    sketch_rows: Option<usize>,
) -> anyhow::Result<()> {
    let inst = gen_from_spec(spec)?;
    let a = inst.design_matrix();
    let obj = objective_for(inst);
    let reference = compute_reference(obj.as_ref())?;
    let d = obj.instance().d();
    let n = obj.instance().n();
    let m = m.unwrap_or_else(|| {
        let t = (n as f64 / d as f64).log2().max(1.0);
        (n as f64 / t) as usize
    });

    let x0 = Vector::zeros(d);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e3779b97f4a7c15);
    let uniform = variance_probe(
        obj.as_ref(),
        &x0,
        &reference.x_star,
        m,
        trials,
        ProbeSampling::Uniform,
        &mut rng,
    )?;
    println!(
        "gradient variance, uniform   m={m}: mean {:.4e} (raw {:.4e}, {trials} trials)",
        uniform.mean(),
        uniform.raw_mean()
    );
    let dist = leverage_distribution(&leverage_scores(&a)?)?;
    let weighted = variance_probe(
        obj.as_ref(),
        &x0,
        &reference.x_star,
        m,
        trials,
        ProbeSampling::Importance(&dist),
        &mut rng,
    )?;
    println!(
        "gradient variance, leverage  m={m}: mean {:.4e} (raw {:.4e}, {trials} trials)",
        weighted.mean(),
        weighted.raw_mean()
    );

    let rows = sketch_rows.unwrap_or_else(|| default_sketch_rows(d));
    let model = sketched_hessian_inverse(&a, spec.gamma, rows, &mut rng)?;
    let h = obj.full_hessian(&reference.x_star);
    let (ok, eps) = spectral_approx(model.mean(), &h, 0.25)?;
    println!(
        "sketch spectral error, {rows} rows: eps {eps:.4} ({}within 1/4)",
        if ok { "" } else { "not " }
    );
    Ok(())
}
