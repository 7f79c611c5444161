//! End-to-end acceptance gate for the workspace: eleven scaled-down
//! quantitative checks, one test per criterion, each printing a single
//! `[PASS]`/`[FAIL]` line with the measured numbers before asserting.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use svrn::harness::{
    compute_reference, gen_from_spec, run_experiment, Coherence, ExperimentConfig, MetricMode,
    ProblemSource, SolverKind, SolverSpec, SyntheticSpec,
};
use svrn::linalg::{fwht, spectral_approx};
use svrn::lsq_solver::{solve_least_squares, LsqMode, LsqSolverConfig};
use svrn::optimizers::{
    newton_run, sngs_ha_run, svrg_run, svrn_ha_run, svrn_stage, variance_probe, ArmijoParams,
    HessianModel, Phase, ProbeSampling, Reference, SvrnConfig, Termination,
};
use svrn::problem::{objective_for, strong_smooth_estimates, Objective};
use svrn::sampling::{
    leverage_distribution, leverage_scores, rht_apply, subsampled_hessian, DrawFrom,
};
use svrn::{Matrix, Vector};

fn report(criterion: usize, ok: bool, detail: String) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {criterion}: {detail}");
    assert!(ok, "criterion {criterion}: {detail}");
}

fn spec(n: usize, d: usize, kappa: f64, coherence: Coherence, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n,
        d,
        kappa_a: kappa,
        coherence,
        seed,
        ..SyntheticSpec::default()
    }
}

fn problem(s: &SyntheticSpec) -> (Box<dyn Objective>, Reference) {
    let inst = gen_from_spec(s).expect("synthetic generation");
    let obj = objective_for(inst);
    let reference = compute_reference(obj.as_ref()).expect("reference solve");
    (obj, reference)
}

/// Loss-gap contraction factors between consecutive entries, skipping
/// windows that start at or below the floating-point floor of `f_star`.
fn gap_ratios(losses: &[f64], f_star: f64) -> Vec<f64> {
    let floor = 1e-9 * f_star.abs().max(1e-300);
    losses
        .windows(2)
        .filter_map(|w| {
            let g0 = w[0] - f_star;
            let g1 = w[1] - f_star;
            if !g0.is_finite() || g0 <= floor {
                return None;
            }
            Some(if g1.is_finite() { (g1 / g0).max(0.0) } else { f64::INFINITY })
        })
        .collect()
}

fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty());
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[(v.len() - 1) / 2]
}

/// Runs `stages` variance-reduced stages from zero under a fixed Hessian
/// model and returns the loss after each stage, starting value included.
fn stage_losses(
    obj: &dyn Objective,
    hess: &HessianModel,
    cfg: &SvrnConfig,
    stages: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut x = Vector::zeros(obj.instance().d());
    let mut losses = vec![obj.loss(&x)];
    for _ in 0..stages {
        x = svrn_stage(obj, &x, hess, cfg, rng).expect("stage");
        losses.push(obj.loss(&x));
    }
    losses
}

fn offset_point(reference: &Reference, seed: u64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = reference.x_star.len();
    let dir = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
    &reference.x_star + dir * (0.1 / (d as f64).sqrt())
}

#[test]
fn criterion_01_stage_contraction_with_an_exact_hessian() {
    let t0 = Instant::now();
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let (obj, reference) = problem(&spec(16384, 64, 1e3, Coherence::Gaussian, seed));
        let hess = HessianModel::from_matrix(reference.hessian.clone()).unwrap();
        let cfg = SvrnConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let losses = stage_losses(obj.as_ref(), &hess, &cfg, 6, &mut rng);
        ratios.extend(gap_ratios(&losses, reference.f_star));
    }
    let med = median(&ratios);
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    report(
        1,
        med <= 0.05 && worst < 1.0,
        format!(
            "per-stage loss-gap ratio median {med:.4} (<= 0.05), worst {worst:.4} (< 1), \
             5 seeds x 6 stages, {:.1}s",
            t0.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_02_sketched_solver_rate_and_coherent_data_contrast() {
    let t0 = Instant::now();
    let (n, d) = (16384usize, 64usize);
    let lg = ((n / d) as f64).log2();
    let bound = 4.0 * d as f64 * lg * lg / n as f64;

    let run = |source: &SyntheticSpec, mode: LsqMode, stages: usize| {
        let inst = gen_from_spec(source).unwrap();
        let obj = objective_for(inst);
        let reference = compute_reference(obj.as_ref()).unwrap();
        let a = obj.instance().design_matrix();
        let y = obj.instance().labels().clone();
        let cfg = LsqSolverConfig {
            mode,
            target_eps: 1e-30,
            max_stages: stages,
            ..LsqSolverConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(100 + source.seed);
        let (_, trace) = solve_least_squares(&a, &y, obj.instance().gamma(), &cfg, &mut rng).unwrap();
        let losses: Vec<f64> = trace.records.iter().map(|r| r.loss).collect();
        (gap_ratios(&losses, reference.f_star), reference.f_star, losses)
    };

    // Well-conditioned incoherent problem: both condition-free modes must sit
    // inside the dimension-only bound.
    let mut lev = Vec::new();
    let mut rht = Vec::new();
    for seed in 0..3 {
        let source = spec(n, d, 1e3, Coherence::Gaussian, seed);
        lev.extend(run(&source, LsqMode::LeverageSampling, 8).0);
        rht.extend(run(&source, LsqMode::RhtUniform, 8).0);
    }
    let (lev_med, rht_med) = (median(&lev), median(&rht));

    // Coherent rows: at an equal eight-stage budget the rotated sketch must
    // leave a loss gap at least ten times smaller than the plain-uniform
    // diagnostic, i.e. a 10x better cumulative per-stage ratio.
    let mut min_contrast = f64::INFINITY;
    for seed in 0..3 {
        let source = spec(n, d, 1e3, Coherence::GammaScaled, seed);
        let (_, f_star, rht_losses) = run(&source, LsqMode::RhtUniform, 8);
        let (_, _, diag_losses) = run(&source, LsqMode::UniformDiagnostic, 8);
        let gap = |l: &Vec<f64>| (l.last().unwrap() - f_star).max(1e-300);
        min_contrast = min_contrast.min(gap(&diag_losses) / gap(&rht_losses));
    }

    report(
        2,
        lev_med <= bound && rht_med <= bound && min_contrast >= 10.0,
        format!(
            "ratio medians leverage {lev_med:.4} / rotated {rht_med:.4} (bound {bound:.3}); \
             coherent-data gap contrast vs plain uniform >= {min_contrast:.1e} (>= 10), {:.1}s",
            t0.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_03_unit_steps_after_the_first_safe_iteration() {
    let t0 = Instant::now();
    let mut ok = true;
    let mut switched = 0usize;
    for seed in 0..5 {
        let (obj, reference) = problem(&spec(16384, 64, 1e3, Coherence::Gaussian, seed));
        let cfg = SvrnConfig {
            k: Some(16 * 64),
            seed,
            ..SvrnConfig::default()
        };
        let x0 = Vector::zeros(64);
        let out = svrn_ha_run(obj.as_ref(), &x0, &cfg, Some(&reference)).unwrap();
        let records = &out.trace.records;
        let seed_ok = records.len() > 2
            && records[1].phase == Phase::Sn
            && records[2..]
                .iter()
                .all(|r| r.phase == Phase::Svrn && r.eta == 1.0);
        switched += usize::from(seed_ok);
        ok &= seed_ok;
    }
    report(
        3,
        ok,
        format!(
            "one safe Newton iteration, then eta = 1 at every variance-reduced \
             iteration ({switched}/5 seeds), {:.1}s",
            t0.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_04_estimate_error_scales_inversely_with_batch_size() {
    let t0 = Instant::now();
    let (obj, reference) = problem(&spec(4096, 32, 1e3, Coherence::Gaussian, 0));
    let x = offset_point(&reference, 4242);
    let mut rng = ChaCha8Rng::seed_from_u64(4000);
    let small = variance_probe(
        obj.as_ref(),
        &x,
        &reference.x_star,
        256,
        400,
        ProbeSampling::Uniform,
        &mut rng,
    )
    .unwrap();
    let large = variance_probe(
        obj.as_ref(),
        &x,
        &reference.x_star,
        512,
        400,
        ProbeSampling::Uniform,
        &mut rng,
    )
    .unwrap();
    let ratio = small.mean() / large.mean();
    let exhaustive = variance_probe(
        obj.as_ref(),
        &x,
        &reference.x_star,
        1,
        4,
        ProbeSampling::Exhaustive,
        &mut rng,
    )
    .unwrap();
    report(
        4,
        (1.6..=2.4).contains(&ratio) && exhaustive.mean() == 0.0,
        format!(
            "doubling m changes the mean by {ratio:.2}x (in [1.6, 2.4]); exhaustive mean {:.1e} \
             (exactly 0), 400 trials, {:.1}s",
            exhaustive.mean(),
            t0.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_05_leverage_probe_is_condition_number_insensitive() {
    let t0 = Instant::now();
    let mut means = Vec::new();
    let mut doubling = Vec::new();
    for (i, kappa) in [10.0, 1e3].into_iter().enumerate() {
        let (obj, reference) = problem(&spec(4096, 32, kappa, Coherence::Gaussian, 0));
        let scores = leverage_scores(&obj.instance().design_matrix()).unwrap();
        let dist = leverage_distribution(&scores).unwrap();
        let x = offset_point(&reference, 5300 + i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + i as u64);
        let small = variance_probe(
            obj.as_ref(),
            &x,
            &reference.x_star,
            128,
            400,
            ProbeSampling::Importance(&dist),
            &mut rng,
        )
        .unwrap();
        let large = variance_probe(
            obj.as_ref(),
            &x,
            &reference.x_star,
            256,
            400,
            ProbeSampling::Importance(&dist),
            &mut rng,
        )
        .unwrap();
        means.push(small.mean());
        doubling.push(small.mean() / large.mean());
    }
    let sensitivity = (means[1] / means[0]).max(means[0] / means[1]);
    let scaling_ok = doubling.iter().all(|r| (1.6..=2.4).contains(r));
    report(
        5,
        scaling_ok && sensitivity <= 2.0,
        format!(
            "doubling ratios {:.2}x / {:.2}x (in [1.6, 2.4]); kappa 10 -> 1e3 shifts the \
             normalized mean by {sensitivity:.2}x (<= 2), {:.1}s",
            doubling[0],
            doubling[1],
            t0.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_06_variance_reduction_beats_uncorrected_subsampling() {
    let t0 = Instant::now();
    let mut ok = true;
    let mut svrn_passes = Vec::new();
    let mut sngs_floors = Vec::new();
    for seed in 0..5 {
        let (obj, reference) = problem(&spec(16384, 64, 1e3, Coherence::Gaussian, seed));
        let x0 = Vector::zeros(64);
        let svrn_cfg = SvrnConfig {
            seed,
            max_outer: 14,
            ..SvrnConfig::default()
        };
        let svrn = svrn_ha_run(obj.as_ref(), &x0, &svrn_cfg, Some(&reference)).unwrap();
        let hit = svrn
            .trace
            .records
            .iter()
            .find(|r| r.passes <= 40.0 && r.err <= 1e-12);
        svrn_passes.push(hit.map(|r| r.passes).unwrap_or(f64::NAN));

        let sngs_cfg = SvrnConfig {
            seed,
            max_outer: 45,
            ..SvrnConfig::default()
        };
        let sngs = sngs_ha_run(obj.as_ref(), &x0, &sngs_cfg, Some(&reference)).unwrap();
        let floor = sngs
            .trace
            .records
            .iter()
            .filter(|r| r.passes <= 40.0)
            .map(|r| r.err)
            .fold(f64::INFINITY, f64::min);
        sngs_floors.push(floor);
        ok &= hit.is_some() && floor >= 1e-8;
    }
    report(
        6,
        ok,
        format!(
            "corrected solver reaches 1e-12 by {:?} passes; uncorrected floor {:.1e}..{:.1e} \
             (>= 1e-8) over the same 40-pass budget, 5 seeds, {:.1}s",
            svrn_passes.iter().map(|p| p.round()).collect::<Vec<_>>(),
            sngs_floors.iter().cloned().fold(f64::INFINITY, f64::min),
            sngs_floors.iter().cloned().fold(0.0, f64::max),
            t0.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_07_averaging_tightens_the_hessian_estimate() {
    let t0 = Instant::now();

    // Closed-form identity: the model's mean is the arithmetic mean.
    let d = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(7000);
    let mut sum = Matrix::zeros(d, d);
    let mut model: Option<HessianModel> = None;
    for _ in 0..16 {
        let r = Matrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let h = r.transpose() * &r / d as f64 + Matrix::identity(d, d) * 0.5;
        sum += &h;
        match model.as_mut() {
            None => model = Some(HessianModel::from_matrix(h).unwrap()),
            Some(m) => m.update(&h).unwrap(),
        }
    }
    let model = model.unwrap();
    let exact = sum / 16.0;
    let identity_err = (model.mean() - &exact).norm() / exact.norm();

    // On a quadratic, averaging sixteen subsampled estimates beats a single
    // draw's spectral error almost always.
    let (obj, reference) = problem(&spec(2048, 16, 1e3, Coherence::Gaussian, 0));
    let x0 = Vector::zeros(16);
    let mut wins = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(7100 + seed);
        let mut avg = Matrix::zeros(16, 16);
        let mut eps_one = 0.0;
        for s in 0..16 {
            let h = subsampled_hessian(obj.as_ref(), &x0, 32, DrawFrom::Uniform, &mut rng).unwrap();
            avg += &h;
            if s == 0 {
                eps_one = spectral_approx(&h, &reference.hessian, 0.25).unwrap().1;
            }
        }
        let eps_avg = spectral_approx(&(avg / 16.0), &reference.hessian, 0.25)
            .unwrap()
            .1;
        wins += usize::from(eps_avg < eps_one);
    }

    report(
        7,
        identity_err <= 1e-12 && wins >= 95,
        format!(
            "running mean matches the arithmetic mean to {identity_err:.1e} (<= 1e-12); \
             16-sample average beats a single draw in {wins}/100 seeds (>= 95), {:.1}s",
            t0.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_08_hessian_sample_size_threshold() {
    let t0 = Instant::now();
    let d = 64usize;
    let mut med_by_h = Vec::new();
    let mut quarter_failures = 0usize;
    for (hi, h_samples) in [d, 4 * d, 16 * d].into_iter().enumerate() {
        let mut per_seed = Vec::new();
        for seed in 0..5 {
            let (obj, reference) = problem(&spec(16384, 64, 1e3, Coherence::Gaussian, seed));
            let mut draw_rng = ChaCha8Rng::seed_from_u64(8000 + 10 * seed + hi as u64);
            let x0 = Vector::zeros(d);
            let b = subsampled_hessian(obj.as_ref(), &x0, h_samples, DrawFrom::Uniform, &mut draw_rng)
                .unwrap();
            if h_samples == d {
                let (holds, _) = spectral_approx(&b, &reference.hessian, 0.25).unwrap();
                quarter_failures += usize::from(!holds);
            }
            let hess = HessianModel::from_matrix(b).unwrap();
            let cfg = SvrnConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(8500 + seed);
            let losses = stage_losses(obj.as_ref(), &hess, &cfg, 5, &mut rng);
            per_seed.push(median(&gap_ratios(&losses, reference.f_star)));
        }
        med_by_h.push(median(&per_seed));
    }
    let degradation = med_by_h[0] / med_by_h[2];
    report(
        8,
        med_by_h[2] <= 0.1 && quarter_failures == 5 && degradation >= 5.0,
        format!(
            "median stage ratios {:.1e} / {:.1e} / {:.1e} at h = d / 4d / 16d; h = d fails the \
             quarter spectral check {quarter_failures}/5 and degrades {degradation:.1e}x \
             (>= 5x), {:.1}s",
            med_by_h[0],
            med_by_h[1],
            med_by_h[2],
            t0.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_09_transform_exactness_and_leverage_mass() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9000);
    let a = Matrix::from_fn(1000, 8, |_, _| rng.gen_range(-1.0..1.0));
    let y = Vector::from_fn(1000, |_, _| rng.gen_range(-1.0..1.0));
    let (at, yt, _) = rht_apply(&a, &y, &mut rng).unwrap();
    let mut max_rel = 0.0f64;
    for _ in 0..100 {
        let x = Vector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
        let orig = (&a * &x - &y).norm_squared();
        let rotated = (&at * &x - &yt).norm_squared();
        max_rel = max_rel.max((rotated - orig).abs() / orig);
    }

    let mut h2 = Matrix::zeros(2, 2);
    h2[(0, 0)] = 1.0;
    h2[(0, 1)] = 1.0;
    h2[(1, 0)] = 1.0;
    h2[(1, 1)] = -1.0;
    let dense = h2.kronecker(&h2).kronecker(&h2).kronecker(&h2) / 4.0;
    let v = Vector::from_fn(16, |i, _| ((i + 1) as f64).sin());
    let mut fast = v.as_slice().to_vec();
    fwht(&mut fast).unwrap();
    let fwht_err = (Vector::from_vec(fast) - &dense * &v).amax();

    let scores = leverage_scores(&Matrix::from_fn(512, 24, |_, _| rng.gen_range(-1.0..1.0))).unwrap();
    let mass_err = (scores.iter().sum::<f64>() - 24.0).abs();

    report(
        9,
        max_rel <= 1e-10 && fwht_err <= 1e-12 && mass_err <= 1e-8,
        format!(
            "rotated residual matches to {max_rel:.1e} (<= 1e-10) over 100 points; fwht vs dense \
             Hadamard {fwht_err:.1e} (<= 1e-12); leverage mass off by {mass_err:.1e} (<= 1e-8), \
             {:.1}s",
            t0.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_10_baseline_sanity() {
    let t0 = Instant::now();
    let (obj, reference) = problem(&spec(2048, 16, 1e2, Coherence::Gaussian, 0));
    let x0 = Vector::zeros(16);

    let newton = newton_run(obj.as_ref(), &x0, &ArmijoParams::default(), 3, Some(&reference)).unwrap();
    let first = &newton.trace.records[1];
    let newton_ok = first.eta == 1.0 && first.err <= 1e-10;

    let lambda = strong_smooth_estimates(obj.instance()).unwrap().lambda;
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let stable = svrg_run(
        obj.as_ref(),
        &x0,
        Some(1.0 / (4.0 * lambda)),
        None,
        10,
        Some(&reference),
        &mut rng,
    )
    .unwrap();
    let gaps: Vec<f64> = stable
        .trace
        .records
        .iter()
        .map(|r| r.loss - reference.f_star)
        .collect();
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);

    let mut rng = ChaCha8Rng::seed_from_u64(10_001);
    let hot = svrg_run(
        obj.as_ref(),
        &x0,
        Some(10.0 / lambda),
        None,
        50,
        Some(&reference),
        &mut rng,
    )
    .unwrap();
    let diverged = matches!(hot.termination, Termination::Diverged { .. });

    report(
        10,
        newton_ok && monotone && diverged,
        format!(
            "Newton's first unit step lands at err {:.1e} (<= 1e-10); SVRG at eta = 1/(4 lambda) \
             decreases the loss gap for 10 stages ({monotone}); eta = 10/lambda diverges \
             ({diverged}), {:.1}s",
            first.err,
            t0.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_11_reruns_are_identical_outside_wall_time() {
    let t0 = Instant::now();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut outputs = Vec::new();
    for dir in &dirs {
        let mut svrn = SolverSpec::of_kind(SolverKind::SvrnHa);
        svrn.max_outer = Some(8);
        let mut newton = SolverSpec::of_kind(SolverKind::Newton);
        newton.max_outer = Some(6);
        let cfg = ExperimentConfig {
            problem: ProblemSource::Synthetic(spec(2048, 16, 1e2, Coherence::Gaussian, 0)),
            solvers: vec![svrn, newton],
            seeds: vec![0, 1],
            out_dir: dir.path().to_path_buf(),
            metric: MetricMode::HNorm,
        };
        let run = run_experiment(&cfg).unwrap();
        assert!(run.runs.iter().all(|r| r.error.is_none()));
        let mut canon = Vec::new();
        for r in &run.runs {
            let path = r.trace_path.clone().unwrap();
            let text = std::fs::read_to_string(&path).unwrap();
            let lines: Vec<String> = text
                .lines()
                .map(|l| {
                    let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                    v.as_object_mut().unwrap().remove("wall_s").unwrap();
                    serde_json::to_string(&v).unwrap()
                })
                .collect();
            canon.push((path.file_name().unwrap().to_owned(), lines));
        }
        canon.sort();
        let summary = std::fs::read(&run.summary_path).unwrap();
        outputs.push((canon, summary));
    }
    let identical = outputs[0] == outputs[1];
    report(
        11,
        identical,
        format!(
            "two invocations, 4 traces + summary byte-identical after dropping wall_s \
             ({identical}), {:.1}s",
            t0.elapsed().as_secs_f64()
        ),
    );
}
