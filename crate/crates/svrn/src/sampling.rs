//! Component sampling: uniform batches, weighted inverse-CDF draws, exact
//! leverage scores, the randomized Hadamard transform, and subsampled
//! Hessian estimates.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::fwht;
use crate::parallel;
use crate::problem::{ImportanceWeights, Objective, Weighting};
use crate::{Matrix, Vector};

/// Draws `m` indices from `0..n` i.i.d. with replacement.
pub fn uniform_batch(n: usize, m: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if n == 0 || m == 0 {
        return Err(Error::contract("uniform_batch needs n >= 1 and m >= 1"));
    }
    Ok((0..m).map(|_| rng.gen_range(0..n)).collect())
}

/// A discrete distribution over components with O(log n) inverse-CDF draws.
#[derive(Debug, Clone)]
pub struct SamplingDistribution {
    weights: ImportanceWeights,
    cum: Vec<f64>,
}

impl SamplingDistribution {
    pub fn new(weights: ImportanceWeights) -> Self {
        // Compensated running sum keeps the table end at 1 to around one ulp
        // even for very long probability vectors.
        let mut cum = Vec::with_capacity(weights.len());
        let mut sum = 0.0;
        let mut carry = 0.0;
        for &p in weights.probabilities() {
            let y = p - carry;
            let t = sum + y;
            carry = (t - sum) - y;
            sum = t;
            cum.push(sum);
        }
        // The weights were validated to sum to 1 at a coarser tolerance;
        // rescale here if needed so the table itself is tight.
        if (sum - 1.0).abs() > 1e-12 {
            let inv = 1.0 / sum;
            for c in &mut cum {
                *c *= inv;
            }
        }
        // Pin the final entry so a draw can never fall off the table.
        *cum.last_mut().expect("weights are nonempty") = 1.0;
        SamplingDistribution { weights, cum }
    }

    /// Uniform distribution over `0..n`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::contract("empty distribution"));
        }
        let p = vec![1.0 / n as f64; n];
        // Deliberately normalized again: 1/n is not exact in binary.
        Ok(Self::new(ImportanceWeights::from_scores(&p)?))
    }

    pub fn len(&self) -> usize {
        self.cum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cum.is_empty()
    }

    pub fn weights(&self) -> &ImportanceWeights {
        &self.weights
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    /// Draws one index by binary search on the cumulative table.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.gen();
        let idx = self.cum.partition_point(|&c| c <= u);
        idx.min(self.cum.len() - 1)
    }

    pub fn sample_batch(&self, m: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if m == 0 {
            return Err(Error::contract("batch size must be positive"));
        }
        Ok((0..m).map(|_| self.sample(rng)).collect())
    }
}

/// Exact leverage scores l_i = |q_i|^2 from a thin orthogonal factorization
/// of the n x d design matrix (n >= d, full column rank).
pub fn leverage_scores(a: &Matrix) -> Result<Vec<f64>> {
    let (n, d) = a.shape();
    if n < d || d == 0 {
        return Err(Error::contract("leverage scores need n >= d >= 1"));
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let r_max = (0..d).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if let Some(j) = (0..d).find(|&j| r[(j, j)].abs() <= 1e-12 * r_max) {
        return Err(Error::RankDeficient(j));
    }
    let q = qr.q();
    Ok((0..n).map(|i| q.row(i).norm_squared()).collect())
}

/// Normalizes leverage scores into a sampling distribution p_i = l_i / sum l.
pub fn leverage_distribution(scores: &[f64]) -> Result<SamplingDistribution> {
    Ok(SamplingDistribution::new(ImportanceWeights::from_scores(scores)?))
}

/// Sign and padding data of a randomized Hadamard transform H D applied to
/// vectors of original length `n` padded to the next power of two.
#[derive(Debug, Clone)]
pub struct RhtTransform {
    signs: Vec<f64>,
    n: usize,
}

impl RhtTransform {
    /// Draws fresh Rademacher signs for inputs of length `n`.
    pub fn draw(n: usize, rng: &mut impl Rng) -> Result<Self> {
        if n == 0 {
            return Err(Error::contract("transform length must be positive"));
        }
        let n_pad = n.next_power_of_two();
        let signs = (0..n_pad)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Ok(RhtTransform { signs, n })
    }

    /// Builds the transform from explicit signs (length must equal the padded
    /// size). Mostly useful for making tests reproducible by hand.
    pub fn with_signs(signs: Vec<f64>, n: usize) -> Result<Self> {
        if n == 0 || signs.len() != n.next_power_of_two() {
            return Err(Error::contract("sign vector must have the padded length"));
        }
        if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::contract("signs must be +1 or -1"));
        }
        Ok(RhtTransform { signs, n })
    }

    pub fn input_len(&self) -> usize {
        self.n
    }

    pub fn padded_len(&self) -> usize {
        self.signs.len()
    }

    fn transform_column(&self, col: &mut [f64]) {
        for (v, s) in col.iter_mut().zip(&self.signs) {
            *v *= s;
        }
        fwht(col).expect("padded length is a power of two");
    }

    /// Applies H D to every column of an n x d matrix, returning the padded
    /// n_pad x d result.
    pub fn apply_matrix(&self, a: &Matrix) -> Result<Matrix> {
        if a.nrows() != self.n {
            return Err(Error::contract("matrix height does not match transform"));
        }
        let n_pad = self.padded_len();
        let d = a.ncols();
        let mut out = Matrix::zeros(n_pad, d);
        out.view_mut((0, 0), (self.n, d)).copy_from(a);
        // Columns of a DMatrix are contiguous, so each chunk below is exactly
        // one column; columns transform independently.
        parallel::for_each_chunk_mut(out.as_mut_slice(), n_pad, |col| {
            self.transform_column(col);
        });
        Ok(out)
    }

    /// Applies H D to a single vector.
    pub fn apply_vector(&self, y: &Vector) -> Result<Vector> {
        if y.len() != self.n {
            return Err(Error::contract("vector length does not match transform"));
        }
        let mut out = vec![0.0; self.padded_len()];
        out[..self.n].copy_from_slice(y.as_slice());
        self.transform_column(&mut out);
        Ok(Vector::from_vec(out))
    }
}

/// Rotates a least-squares problem (A, y) by a fresh randomized Hadamard
/// transform. Returns the padded pair and the transform that produced it.
pub fn rht_apply(a: &Matrix, y: &Vector, rng: &mut impl Rng) -> Result<(Matrix, Vector, RhtTransform)> {
    if a.nrows() != y.len() {
        return Err(Error::contract("row count and label count differ"));
    }
    let t = RhtTransform::draw(a.nrows(), rng)?;
    let at = t.apply_matrix(a)?;
    let yt = t.apply_vector(y)?;
    Ok((at, yt, t))
}

/// How Hessian components are drawn.
#[derive(Clone, Copy)]
pub enum DrawFrom<'a> {
    Uniform,
    Weighted(&'a SamplingDistribution),
}

/// Mean of `k` reweighted component Hessians at freshly drawn indices.
pub fn subsampled_hessian<O: Objective + ?Sized>(
    obj: &O,
    x: &Vector,
    k: usize,
    draw: DrawFrom,
    rng: &mut impl Rng,
) -> Result<Matrix> {
    let n = obj.instance().n();
    let indices = match draw {
        DrawFrom::Uniform => uniform_batch(n, k, rng)?,
        DrawFrom::Weighted(dist) => {
            if dist.len() != n {
                return Err(Error::contract("distribution length does not match n"));
            }
            dist.sample_batch(k, rng)?
        }
    };
    let weighting = match draw {
        DrawFrom::Uniform => Weighting::Uniform,
        DrawFrom::Weighted(dist) => Weighting::Importance(dist.weights()),
    };
    hessian_at_indices(obj, x, &indices, weighting)
}

/// Mean of reweighted component Hessians over explicit indices. Exposed so
/// tests can replace sampling by exhaustive enumeration.
pub fn hessian_at_indices<O: Objective + ?Sized>(
    obj: &O,
    x: &Vector,
    indices: &[usize],
    weighting: Weighting,
) -> Result<Matrix> {
    if indices.is_empty() {
        return Err(Error::contract("hessian subsample needs at least one index"));
    }
    let inst = obj.instance();
    let n = inst.n();
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(Error::contract(format!("component index {bad} out of range")));
    }
    let d = inst.d();
    let data = parallel::block_reduce(
        indices.len(),
        Matrix::zeros(d, d),
        |range| {
            let mut acc = Matrix::zeros(d, d);
            for pos in range {
                let i = indices[pos];
                let row = inst.row(i);
                let w = obj.point_curvature(i, row.dot(x))
                    * match weighting {
                        Weighting::Uniform => 1.0,
                        Weighting::Importance(iw) => iw.inv_np(i),
                    };
                acc.ger(w, &row, &row, 1.0);
            }
            acc
        },
        |mut a, b| {
            a += b;
            a
        },
    );
    let mut h = data / indices.len() as f64;
    for j in 0..d {
        h[(j, j)] += inst.gamma();
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{LeastSquaresObjective, ProblemInstance, Task};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Distribution;

    #[test]
    fn uniform_batch_is_deterministic_and_in_range() {
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        let b1 = uniform_batch(100, 50, &mut r1).unwrap();
        let b2 = uniform_batch(100, 50, &mut r2).unwrap();
        assert_eq!(b1, b2);
        assert!(b1.iter().all(|&i| i < 100));
        assert!(uniform_batch(0, 5, &mut r1).is_err());
        assert!(uniform_batch(5, 0, &mut r1).is_err());
    }

    #[test]
    fn uniform_batch_frequencies_within_four_sigma() {
        let n = 10;
        let m = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = uniform_batch(n, m, &mut rng).unwrap();
        let mut counts = vec![0usize; n];
        for i in batch {
            counts[i] += 1;
        }
        let p = 1.0 / n as f64;
        let sigma = (m as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            let dev = (c as f64 - m as f64 * p).abs();
            assert!(dev <= 4.0 * sigma, "bin {i} off by {dev:.1} (4 sigma = {:.1})", 4.0 * sigma);
        }
    }

    #[test]
    fn cumulative_table_is_monotone_and_ends_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let dist = leverage_distribution(&scores).unwrap();
        let cum = dist.cumulative();
        assert!(cum.windows(2).all(|w| w[0] <= w[1]));
        assert!((cum[cum.len() - 1] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn near_point_mass_always_draws_its_atom() {
        // All but one score are vanishingly small; the big atom soaks up the
        // draws while the tiny ones stay legal (strictly positive).
        let mut scores = vec![1e-15; 7];
        scores[4] = 1.0;
        let dist = leverage_distribution(&scores).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            assert_eq!(dist.sample(&mut rng), 4);
        }
    }

    #[test]
    fn weighted_draw_frequencies_match_probabilities() {
        let p = vec![0.4, 0.1, 0.05, 0.05, 0.2, 0.2];
        let dist = SamplingDistribution::new(ImportanceWeights::new(p.clone()).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 1_000_000;
        let mut counts = vec![0usize; p.len()];
        for _ in 0..m {
            counts[dist.sample(&mut rng)] += 1;
        }
        for (i, (&c, &pi)) in counts.iter().zip(&p).enumerate() {
            let sigma = (m as f64 * pi * (1.0 - pi)).sqrt();
            let dev = (c as f64 - m as f64 * pi).abs();
            assert!(dev <= 4.0 * sigma, "bin {i} deviates {dev:.1}");
        }
    }

    #[test]
    fn leverage_scores_of_identity_are_one() {
        let scores = leverage_scores(&Matrix::identity(6, 6)).unwrap();
        for s in scores {
            assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn leverage_scores_match_direct_inverse_formula() {
        // Oracle: l_i = a_i' (A'A)^{-1} a_i computed via an explicit inverse.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = Matrix::from_fn(64, 4, |_, _| rng.gen_range(-1.0..1.0));
        let scores = leverage_scores(&a).unwrap();
        let gram_inv = (a.transpose() * &a).try_inverse().unwrap();
        let mut sum = 0.0;
        for i in 0..64 {
            let row = a.row(i).transpose();
            let direct = (&row.transpose() * &gram_inv * &row)[(0, 0)];
            assert!((scores[i] - direct).abs() <= 1e-10);
            assert!(scores[i] >= -1e-12 && scores[i] <= 1.0 + 1e-12);
            sum += scores[i];
        }
        assert!((sum - 4.0).abs() <= 1e-8);
    }

    #[test]
    fn heavy_rows_dominate_leverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut a = Matrix::from_fn(200, 3, |_, _| rng.gen_range(-1.0..1.0));
        a.row_mut(17).scale_mut(100.0);
        let scores = leverage_scores(&a).unwrap();
        let max_other = scores
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != 17)
            .map(|(_, &s)| s)
            .fold(0.0, f64::max);
        assert!(scores[17] > 0.99);
        assert!(scores[17] > 10.0 * max_other);
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let mut a = Matrix::zeros(10, 2);
        for i in 0..10 {
            a[(i, 0)] = i as f64 + 1.0;
            a[(i, 1)] = 2.0 * (i as f64 + 1.0);
        }
        assert!(matches!(leverage_scores(&a), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn hadamard_columns_have_flat_leverage() {
        // d columns of an orthonormal Hadamard matrix: every row carries
        // leverage exactly d/n.
        let n = 16;
        let d = 4;
        let mut a = Matrix::zeros(n, d);
        for j in 0..d {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            fwht(&mut e).unwrap();
            for i in 0..n {
                a[(i, j)] = e[i];
            }
        }
        let scores = leverage_scores(&a).unwrap();
        for s in scores {
            assert_relative_eq!(s, d as f64 / n as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn leverage_probabilities_dominate_half_uniformized_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Matrix::from_fn(128, 5, |_, _| rng.gen_range(-1.0..1.0));
        let scores = leverage_scores(&a).unwrap();
        let dist = leverage_distribution(&scores).unwrap();
        let d = 5.0;
        for (i, &p) in dist.weights().probabilities().iter().enumerate() {
            assert!(p >= scores[i] / (2.0 * d) - 1e-15, "p_{i} too small");
        }
    }

    #[test]
    fn rht_of_length_one_with_positive_sign_is_identity() {
        let t = RhtTransform::with_signs(vec![1.0], 1).unwrap();
        let a = Matrix::from_row_slice(1, 2, &[3.0, -4.0]);
        let out = t.apply_matrix(&a).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn rht_preserves_residual_norms_and_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 300; // pads to 512
        let a = Matrix::from_fn(n, 6, |_, _| rng.gen_range(-1.0..1.0));
        let y = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let (at, yt, t) = rht_apply(&a, &y, &mut rng).unwrap();
        assert_eq!(at.nrows(), 512);
        assert_eq!(t.padded_len(), 512);

        for trial in 0..10 {
            let x = Vector::from_fn(6, |i, _| ((trial * 7 + i) as f64 * 0.31).sin());
            let orig = (&a * &x - &y).norm();
            let rot = (&at * &x - &yt).norm();
            assert_relative_eq!(orig, rot, max_relative = 1e-10);
        }
        let gram = a.transpose() * &a;
        let gram_rot = at.transpose() * &at;
        assert!((&gram - &gram_rot).amax() <= 1e-10 * gram.amax());
    }

    #[test]
    fn rht_flattens_coherent_leverage_scores() {
        // A matrix with a few gamma-inflated rows has near-1 leverage scores;
        // after the transform the maximum score should be close to uniform.
        let d = 8;
        let n = 3000; // pads to 4096
        let mut ok = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let gamma_dist = rand_distr::Gamma::new(2.0, 0.5).unwrap();
            let mut a = Matrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
            for i in 0..n {
                let g: f64 = gamma_dist.sample(&mut rng);
                a.row_mut(i).scale_mut(1.0 / g.max(1e-12).sqrt());
            }
            let (at, _, _) = rht_apply(&a, &Vector::zeros(n), &mut rng).unwrap();
            let n_pad = at.nrows() as f64;
            let max_score = leverage_scores(&at)
                .unwrap()
                .into_iter()
                .fold(0.0, f64::max);
            if max_score <= 10.0 * d as f64 * n_pad.ln() / n_pad {
                ok += 1;
            }
        }
        assert!(ok >= 95, "only {ok}/100 seeds uniformized");
    }

    fn small_lsq(n: usize, d: usize, gamma: f64, seed: u64) -> LeastSquaresObjective {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Matrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
        let y = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        LeastSquaresObjective::new(ProblemInstance::new(a, y, gamma, Task::LeastSquares).unwrap())
            .unwrap()
    }

    #[test]
    fn exhaustive_hessian_subsample_equals_full_hessian() {
        let obj = small_lsq(300, 6, 1e-3, 10);
        let x = Vector::from_fn(6, |i, _| 0.1 * i as f64);
        let all: Vec<usize> = (0..300).collect();
        let sub = hessian_at_indices(&obj, &x, &all, Weighting::Uniform).unwrap();
        let full = obj.full_hessian(&x);
        assert!((&sub - &full).amax() <= 1e-12 * full.amax());
    }

    #[test]
    fn single_draw_hessian_is_a_component_hessian() {
        use crate::problem::Objective;
        let obj = small_lsq(50, 4, 0.01, 11);
        let x = Vector::zeros(4);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut probe = rng.clone();
        let h = subsampled_hessian(&obj, &x, 1, DrawFrom::Uniform, &mut rng).unwrap();
        let idx = uniform_batch(50, 1, &mut probe).unwrap()[0];
        let comp = obj.component_hessian(idx, &x).unwrap();
        assert!((&h - &comp).amax() <= 1e-14);
    }

    #[test]
    fn averaged_draws_approach_full_hessian_at_root_t_rate() {
        use crate::problem::Objective;
        let obj = small_lsq(400, 6, 0.0, 13);
        let x = Vector::zeros(6);
        let full = obj.full_hessian(&x);
        let mut rng = ChaCha8Rng::seed_from_u64(14);

        let trials = [25usize, 100, 400];
        let reps = 20;
        let mut mean_err = Vec::new();
        for &t in &trials {
            let mut acc = 0.0;
            for _ in 0..reps {
                let h = subsampled_hessian(&obj, &x, t, DrawFrom::Uniform, &mut rng).unwrap();
                acc += (&h - &full).norm();
            }
            mean_err.push(acc / reps as f64);
        }
        // Log-log slope across the 16x range of sample counts.
        let slope = (mean_err[2] / mean_err[0]).ln() / ((trials[2] as f64 / trials[0] as f64).ln());
        assert!(
            (slope + 0.5).abs() <= 0.2,
            "decay slope {slope:.3} not within 0.2 of -1/2"
        );
    }

    #[test]
    fn importance_weighted_hessian_expectation_identity() {
        use crate::problem::Objective;
        // Exhaustive probability-weighted sum of reweighted components equals
        // the full Hessian, mirroring the gradient identity.
        let obj = small_lsq(40, 5, 0.02, 15);
        let x = Vector::from_fn(5, |i, _| 0.05 * (i as f64 + 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let scores: Vec<f64> = (0..40).map(|_| rng.gen_range(0.2..1.5)).collect();
        let dist = leverage_distribution(&scores).unwrap();
        let gamma = obj.instance().gamma();
        let d = 5;

        let mut acc = Matrix::zeros(d, d);
        for i in 0..40 {
            let hi = hessian_at_indices(&obj, &x, &[i], Weighting::Importance(dist.weights()))
                .unwrap()
                - Matrix::identity(d, d) * gamma;
            acc += hi * dist.weights().probabilities()[i];
        }
        acc += Matrix::identity(d, d) * gamma;
        let full = obj.full_hessian(&x);
        assert!((&acc - &full).amax() <= 1e-12 * full.amax().max(1.0));
    }
}
