//! Finite-sum problem instances and their objectives.
//!
//! A problem is f(x) = (1/n) sum_i psi_i(x) with the ridge term gamma/2 |x|^2
//! folded into every component, so each psi_i already carries its share of
//! the regularizer. Both tasks here are linear models: the per-example loss
//! only depends on the margin z = <a_i, x>, which keeps gradient and Hessian
//! assembly generic over a trio of scalar kernels.

use std::path::Path;

use crate::error::{Error, Result};
use crate::parallel;
use crate::{Matrix, Vector};

/// Which per-example loss the instance carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Logistic,
    LeastSquares,
}

/// A dataset plus task and ridge parameter.
///
/// Features are stored transposed (d x n) so that each data row is a
/// contiguous column, which keeps the per-row inner loops cache friendly.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    at: Matrix,
    y: Vector,
    gamma: f64,
    task: Task,
}

impl ProblemInstance {
    /// Builds an instance from the design matrix in its conventional n x d
    /// orientation.
    pub fn new(a: Matrix, y: Vector, gamma: f64, task: Task) -> Result<Self> {
        Self::from_transposed(a.transpose(), y, gamma, task)
    }

    /// Builds an instance from features already stored as d x n.
    pub fn from_transposed(at: Matrix, y: Vector, gamma: f64, task: Task) -> Result<Self> {
        let (d, n) = at.shape();
        if n == 0 || d == 0 {
            return Err(Error::contract("problem must have n >= 1 and d >= 1"));
        }
        if y.len() != n {
            return Err(Error::contract(format!(
                "label length {} does not match n = {n}",
                y.len()
            )));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::contract("gamma must be finite and nonnegative"));
        }
        if task == Task::Logistic && y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::contract("logistic labels must be +1 or -1"));
        }
        Ok(ProblemInstance { at, y, gamma, task })
    }

    pub fn n(&self) -> usize {
        self.at.ncols()
    }

    pub fn d(&self) -> usize {
        self.at.nrows()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn labels(&self) -> &Vector {
        &self.y
    }

    /// Feature row i as a contiguous column view of the transposed storage.
    pub fn row(&self, i: usize) -> nalgebra::DVectorView<'_, f64> {
        self.at.column(i)
    }

    /// Features as d x n (rows of the design matrix are columns here).
    pub fn features_t(&self) -> &Matrix {
        &self.at
    }

    /// Design matrix in its conventional n x d orientation (copies).
    pub fn design_matrix(&self) -> Matrix {
        self.at.transpose()
    }

    /// Loads a header-free CSV with rows `y,a_1,...,a_d`. For the logistic
    /// task, labels are coerced to +-1 by sign (nonpositive values map to -1).
    pub fn from_csv(path: impl AsRef<Path>, task: Task, gamma: f64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path.as_ref())?;
        let mut labels = Vec::new();
        let mut feats: Vec<f64> = Vec::new();
        let mut d = None;
        for record in reader.records() {
            let record = record?;
            if record.len() < 2 {
                return Err(Error::contract("csv rows need a label and at least one feature"));
            }
            let width = record.len() - 1;
            match d {
                None => d = Some(width),
                Some(w) if w != width => {
                    return Err(Error::contract(format!(
                        "csv row {} has {width} features, expected {w}",
                        labels.len()
                    )))
                }
                _ => {}
            }
            let mut fields = record.iter();
            let raw: f64 = fields
                .next()
                .unwrap()
                .parse()
                .map_err(|e| Error::contract(format!("bad label: {e}")))?;
            labels.push(match task {
                Task::Logistic => {
                    if raw > 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                Task::LeastSquares => raw,
            });
            for field in fields {
                feats.push(
                    field
                        .parse()
                        .map_err(|e| Error::contract(format!("bad feature: {e}")))?,
                );
            }
        }
        let d = d.ok_or_else(|| Error::contract("csv file is empty"))?;
        let n = labels.len();
        // Row-major parse order lands directly in the transposed layout.
        let at = Matrix::from_vec(d, n, feats);
        Self::from_transposed(at, Vector::from_vec(labels), gamma, task)
    }

    /// Writes the dataset in the same header-free CSV layout the loader reads.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path.as_ref())?;
        for i in 0..self.n() {
            let mut record = Vec::with_capacity(self.d() + 1);
            record.push(self.y[i].to_string());
            for v in self.row(i).iter() {
                record.push(v.to_string());
            }
            writer.write_record(record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Sampling probabilities over components together with the reweighting
/// factors 1/(n p_i) that keep importance-sampled averages unbiased.
#[derive(Debug, Clone)]
pub struct ImportanceWeights {
    p: Vec<f64>,
    inv_np: Vec<f64>,
}

fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

impl ImportanceWeights {
    /// Validates an explicit probability vector. Every entry must be strictly
    /// positive so that the reweight factor 1/(n p_i) is defined for any draw.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::contract("probability vector is empty"));
        }
        if p.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::contract("probabilities must be finite and strictly positive"));
        }
        let total = kahan_sum(p.iter().copied());
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::contract(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        let n = p.len() as f64;
        let inv_np = p.iter().map(|&pi| 1.0 / (n * pi)).collect();
        Ok(ImportanceWeights { p, inv_np })
    }

    /// Normalizes strictly positive scores into a probability vector.
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::contract("score vector is empty"));
        }
        if scores.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::contract("scores must be finite and strictly positive"));
        }
        let total = kahan_sum(scores.iter().copied());
        Self::new(scores.iter().map(|&v| v / total).collect())
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    /// Reweighting factor 1/(n p_i) for a drawn component.
    #[inline]
    pub fn inv_np(&self, i: usize) -> f64 {
        self.inv_np[i]
    }
}

/// How a batch of drawn components is reweighted.
#[derive(Clone, Copy)]
pub enum Weighting<'a> {
    /// Plain averaging; correct for uniformly drawn components.
    Uniform,
    /// Importance reweighting by 1/(n p_i) for components drawn from p.
    Importance(&'a ImportanceWeights),
}

impl Weighting<'_> {
    #[inline]
    fn multiplier(&self, i: usize) -> f64 {
        match self {
            Weighting::Uniform => 1.0,
            Weighting::Importance(w) => w.inv_np(i),
        }
    }
}

/// Loss, gradient and curvature access for a problem instance.
///
/// Implementors provide the three margin kernels; everything else is derived
/// from them. Batch and full sums share one fixed-order chunked loop, so an
/// exhaustive batch reproduces the full gradient bit for bit.
pub trait Objective: Sync {
    fn instance(&self) -> &ProblemInstance;

    /// Per-example data loss at margin z = <a_i, x>.
    fn point_loss(&self, i: usize, z: f64) -> f64;
    /// Derivative of the data loss with respect to the margin.
    fn point_slope(&self, i: usize, z: f64) -> f64;
    /// Second derivative of the data loss with respect to the margin.
    fn point_curvature(&self, i: usize, z: f64) -> f64;

    fn loss(&self, x: &Vector) -> f64 {
        let inst = self.instance();
        assert_eq!(x.len(), inst.d(), "iterate dimension mismatch");
        let n = inst.n();
        let data = parallel::block_reduce(
            n,
            0.0,
            |range| {
                let mut acc = 0.0;
                for i in range {
                    acc += self.point_loss(i, inst.row(i).dot(x));
                }
                acc
            },
            |a, b| a + b,
        );
        data / n as f64 + 0.5 * inst.gamma() * x.norm_squared()
    }

    fn full_gradient(&self, x: &Vector) -> Vector {
        self.gradient_over(None, Weighting::Uniform, x)
            .expect("full gradient indices are always valid")
    }

    /// Mean of reweighted component gradients over `indices` (duplicates are
    /// deliberate: sampling is with replacement).
    fn batch_gradient(&self, indices: &[usize], weighting: Weighting, x: &Vector) -> Result<Vector> {
        if indices.is_empty() {
            return Err(Error::contract("batch gradient needs at least one index"));
        }
        self.gradient_over(Some(indices), weighting, x)
    }

    /// Shared fixed-order accumulation for batch and full gradients.
    /// `indices = None` walks every component once.
    #[doc(hidden)]
    fn gradient_over(
        &self,
        indices: Option<&[usize]>,
        weighting: Weighting,
        x: &Vector,
    ) -> Result<Vector> {
        let inst = self.instance();
        assert_eq!(x.len(), inst.d(), "iterate dimension mismatch");
        let n = inst.n();
        let count = indices.map_or(n, <[usize]>::len);
        if let Some(idx) = indices {
            if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                return Err(Error::contract(format!("component index {bad} out of range")));
            }
        }
        let d = inst.d();
        let data = parallel::block_reduce(
            count,
            Vector::zeros(d),
            |range| {
                let mut acc = Vector::zeros(d);
                for pos in range {
                    let i = indices.map_or(pos, |idx| idx[pos]);
                    let row = inst.row(i);
                    let scale = self.point_slope(i, row.dot(x)) * weighting.multiplier(i);
                    acc.axpy(scale, &row, 1.0);
                }
                acc
            },
            |mut a, b| {
                a += b;
                a
            },
        );
        Ok(data / count as f64 + x * inst.gamma())
    }

    /// Exact Hessian, assembled as a scaled Gram product.
    fn full_hessian(&self, x: &Vector) -> Matrix {
        let inst = self.instance();
        assert_eq!(x.len(), inst.d(), "iterate dimension mismatch");
        let (n, d) = (inst.n(), inst.d());
        let mut scaled = inst.features_t().clone();
        for i in 0..n {
            let w = self.point_curvature(i, inst.row(i).dot(x)) / n as f64;
            scaled.column_mut(i).scale_mut(w.max(0.0).sqrt());
        }
        let mut h = &scaled * scaled.transpose();
        for i in 0..d {
            h[(i, i)] += inst.gamma();
        }
        h
    }

    /// Gradient of one component, regularizer included.
    fn component_gradient(&self, i: usize, x: &Vector) -> Result<Vector> {
        let inst = self.instance();
        if i >= inst.n() {
            return Err(Error::contract(format!("component index {i} out of range")));
        }
        let row = inst.row(i);
        let mut g = x * inst.gamma();
        g.axpy(self.point_slope(i, row.dot(x)), &row, 1.0);
        Ok(g)
    }

    /// Hessian of one component, regularizer included.
    fn component_hessian(&self, i: usize, x: &Vector) -> Result<Matrix> {
        let inst = self.instance();
        if i >= inst.n() {
            return Err(Error::contract(format!("component index {i} out of range")));
        }
        let row = inst.row(i);
        let w = self.point_curvature(i, row.dot(x));
        let d = inst.d();
        let mut h = Matrix::identity(d, d) * inst.gamma();
        h.ger(w, &row, &row, 1.0);
        Ok(h)
    }
}

/// ln(1 + e^t) without overflow on either tail.
fn log1p_exp(t: f64) -> f64 {
    if t <= 0.0 {
        t.exp().ln_1p()
    } else {
        t + (-t).exp().ln_1p()
    }
}

/// Numerically stable standard sigmoid.
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Binary logistic regression with ridge.
pub struct LogisticObjective {
    inst: ProblemInstance,
}

impl LogisticObjective {
    pub fn new(inst: ProblemInstance) -> Result<Self> {
        if inst.task() != Task::Logistic {
            return Err(Error::contract("instance task is not logistic"));
        }
        Ok(LogisticObjective { inst })
    }
}

impl Objective for LogisticObjective {
    fn instance(&self) -> &ProblemInstance {
        &self.inst
    }

    fn point_loss(&self, i: usize, z: f64) -> f64 {
        log1p_exp(-self.inst.y[i] * z)
    }

    fn point_slope(&self, i: usize, z: f64) -> f64 {
        let y = self.inst.y[i];
        -y * sigmoid(-y * z)
    }

    fn point_curvature(&self, _i: usize, z: f64) -> f64 {
        // sigma(z) sigma(-z); the product form avoids cancellation at |z| >> 1
        // and is independent of the label sign.
        sigmoid(z) * sigmoid(-z)
    }
}

/// Ridge-regularized least squares.
pub struct LeastSquaresObjective {
    inst: ProblemInstance,
}

impl LeastSquaresObjective {
    pub fn new(inst: ProblemInstance) -> Result<Self> {
        if inst.task() != Task::LeastSquares {
            return Err(Error::contract("instance task is not least squares"));
        }
        Ok(LeastSquaresObjective { inst })
    }
}

impl Objective for LeastSquaresObjective {
    fn instance(&self) -> &ProblemInstance {
        &self.inst
    }

    fn point_loss(&self, i: usize, z: f64) -> f64 {
        let r = z - self.inst.y[i];
        0.5 * r * r
    }

    fn point_slope(&self, i: usize, z: f64) -> f64 {
        z - self.inst.y[i]
    }

    fn point_curvature(&self, _i: usize, _z: f64) -> f64 {
        1.0
    }
}

/// Task-dispatching constructor.
pub fn objective_for(inst: ProblemInstance) -> Box<dyn Objective> {
    match inst.task() {
        Task::Logistic => Box::new(LogisticObjective::new(inst).expect("task checked")),
        Task::LeastSquares => Box::new(LeastSquaresObjective::new(inst).expect("task checked")),
    }
}

/// Strong convexity / smoothness diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct CurvatureBounds {
    /// Strong convexity lower estimate. For logistic this caps the sigmoid
    /// curvature at its maximum 1/4, so it is a diagnostic proxy rather than
    /// a certificate.
    pub mu: f64,
    /// Smoothness upper estimate, regularizer included.
    pub lambda: f64,
    /// Data-term smoothness without the regularizer.
    pub lambda_data: f64,
    /// Condition estimate lambda / mu.
    pub kappa: f64,
}

/// Estimates (mu, lambda, kappa) for an instance from the Gram spectrum and
/// the largest row norm.
pub fn strong_smooth_estimates(inst: &ProblemInstance) -> Result<CurvatureBounds> {
    if inst.d() > crate::linalg::MAX_SPD_DIM {
        return Err(Error::contract("dimension exceeds the dense spectrum limit"));
    }
    let n = inst.n() as f64;
    let gram = (inst.features_t() * inst.features_t().transpose()) / n;
    let eig = nalgebra::SymmetricEigen::new(gram);
    let lam_min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max_row_sq = (0..inst.n())
        .map(|i| inst.row(i).norm_squared())
        .fold(0.0, f64::max);
    let cap = match inst.task() {
        Task::LeastSquares => 1.0,
        Task::Logistic => 0.25,
    };
    let mu = inst.gamma() + cap * lam_min.max(0.0);
    let lambda_data = cap * max_row_sq;
    let lambda = lambda_data + inst.gamma();
    if mu <= 0.0 {
        return Err(Error::NotStronglyConvex(mu));
    }
    Ok(CurvatureBounds {
        mu,
        lambda,
        lambda_data,
        kappa: lambda / mu,
    })
}
