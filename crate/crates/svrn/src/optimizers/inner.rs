//! Inner loops shared by the variance-reduced and gradient-subsampled
//! Newton solvers, and the batch schedule that drives them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::SpdFactorization;
use crate::optimizers::{HessianModel, SvrnConfig, Tally};
use crate::problem::{Objective, Weighting};
use crate::sampling::{uniform_batch, DrawFrom};
use crate::Vector;

/// When inner batches are redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleSchedule {
    /// One batch for the whole run.
    Once,
    /// A fresh batch at the start of every outer stage.
    #[serde(rename = "stage")]
    PerStage,
    /// A fresh batch for every inner step.
    #[serde(rename = "step")]
    PerStep,
}

/// Default inner schedule: `t_max = floor(log2(n/d))` steps on batches of
/// `m = floor(n / log2(n/d))` components, so one stage costs on the order of
/// two data passes.
pub fn svrn_schedule(n: usize, d: usize) -> Result<(usize, usize)> {
    if n < 2 * d.max(1) || d == 0 {
        return Err(Error::contract("inner schedule needs n >= 2d and d >= 1"));
    }
    let ratio = (n as f64 / d as f64).log2();
    let t_max = ratio.floor() as usize;
    let m = (n as f64 / ratio).floor() as usize;
    if t_max == 0 || m == 0 {
        return Err(Error::contract("n/d too small for the inner schedule"));
    }
    Ok((t_max, m))
}

/// Supplies inner-loop batches according to a [`ResampleSchedule`].
pub struct InnerBatchSampler<'a> {
    schedule: ResampleSchedule,
    m: usize,
    draw: DrawFrom<'a>,
    fixed: Option<Vec<usize>>,
}

impl<'a> InnerBatchSampler<'a> {
    pub fn new(schedule: ResampleSchedule, m: usize, draw: DrawFrom<'a>) -> Result<Self> {
        if m == 0 {
            return Err(Error::contract("inner batch size must be positive"));
        }
        Ok(InnerBatchSampler { schedule, m, draw, fixed: None })
    }

    /// A sampler that always hands out the given batch, for exhaustive tests.
    pub fn with_fixed_batch(batch: Vec<usize>) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::contract("fixed batch must be nonempty"));
        }
        Ok(InnerBatchSampler {
            schedule: ResampleSchedule::Once,
            m: batch.len(),
            draw: DrawFrom::Uniform,
            fixed: Some(batch),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.m
    }

    pub fn weighting(&self) -> Weighting<'_> {
        match self.draw {
            DrawFrom::Uniform => Weighting::Uniform,
            DrawFrom::Weighted(dist) => Weighting::Importance(dist.weights()),
        }
    }

    fn draw_batch(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        match self.draw {
            // A uniform batch at least as large as the data degenerates to
            // exhaustive enumeration, which makes the batch gradient exact.
            DrawFrom::Uniform if self.m >= n => Ok((0..n).collect()),
            DrawFrom::Uniform => uniform_batch(n, self.m, rng),
            DrawFrom::Weighted(dist) => {
                if dist.len() != n {
                    return Err(Error::contract("distribution length does not match n"));
                }
                dist.sample_batch(self.m, rng)
            }
        }
    }

    /// Called once at the start of each outer stage.
    pub fn begin_stage(&mut self, n: usize, rng: &mut impl Rng) -> Result<()> {
        match self.schedule {
            ResampleSchedule::PerStage => self.fixed = Some(self.draw_batch(n, rng)?),
            ResampleSchedule::Once => {
                if self.fixed.is_none() {
                    self.fixed = Some(self.draw_batch(n, rng)?);
                }
            }
            ResampleSchedule::PerStep => {}
        }
        Ok(())
    }

    /// The batch for the next inner step.
    pub fn next_batch(&mut self, n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        match self.schedule {
            ResampleSchedule::PerStep => self.draw_batch(n, rng),
            _ => self
                .fixed
                .clone()
                .ok_or_else(|| Error::contract("begin_stage must run before next_batch")),
        }
    }
}

/// One variance-reduced Newton stage: `t_max` unit steps of
/// `x <- x - B^{-1}(g_B(x) - g_B(x~) + g~)`, where both batch gradients share
/// the same components and `g~` is the full gradient at the anchor `x_tilde`.
///
/// The anchor batch gradient is recomputed each step even when the schedule
/// reuses the index set, so every step costs two batch evaluations no matter
/// the policy.
pub fn svrn_inner<O: Objective + ?Sized>(
    obj: &O,
    x_tilde: &Vector,
    g_tilde: &Vector,
    prec: &SpdFactorization,
    sampler: &mut InnerBatchSampler,
    t_max: usize,
    rng: &mut impl Rng,
    tally: &mut Tally,
) -> Result<Vector> {
    if t_max == 0 {
        return Err(Error::contract("inner loop needs at least one step"));
    }
    let n = obj.instance().n();
    sampler.begin_stage(n, rng)?;
    let mut x = x_tilde.clone();
    for _ in 0..t_max {
        let batch = sampler.next_batch(n, rng)?;
        let g_cur = obj.batch_gradient(&batch, sampler.weighting(), &x)?;
        let g_anchor = obj.batch_gradient(&batch, sampler.weighting(), x_tilde)?;
        tally.grad += 2 * batch.len();
        let step = prec.solve(&(g_cur - g_anchor + g_tilde));
        x -= step;
    }
    Ok(x)
}

/// Gradient-subsampled Newton inner loop: `t_max` unit steps of
/// `x <- x - B^{-1} g_B(x)` on a fresh batch each step, with no
/// variance-reduction correction.
pub fn sngs_inner<O: Objective + ?Sized>(
    obj: &O,
    x_tilde: &Vector,
    prec: &SpdFactorization,
    sampler: &mut InnerBatchSampler,
    t_max: usize,
    rng: &mut impl Rng,
    tally: &mut Tally,
) -> Result<Vector> {
    if t_max == 0 {
        return Err(Error::contract("inner loop needs at least one step"));
    }
    let n = obj.instance().n();
    sampler.begin_stage(n, rng)?;
    let mut x = x_tilde.clone();
    for _ in 0..t_max {
        let batch = sampler.next_batch(n, rng)?;
        let g_cur = obj.batch_gradient(&batch, sampler.weighting(), &x)?;
        tally.grad += batch.len();
        let step = prec.solve(&g_cur);
        x -= step;
    }
    Ok(x)
}

/// One standalone variance-reduced stage driven by a [`SvrnConfig`]: computes
/// the full anchor gradient internally, then delegates to [`svrn_inner`] with
/// batches drawn as configured. `m` and `t_max` fall back to the
/// [`svrn_schedule`] defaults when unset.
pub fn svrn_stage<O: Objective + ?Sized>(
    obj: &O,
    x_stage: &Vector,
    hess: &HessianModel,
    cfg: &SvrnConfig,
    rng: &mut impl Rng,
) -> Result<Vector> {
    let mut tally = Tally::default();
    svrn_stage_sampled(obj, x_stage, hess, cfg, DrawFrom::Uniform, rng, &mut tally)
}

/// [`svrn_stage`] with an explicit component distribution and evaluation
/// tally, for callers that reweight gradients or account for cost.
pub fn svrn_stage_sampled<O: Objective + ?Sized>(
    obj: &O,
    x_stage: &Vector,
    hess: &HessianModel,
    cfg: &SvrnConfig,
    draw: DrawFrom,
    rng: &mut impl Rng,
    tally: &mut Tally,
) -> Result<Vector> {
    let inst = obj.instance();
    let (n, d) = (inst.n(), inst.d());
    if x_stage.len() != d {
        return Err(Error::contract("stage point has the wrong dimension"));
    }
    let (t_max, m) = match (cfg.t_max, cfg.m) {
        (Some(t), Some(m)) => (t, m),
        _ => {
            let (td, md) = svrn_schedule(n, d)?;
            (cfg.t_max.unwrap_or(td), cfg.m.unwrap_or(md))
        }
    };
    let mut sampler = InnerBatchSampler::new(cfg.resample_policy, m, draw)?;
    let g_tilde = obj.full_gradient(x_stage);
    tally.grad += n;
    svrn_inner(obj, x_stage, &g_tilde, hess.factorization(), &mut sampler, t_max, rng, tally)
}
