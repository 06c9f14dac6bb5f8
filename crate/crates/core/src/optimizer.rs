//! Projected gradient descent over free unit-row embeddings.
//!
//! The objective is the sum of per-block losses over a fixed contiguous
//! partition of the instances. Each step moves every row along the negative
//! tangential gradient and renormalizes it (projection retraction).

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{project_rows, similarity_stats, EmbeddingSet, SimilarityStats};
use crate::loss::{loss_and_grad, total_loss, GradPair, LossSpec};
use crate::matrix::Matrix;

/// Contiguous blocks `{m(k-1), .., mk - 1}` (zero-based) covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPartition {
    blocks: Vec<Vec<usize>>,
    m: usize,
}

impl BatchPartition {
    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }
    pub fn batch_size(&self) -> usize {
        self.m
    }
    pub fn batch_count(&self) -> usize {
        self.blocks.len()
    }
    pub fn n(&self) -> usize {
        self.m * self.blocks.len()
    }
}

pub fn partition_fixed(n: usize, m: usize) -> Result<BatchPartition> {
    if m == 0 || m > n {
        return Err(Error::InvalidParameter { name: "batch_size", reason: format!("need 1 <= m <= n = {n}, got {m}") });
    }
    if !n.is_multiple_of(m) {
        return Err(Error::Indivisible { n, m });
    }
    let blocks = (0..n / m).map(|k| (k * m..(k + 1) * m).collect()).collect();
    Ok(BatchPartition { blocks, m })
}

fn check_partition(e: &EmbeddingSet, p: &BatchPartition) -> Result<()> {
    if p.n() != e.n() {
        return Err(Error::ShapeMismatch(format!("partition covers {} instances, embedding set has {}", p.n(), e.n())));
    }
    Ok(())
}

/// `sum_k total_loss(spec, e, I_k)`.
pub fn sum_batch_loss(spec: &LossSpec, e: &EmbeddingSet, p: &BatchPartition) -> Result<f64> {
    check_partition(e, p)?;
    p.blocks.iter().map(|b| total_loss(spec, e, b)).sum()
}

/// Value and ambient gradient (all `n` rows) of the summed objective, or of a
/// single block when `only` is set.
pub fn sum_batch_loss_and_grad(
    spec: &LossSpec,
    e: &EmbeddingSet,
    p: &BatchPartition,
    only: Option<usize>,
) -> Result<(f64, GradPair)> {
    check_partition(e, p)?;
    let (n, d) = (e.n(), e.d());
    let mut full = GradPair { d_u: Matrix::zeros(n, d), d_v: Matrix::zeros(n, d) };
    let mut value = 0.0;
    for (k, block) in p.blocks.iter().enumerate() {
        if only.is_some_and(|o| o != k) {
            continue;
        }
        let (v, g) = loss_and_grad(spec, e, block)?;
        value += v;
        for (r, &i) in block.iter().enumerate() {
            full.d_u.row_mut(i).copy_from_slice(g.d_u.row(r));
            full.d_v.row_mut(i).copy_from_slice(g.d_v.row(r));
        }
    }
    Ok((value, full))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Gaussian rows, normalized, from the configured seed.
    RandomGaussian,
    /// Start from the given embeddings.
    WarmStart(EmbeddingSet),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// Gradient of the summed fixed-batch objective at every step.
    #[default]
    Summed,
    /// One block per step, cycling through the partition.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub seed: u64,
    pub init: Init,
    pub noise_sigma: f64,
    pub record_every: usize,
    pub schedule: Schedule,
    /// Halvings of `step_size` allowed after a non-finite loss.
    pub max_halvings: u32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step_size: 0.5,
            max_steps: 20_000,
            grad_tol: 1e-7,
            seed: 0,
            init: Init::RandomGaussian,
            noise_sigma: 0.0,
            record_every: 100,
            schedule: Schedule::Summed,
            max_halvings: 10,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| Err(Error::InvalidParameter { name, reason: reason.into() });
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("opt.step_size", "must be positive");
        }
        if !(self.grad_tol > 0.0) {
            return bad("opt.grad_tol", "must be positive");
        }
        if self.max_steps == 0 {
            return bad("opt.max_steps", "must be at least 1");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("opt.noise_sigma", "must be nonnegative");
        }
        if self.record_every == 0 {
            return bad("opt.record_every", "must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub loss: f64,
    pub stats: SimilarityStats,
    pub tangential_grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxSteps,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub embeddings: EmbeddingSet,
    pub trajectory: Vec<TrajectoryRecord>,
    pub termination: Termination,
    /// Loss and tangential gradient norm of the summed objective at the final iterate.
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub step_size: f64,
}

impl Outcome {
    pub fn stats(&self) -> SimilarityStats {
        similarity_stats(&self.embeddings)
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

pub fn random_embeddings(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<EmbeddingSet> {
    let mut draw = || {
        let data = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
        Matrix::from_vec(n, d, data)
    };
    let u = draw()?;
    let v = draw()?;
    EmbeddingSet::from_projected(u, v)
}

fn retract(e: &EmbeddingSet, g: &GradPair, step: f64) -> Result<EmbeddingSet> {
    let (mut u, mut v) = (e.u().clone(), e.v().clone());
    u.axpy(-step, &g.d_u);
    v.axpy(-step, &g.d_v);
    EmbeddingSet::with_tolerance(project_rows(&u)?, project_rows(&v)?, 1e-9)
}

fn tangential(spec: &LossSpec, e: &EmbeddingSet, p: &BatchPartition, only: Option<usize>) -> Result<(f64, GradPair)> {
    let (value, mut g) = sum_batch_loss_and_grad(spec, e, p, only)?;
    g.project_tangent(e.u(), e.v());
    Ok((value, g))
}

/// Minimizes the summed fixed-batch objective over `n` unit pairs in `d` dimensions.
///
/// Deterministic for a fixed configuration. A non-finite loss or gradient
/// rolls back one step and halves the step size, up to `max_halvings` times.
pub fn optimize(spec: &LossSpec, cfg: &OptimizerConfig, p: &BatchPartition, n: usize, d: usize) -> Result<Outcome> {
    cfg.validate()?;
    if d < 1 {
        return Err(Error::InvalidParameter { name: "d", reason: "must be positive".into() });
    }
    if p.n() != n {
        return Err(Error::ShapeMismatch(format!("partition covers {} instances, n = {n}", p.n())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = match &cfg.init {
        Init::RandomGaussian => random_embeddings(n, d, &mut rng)?,
        Init::WarmStart(e) => {
            if e.n() != n || e.d() != d {
                return Err(Error::ShapeMismatch(format!("warm start is {}x{}, expected {n}x{d}", e.n(), e.d())));
            }
            e.clone()
        }
    };
    let mut step_size = cfg.step_size;
    let mut halvings = 0;
    let mut trajectory = Vec::new();
    let batches = p.batch_count();
    let mut step = 0;
    let termination = loop {
        let (loss, g) = tangential(spec, &x, p, None)?;
        let grad_norm = g.norm();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFinite { step, loss, grad_norm });
        }
        let record = |trajectory: &mut Vec<TrajectoryRecord>| {
            trajectory.push(TrajectoryRecord { step, loss, stats: similarity_stats(&x), tangential_grad_norm: grad_norm })
        };
        if grad_norm <= cfg.grad_tol {
            record(&mut trajectory);
            break Termination::Converged;
        }
        if step >= cfg.max_steps {
            record(&mut trajectory);
            break Termination::MaxSteps;
        }
        if step % cfg.record_every == 0 {
            record(&mut trajectory);
        }
        let direction = match cfg.schedule {
            Schedule::Summed => g,
            Schedule::RoundRobin => tangential(spec, &x, p, Some(step % batches))?.1,
        };
        let mut candidate = retract(&x, &direction, step_size)?;
        if cfg.noise_sigma > 0.0 {
            let (u, mut v) = candidate.into_parts();
            for val in v.as_mut_slice() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *val += cfg.noise_sigma * z;
            }
            candidate = EmbeddingSet::from_projected(u, v)?;
        }
        let next_loss = sum_batch_loss(spec, &candidate, p)?;
        if !next_loss.is_finite() {
            if halvings >= cfg.max_halvings {
                return Err(Error::NonFinite { step: step + 1, loss: next_loss, grad_norm });
            }
            halvings += 1;
            step_size *= 0.5;
            continue;
        }
        x = candidate;
        step += 1;
    };
    let last = *trajectory.last().expect("loop always records before breaking");
    Ok(Outcome {
        embeddings: x,
        trajectory,
        termination,
        final_loss: last.loss,
        final_grad_norm: last.tangential_grad_norm,
        step_size,
    })
}

/// Window used by [`loss_increases`] for the advisory smoke check.
pub const ADVISORY_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossIncrease {
    pub from_step: usize,
    pub to_step: usize,
    pub before: f64,
    pub after: f64,
}

/// Pairs of records where the loss rose across at least `window` steps.
///
/// Each record is compared with the first later record at least `window`
/// steps on. Rises within `1e-12` relative are ignored. Advisory only: the
/// retraction step is not a descent guarantee.
pub fn loss_increases(trajectory: &[TrajectoryRecord], window: usize) -> Vec<LossIncrease> {
    let mut out = Vec::new();
    for (i, a) in trajectory.iter().enumerate() {
        let Some(b) = trajectory[i + 1..].iter().find(|b| b.step >= a.step + window) else { break };
        if b.loss > a.loss + 1e-12 * a.loss.abs().max(1.0) {
            out.push(LossIncrease { from_step: a.step, to_step: b.step, before: a.loss, after: b.loss });
        }
    }
    out
}

/// Lowest final loss; ties go to the earliest outcome.
pub fn select_best<I: IntoIterator<Item = Outcome>>(outcomes: I) -> Option<Outcome> {
    outcomes.into_iter().fold(None, |best: Option<Outcome>, out| match best {
        Some(b) if b.final_loss <= out.final_loss => Some(b),
        _ => Some(out),
    })
}

/// Runs `restarts` seeds (`cfg.seed + r`) and keeps the lowest final loss;
/// ties go to the earliest seed.
pub fn optimize_best_of(
    spec: &LossSpec,
    cfg: &OptimizerConfig,
    p: &BatchPartition,
    n: usize,
    d: usize,
    restarts: usize,
) -> Result<Outcome> {
    let mut outs = Vec::with_capacity(restarts.max(1));
    for r in 0..restarts.max(1) {
        let cfg_r = OptimizerConfig { seed: cfg.seed.wrapping_add(r as u64), ..cfg.clone() };
        outs.push(optimize(spec, &cfg_r, p, n, d)?);
    }
    Ok(select_best(outs).expect("at least one restart"))
}
