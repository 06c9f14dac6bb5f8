//! Numerical checks of the closed-form claims about optimal embeddings.
//!
//! Every check returns a [`CheckReport`] carrying both sides of the tested
//! relation, the margin and the tolerance it was judged against.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{centroid, similarity_stats, EmbeddingSet, SimilarityStats};
use crate::loss::{grad, infonce_neg_pair_grad, total_loss, LossSpec};
use crate::math;
use crate::matrix::Matrix;

/// Tolerance on the slack of an inequality that should hold exactly.
pub const INEQUALITY_SLACK_TOL: f64 = 1e-12;
/// Tolerance on the empirical overexpansion identity.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Tolerance on the negative-pair decomposition identity.
pub const DECOMPOSITION_TOL: f64 = 1e-12;
/// Absolute band around the sigmoid threshold classified as boundary.
pub const SIGMOID_BOUNDARY_TOL: f64 = 1e-12;
/// Tangential gradient norm below which a run counts as converged for optimum checks.
pub const CONVERGED_GRAD_NORM: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub tolerance: f64,
    pub details: String,
}

impl CheckReport {
    /// Passes when `lhs >= rhs - tolerance`; margin is `lhs - rhs`.
    pub fn at_least(name: &str, lhs: f64, rhs: f64, tolerance: f64, details: String) -> Self {
        let margin = lhs - rhs;
        Self { name: name.into(), passed: margin >= -tolerance, lhs, rhs, margin, tolerance, details }
    }

    /// Passes when `|lhs - rhs| <= tolerance`; margin is the absolute residual.
    pub fn equal(name: &str, lhs: f64, rhs: f64, tolerance: f64, details: String) -> Self {
        let margin = (lhs - rhs).abs();
        Self { name: name.into(), passed: margin <= tolerance, lhs, rhs, margin, tolerance, details }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceBounds {
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
    pub m: usize,
    /// `d >= b (m - 1)`, necessary for reaching `lower`.
    pub dim_condition_met: bool,
}

impl VarianceBounds {
    pub fn contains(&self, var: f64, slack: f64) -> bool {
        var >= self.lower - slack && var <= self.upper + slack
    }
}

/// Range of the negative-pair similarity variance at the fixed mini-batch optimum:
/// `[(n-m) / ((m-1)(n-1)^2), n(n-m) / ((m-1)(n-1)^2)]`.
pub fn variance_bounds(n: usize, m: usize, d: usize) -> Result<VarianceBounds> {
    if m < 2 || m > n {
        return Err(Error::InvalidParameter { name: "batch_size", reason: format!("need 2 <= m <= n = {n}, got {m}") });
    }
    if !n.is_multiple_of(m) {
        return Err(Error::Indivisible { n, m });
    }
    let (nf, mf) = (n as f64, m as f64);
    let denom = (mf - 1.0) * (nf - 1.0) * (nf - 1.0);
    let lower = (nf - mf) / denom;
    let upper = nf * (nf - mf) / denom;
    Ok(VarianceBounds { lower, upper, n, m, dim_condition_met: d >= (n / m) * (m - 1) })
}

/// Full-batch optimum: positives at 1, negatives all at `-1/(n-1)`.
///
/// Passes iff `|pos_mean - 1| <= tol`, `pos_var <= tol^2`,
/// `|neg_mean + 1/(n-1)| <= tol` and `neg_var <= tol^2`. The margin is the
/// worst of the four violations (`<= 0` when all hold).
pub fn check_fullbatch_optimum(stats: &SimilarityStats, n: usize, tol: f64) -> CheckReport {
    let target = -1.0 / (n as f64 - 1.0);
    let parts = [
        ("pos_mean", (stats.pos_mean - 1.0).abs() - tol),
        ("pos_var", stats.pos_var - tol * tol),
        ("neg_mean", (stats.neg_mean - target).abs() - tol),
        ("neg_var", stats.neg_var - tol * tol),
    ];
    let (worst_name, worst) = parts.iter().copied().fold(("", f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let failing: Vec<&str> = parts.iter().filter(|p| p.1 > 0.0).map(|p| p.0).collect();
    CheckReport {
        name: "fullbatch_optimum".into(),
        passed: failing.is_empty(),
        lhs: stats.neg_mean,
        rhs: target,
        margin: worst,
        tolerance: tol,
        details: format!(
            "pos_mean={:.6e} pos_var={:.3e} neg_mean={:.6e} neg_var={:.3e}; worst={worst_name}; failing={failing:?}",
            stats.pos_mean, stats.pos_var, stats.neg_mean, stats.neg_var
        ),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverexpansionCheck {
    pub report: CheckReport,
    /// Trace of the population covariance of `u_i - v_i`.
    pub r1: f64,
    /// Squared norm of the mean of `u_i + v_i`.
    pub r2: f64,
    /// `|1 - (n-2)/n pos_mean + 2(n-1)/n neg_mean - (r1 + r2)/2|`.
    pub identity_residual: f64,
}

/// Trace of the population covariance of the rows of `a - b`.
fn difference_spread(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.rows();
    let d = a.cols();
    let mut mean = alloc::vec![0.0; d];
    for i in 0..n {
        for k in 0..d {
            mean[k] += (a.get(i, k) - b.get(i, k)) / n as f64;
        }
    }
    (0..n)
        .map(|i| (0..d).map(|k| { let x = a.get(i, k) - b.get(i, k) - mean[k]; x * x }).sum::<f64>())
        .sum::<f64>()
        / n as f64
}

/// `pos_mean <= 1 + neg_mean + 1/(n-1)` plus the exact identity behind it.
///
/// Passes iff the inequality holds within `tol` and the identity residual is
/// at most [`IDENTITY_TOL`].
pub fn check_overexpansion(e: &EmbeddingSet, tol: f64) -> OverexpansionCheck {
    let n = e.n() as f64;
    let s = similarity_stats(e);
    let r1 = difference_spread(e.u(), e.v());
    let cu = centroid(e.u());
    let cv = centroid(e.v());
    let r2: f64 = cu.iter().zip(&cv).map(|(a, b)| (a + b) * (a + b)).sum();
    let lhs_identity = 1.0 - (n - 2.0) / n * s.pos_mean + 2.0 * (n - 1.0) / n * s.neg_mean;
    let identity_residual = (lhs_identity - 0.5 * (r1 + r2)).abs();
    let rhs = 1.0 + s.neg_mean + 1.0 / (n - 1.0);
    let margin = rhs - s.pos_mean;
    let report = CheckReport {
        name: "overexpansion".into(),
        passed: margin >= -tol && identity_residual <= IDENTITY_TOL,
        lhs: s.pos_mean,
        rhs,
        margin,
        tolerance: tol,
        details: format!("r1={r1:.6e} r2={r2:.6e} identity_residual={identity_residual:.3e}"),
    };
    OverexpansionCheck { report, r1, r2, identity_residual }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmoidRegime {
    /// Optimal negatives fall below `-1/(n-1)` and positives below 1.
    Excessive,
    /// The optimum is the aligned simplex ETF.
    Aligned,
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmoidCondition {
    pub regime: SigmoidRegime,
    /// `(1 + exp(t/(n-1) + b)) / (1 + exp(t - b))`.
    pub ratio: f64,
    /// `(n - 2) / 2`.
    pub threshold: f64,
}

/// Classifies SigLIP hyperparameters for `n` instances.
pub fn sigmoid_excess_condition(n: usize, t: f64, b: f64) -> Result<SigmoidCondition> {
    if n < 3 {
        return Err(Error::InvalidParameter { name: "n", reason: format!("need n >= 3, got {n}") });
    }
    if !(t > 0.0) {
        return Err(Error::InvalidParameter { name: "t", reason: format!("must be positive, got {t}") });
    }
    let nf = n as f64;
    let log_ratio = math::softplus(t / (nf - 1.0) + b) - math::softplus(t - b);
    let ratio = math::exp(log_ratio);
    let threshold = (nf - 2.0) / 2.0;
    let regime = if (ratio - threshold).abs() <= SIGMOID_BOUNDARY_TOL {
        SigmoidRegime::Boundary
    } else if ratio < threshold {
        SigmoidRegime::Excessive
    } else {
        SigmoidRegime::Aligned
    };
    Ok(SigmoidCondition { regime, ratio, threshold })
}

/// `(n-2)/(2(n-1)) psi'(-1/(n-1)) - phi'(1)`: positive when the additive loss
/// with cross-view negatives only separates negatives excessively.
pub fn fullbatch_condition_margin(phi_prime_at_one: f64, psi_prime_at_etf: f64, n: usize) -> f64 {
    let nf = n as f64;
    (nf - 2.0) / (2.0 * (nf - 1.0)) * psi_prime_at_etf - phi_prime_at_one
}

/// Mean of `||u_i - v_i||^2` over positive pairs.
pub fn alignment_metric(e: &EmbeddingSet) -> f64 {
    let n = e.n();
    (0..n)
        .map(|i| e.u().row(i).iter().zip(e.v().row(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / n as f64
}

/// `log mean_{i,j} exp(-||u_i - v_j||^2)` over all `n^2` ordered pairs.
pub fn uniformity_exact(e: &EmbeddingSet) -> f64 {
    let suv = e.u().mul_transpose(e.v());
    // ||u - v||^2 = 2 - 2 u.v on the sphere; shift by the max for stability.
    let args: Vec<f64> = suv.as_slice().iter().map(|s| 2.0 * s - 2.0).collect();
    let max = args.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = args.iter().map(|a| math::exp(a - max)).sum::<f64>() / args.len() as f64;
    max + math::ln(mean)
}

/// Normal-law approximation `2 (neg_mean + neg_var - 1)`.
pub fn uniformity_approx(stats: &SimilarityStats) -> f64 {
    2.0 * (stats.neg_mean + stats.neg_var - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgfProbe {
    /// `log` of the sample mean of `exp(2X)`.
    pub estimate: f64,
    /// `2 (mu + sigma^2)`.
    pub closed_form: f64,
}

/// Monte-Carlo estimate of `log E[exp(2X)]` for `X ~ N(mu, sigma^2)`.
pub fn mgf_probe(mu: f64, sigma: f64, samples: usize, seed: u64) -> Result<MgfProbe> {
    let normal = Normal::new(mu, sigma)
        .map_err(|e| Error::InvalidParameter { name: "sigma", reason: format!("{e}") })?;
    if samples == 0 {
        return Err(Error::InvalidParameter { name: "samples", reason: "must be positive".into() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    for _ in 0..samples {
        let x: f64 = normal.sample(&mut rng);
        sum += math::exp(2.0 * x);
    }
    Ok(MgfProbe { estimate: math::ln(sum / samples as f64), closed_form: 2.0 * (mu + sigma * sigma) })
}

/// Inequality lemmas on `2n` unit vectors and the negative-pair decomposition.
pub fn lemma_suite(e: &EmbeddingSet) -> Vec<CheckReport> {
    let n = e.n();
    let nf = n as f64;
    let pairs = nf * (nf - 1.0);
    let suv = e.u().mul_transpose(e.v());
    let suu = e.u().mul_transpose(e.u());
    let svv = e.v().mul_transpose(e.v());
    let off_sum = |m: &Matrix| (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m.get(i, j)).sum::<f64>();
    let pos_sum: f64 = (0..n).map(|i| suv.get(i, i)).sum();
    let cross = off_sum(&suv);
    let within_u = off_sum(&suu);
    let within_v = off_sum(&svv);

    let cu = centroid(e.u());
    let cv = centroid(e.v());
    let sum_norm = |a: &[f64], b: &[f64]| math::norm(&a.iter().zip(b).map(|(x, y)| nf * (x + y)).collect::<Vec<_>>());
    let zero = alloc::vec![0.0; e.d()];
    let total_centroid = sum_norm(&cu, &cv);
    let spread = difference_spread(e.u(), e.v());

    let mut out = Vec::with_capacity(4);
    out.push(CheckReport::at_least(
        "pos_neg_inequality",
        cross / pairs,
        (nf - 2.0) / (2.0 * pairs) * pos_sum - nf / (2.0 * (nf - 1.0)),
        INEQUALITY_SLACK_TOL,
        format!("equality residuals: spread(u-v)={spread:.3e} |sum u + sum v|={total_centroid:.3e}"),
    ));
    out.push(CheckReport::at_least(
        "pos_neg_inequality_within_cross",
        (within_u + within_v + 2.0 * cross) / pairs,
        -2.0 / pairs * pos_sum - 2.0 / (nf - 1.0),
        INEQUALITY_SLACK_TOL,
        format!("equality residual: |sum u + sum v|={total_centroid:.3e}"),
    ));
    out.push(CheckReport::at_least(
        "within_view_inequality",
        (within_u + within_v) / pairs,
        -2.0 / (nf - 1.0),
        INEQUALITY_SLACK_TOL,
        format!("equality residuals: |sum u|={:.3e} |sum v|={:.3e}", sum_norm(&cu, &zero), sum_norm(&cv, &zero)),
    ));
    let s = similarity_stats(e);
    out.push(CheckReport::equal(
        "negative_pair_decomposition",
        e.full_pair_mean(),
        s.pos_mean / nf + (nf - 1.0) / nf * s.neg_mean,
        DECOMPOSITION_TOL,
        String::new(),
    ));
    out
}

/// Checks nonnegativity and strict decrease in the prefix size `m` of the
/// InfoNCE negative-pair gradient for `pairs` random `(i, j)`, plus exact
/// repeatability at equal `m`.
pub fn gradient_monotonicity_probe(e: &EmbeddingSet, t: f64, pairs: usize, seed: u64) -> Result<CheckReport> {
    let n = e.n();
    if n < 3 {
        return Err(Error::InvalidParameter { name: "n", reason: format!("need n >= 3, got {n}") });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_value = f64::INFINITY;
    let mut min_gap = f64::INFINITY;
    let mut violations = Vec::new();
    for _ in 0..pairs {
        let i = rng.random_range(0..n);
        let j = loop {
            let j = rng.random_range(0..n);
            if j != i {
                break j;
            }
        };
        let start = i.max(j) + 1;
        let mut prev: Option<f64> = None;
        for m in start..=n {
            let g = infonce_neg_pair_grad(e, i, j, t, m)?;
            let again = infonce_neg_pair_grad(e, i, j, t, m)?;
            min_value = min_value.min(g);
            if g < 0.0 || g != again {
                violations.push(format!("({i},{j}) m={m}: {g:e}"));
            }
            if let Some(p) = prev {
                min_gap = min_gap.min(p - g);
                if !(g < p) {
                    violations.push(format!("({i},{j}) m={m}: {g:e} !< {p:e}"));
                }
            }
            prev = Some(g);
        }
    }
    Ok(CheckReport {
        name: "infonce_gradient_monotonicity".into(),
        passed: violations.is_empty(),
        lhs: min_value,
        rhs: 0.0,
        margin: min_gap,
        tolerance: 0.0,
        details: if violations.is_empty() { format!("{pairs} pairs") } else { violations.join("; ") },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max_k |analytic_k - numeric_k| / max(||analytic||_inf, ||numeric||_inf)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// Central finite differences of [`total_loss`] in every ambient coordinate,
/// compared with the analytic gradient.
pub fn finite_difference_check(spec: &LossSpec, e: &EmbeddingSet, idx: &[usize], h: f64) -> Result<GradCheck> {
    let analytic = grad(spec, e, idx)?;
    let block = e.subset(idx)?;
    let all: Vec<usize> = (0..idx.len()).collect();
    let (u0, v0) = (block.u().clone(), block.v().clone());
    let eval = |u: &Matrix, v: &Matrix| -> Result<f64> {
        // Off-sphere perturbation: skip the unit-norm validation.
        let set = EmbeddingSet::with_tolerance(u.clone(), v.clone(), f64::INFINITY)?;
        total_loss(spec, &set, &all)
    };
    let mut numeric = Vec::with_capacity(2 * u0.as_slice().len());
    for view in 0..2 {
        let len = u0.as_slice().len();
        for k in 0..len {
            let (mut up, mut vp) = (u0.clone(), v0.clone());
            let (mut um, mut vm) = (u0.clone(), v0.clone());
            if view == 0 {
                up.as_mut_slice()[k] += h;
                um.as_mut_slice()[k] -= h;
            } else {
                vp.as_mut_slice()[k] += h;
                vm.as_mut_slice()[k] -= h;
            }
            numeric.push((eval(&up, &vp)? - eval(&um, &vm)?) / (2.0 * h));
        }
    }
    let analytic_flat: Vec<f64> = analytic.d_u.as_slice().iter().chain(analytic.d_v.as_slice()).copied().collect();
    let scale = analytic_flat.iter().chain(&numeric).fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let max_abs_error = analytic_flat.iter().zip(&numeric).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(GradCheck { max_rel_error: max_abs_error / scale, max_abs_error })
}
