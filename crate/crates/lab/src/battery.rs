//! Fuzzed property battery behind `check-all`.
//!
//! Each function aggregates many instances into one [`CheckReport`] carrying
//! the worst margin seen. `tol` replaces the pinned tolerance when given.

use negsim_core::analysis::{
    check_overexpansion, finite_difference_check, gradient_monotonicity_probe, lemma_suite, mgf_probe,
    sigmoid_excess_condition, CheckReport, DECOMPOSITION_TOL, IDENTITY_TOL, INEQUALITY_SLACK_TOL,
};
use negsim_core::geometry::{combined_etf_mean, make_etf, random_orthogonal};
use negsim_core::optimizer::random_embeddings;
use negsim_core::{EmbeddingSet, LossFamily, LossSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

pub const GRAD_REL_TOL: f64 = 1e-6;
pub const GRAD_FD_STEP: f64 = 1e-5;
pub const MGF_TOL: f64 = 5e-3;
pub const MGF_SAMPLES: usize = 1_000_000;
pub const COMBINED_ETF_TOL: f64 = 1e-10;
pub const SIGMOID_AGREEMENT_TOL: f64 = 1e-10;

fn sub_seed(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Worst-case aggregation; `larger_is_worse` selects how margins compare.
struct Worst {
    name: &'static str,
    tolerance: f64,
    larger_is_worse: bool,
    worst: Option<CheckReport>,
    failures: usize,
    cases: usize,
}

impl Worst {
    fn new(name: &'static str, tolerance: f64, larger_is_worse: bool) -> Self {
        Self { name, tolerance, larger_is_worse, worst: None, failures: 0, cases: 0 }
    }

    fn push(&mut self, r: CheckReport, context: &str) {
        self.cases += 1;
        self.failures += usize::from(!r.passed);
        let worse = match &self.worst {
            None => true,
            Some(w) => {
                // failures outrank passes, then the margin decides
                (!r.passed && w.passed)
                    || (r.passed == w.passed
                        && if self.larger_is_worse { r.margin > w.margin } else { r.margin < w.margin })
            }
        };
        if worse {
            self.worst = Some(CheckReport { details: format!("{context}: {}", r.details), ..r });
        }
    }

    fn finish(self) -> CheckReport {
        let w = self.worst.unwrap_or_else(|| CheckReport::equal(self.name, 0.0, 0.0, self.tolerance, String::new()));
        CheckReport {
            name: self.name.into(),
            passed: self.failures == 0,
            tolerance: self.tolerance,
            details: format!("{} of {} cases failed; worst {}", self.failures, self.cases, w.details),
            ..w
        }
    }
}

fn fuzz_set(rng: &mut ChaCha8Rng, n_range: std::ops::RangeInclusive<usize>, d_range: std::ops::RangeInclusive<usize>) -> Result<EmbeddingSet> {
    let n = rng.random_range(n_range);
    let d = rng.random_range(d_range);
    Ok(random_embeddings(n, d, rng)?)
}

/// Inequality lemmas and the decomposition identity on `cases` random sets
/// with `n` in 2..=16 and `d` in 2..=8. Returns one report per lemma.
pub fn lemma_battery(seed: u64, cases: usize, tol: Option<f64>) -> Result<Vec<CheckReport>> {
    let mut rng = sub_seed(seed, 1);
    let names = ["pos_neg_inequality", "pos_neg_inequality_within_cross", "within_view_inequality", "negative_pair_decomposition"];
    let mut agg: Vec<Worst> = names
        .iter()
        .map(|&name| {
            let is_identity = name == "negative_pair_decomposition";
            let pinned = if is_identity { DECOMPOSITION_TOL } else { INEQUALITY_SLACK_TOL };
            Worst::new(name, tol.unwrap_or(pinned), is_identity)
        })
        .collect();
    for case in 0..cases {
        let e = fuzz_set(&mut rng, 2..=16, 2..=8)?;
        for (r, a) in lemma_suite(&e).into_iter().zip(agg.iter_mut()) {
            let r = rejudge(r, a.tolerance, a.larger_is_worse);
            a.push(r, &format!("case {case} (n={}, d={})", e.n(), e.d()));
        }
    }
    Ok(agg.into_iter().map(Worst::finish).collect())
}

/// Re-evaluates `passed` under `tol`: identities pass when the residual is
/// at most `tol`, inequalities when the slack is at least `-tol`.
fn rejudge(r: CheckReport, tol: f64, identity: bool) -> CheckReport {
    let passed = if identity { r.margin <= tol } else { r.margin >= -tol };
    CheckReport { passed, tolerance: tol, ..r }
}

/// Overexpansion inequality plus the exact identity residual on random sets.
pub fn overexpansion_battery(seed: u64, cases: usize, tol: Option<f64>) -> Result<CheckReport> {
    let mut rng = sub_seed(seed, 2);
    let identity_tol = tol.unwrap_or(IDENTITY_TOL);
    let mut agg = Worst::new("overexpansion_identity", identity_tol, true);
    for case in 0..cases {
        let e = fuzz_set(&mut rng, 2..=16, 2..=8)?;
        let c = check_overexpansion(&e, tol.unwrap_or(INEQUALITY_SLACK_TOL));
        let residual = c.identity_residual;
        let r = CheckReport {
            name: "overexpansion_identity".into(),
            passed: residual <= identity_tol && c.report.margin >= -c.report.tolerance,
            lhs: residual,
            rhs: 0.0,
            margin: residual,
            tolerance: identity_tol,
            details: format!("inequality slack {:.3e}; {}", c.report.margin, c.report.details),
        };
        agg.push(r, &format!("case {case} (n={}, d={})", e.n(), e.d()));
    }
    Ok(agg.finish())
}

/// Mean over the concatenation of two randomly rotated ETFs against `-1/(p+q-1)`.
pub fn combined_etf_battery(seed: u64, cases: usize, tol: Option<f64>) -> Result<CheckReport> {
    let mut rng = sub_seed(seed, 3);
    let tol = tol.unwrap_or(COMBINED_ETF_TOL);
    let mut agg = Worst::new("combined_etf_mean", tol, true);
    for case in 0..cases {
        let p = rng.random_range(2..=8);
        let q = rng.random_range(2..=8);
        let d = p.max(q) - 1 + rng.random_range(0..=3);
        let a = make_etf(p, d)?.mul_transpose(&random_orthogonal(d, &mut rng));
        let b = make_etf(q, d)?.mul_transpose(&random_orthogonal(d, &mut rng));
        let got = combined_etf_mean(&a, &b)?;
        let want = -1.0 / (p + q - 1) as f64;
        agg.push(CheckReport::equal("combined_etf_mean", got, want, tol, String::new()), &format!("case {case} (p={p}, q={q}, d={d})"));
    }
    Ok(agg.finish())
}

/// Every named family, with and without VRNS, against central differences.
pub fn gradient_battery(seed: u64, seeds: usize, tol: Option<f64>) -> Result<CheckReport> {
    let tol = tol.unwrap_or(GRAD_REL_TOL);
    let mut agg = Worst::new("gradient_finite_difference", tol, true);
    for s in 0..seeds as u64 {
        let mut rng = sub_seed(seed.wrapping_add(s), 4);
        for n in [3usize, 5, 8] {
            let d = rng.random_range(2..=6);
            let e = random_embeddings(n, d, &mut rng)?;
            let idx: Vec<usize> = (0..n).collect();
            for family in LossFamily::NAMED {
                let mut spec = LossSpec::new(family, rng.random_range(0.2..2.0), n)?;
                if spec.uses_bias() {
                    spec = spec.with_bias(rng.random_range(-3.0..3.0))?;
                }
                for lambda in [0.0, rng.random_range(0.5..30.0)] {
                    let spec = if lambda > 0.0 { spec.clone().with_vrns(lambda)? } else { spec.clone() };
                    let g = finite_difference_check(&spec, &e, &idx, GRAD_FD_STEP)?;
                    let r = CheckReport {
                        name: "gradient_finite_difference".into(),
                        passed: g.max_rel_error <= tol,
                        lhs: g.max_rel_error,
                        rhs: 0.0,
                        margin: g.max_rel_error,
                        tolerance: tol,
                        details: format!("abs {:.3e}", g.max_abs_error),
                    };
                    agg.push(r, &format!("{} t={:.3} lambda={lambda:.2} n={n} seed={s}", spec.family().name(), spec.temperature()));
                }
            }
        }
    }
    Ok(agg.finish())
}

/// InfoNCE negative-pair gradient probe on `sets` random sets, 20 pairs each.
pub fn monotonicity_battery(seed: u64, sets: usize) -> Result<CheckReport> {
    let mut rng = sub_seed(seed, 5);
    let mut agg = Worst::new("infonce_gradient_monotonicity", 0.0, false);
    for case in 0..sets {
        let e = fuzz_set(&mut rng, 3..=12, 2..=8)?;
        let t = rng.random_range(0.05..2.0);
        let r = gradient_monotonicity_probe(&e, t, 20, rng.random())?;
        agg.push(r, &format!("case {case} (n={}, t={t:.3})", e.n()));
    }
    Ok(agg.finish())
}

/// `log E[exp(2X)]` against `2(mu + sigma^2)` for a normal law.
pub fn mgf_check(seed: u64, tol: Option<f64>) -> Result<CheckReport> {
    let (mu, sigma) = (-0.1, 0.3);
    let p = mgf_probe(mu, sigma, MGF_SAMPLES, seed)?;
    Ok(CheckReport::equal(
        "mgf_probe",
        p.estimate,
        p.closed_form,
        tol.unwrap_or(MGF_TOL),
        format!("mu={mu} sigma={sigma} samples={MGF_SAMPLES}"),
    ))
}

/// The sigmoid hyperparameter ratio against the derivative form on a grid.
pub fn sigmoid_agreement_check(tol: Option<f64>) -> Result<CheckReport> {
    let tol = tol.unwrap_or(SIGMOID_AGREEMENT_TOL);
    let sigma = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut agg = Worst::new("sigmoid_condition_agreement", tol, true);
    for n in [3usize, 4, 8, 16, 64, 256] {
        let nf = n as f64;
        for t in [0.5, 1.0, 2.0, 5.0, 10.0, 20.0] {
            for b in [-8.0, -5.0, -1.0, 0.0, 1.0, 3.0, 8.0] {
                let c = sigmoid_excess_condition(n, t, b)?;
                let phi_prime = t * sigma(-t + b);
                let psi_prime = (nf - 1.0) * t * sigma(-t / (nf - 1.0) - b);
                let derivative_form = (nf - 2.0) / (2.0 * (nf - 1.0)) * psi_prime / phi_prime;
                let want = c.threshold / c.ratio;
                let rel = (derivative_form - want).abs() / want.abs().max(1.0);
                let r = CheckReport {
                    name: "sigmoid_condition_agreement".into(),
                    passed: rel <= tol,
                    lhs: derivative_form,
                    rhs: want,
                    margin: rel,
                    tolerance: tol,
                    details: format!("{:?}", c.regime),
                };
                agg.push(r, &format!("n={n} t={t} b={b}"));
            }
        }
    }
    Ok(agg.finish())
}

/// The complete battery in a fixed order.
pub fn check_all(seed: u64, fuzz_cases: usize, tol: Option<f64>) -> Result<Vec<CheckReport>> {
    let mut out = lemma_battery(seed, fuzz_cases, tol)?;
    out.push(overexpansion_battery(seed, fuzz_cases, tol)?);
    out.push(combined_etf_battery(seed, fuzz_cases, tol)?);
    out.push(gradient_battery(seed, 20, tol)?);
    out.push(monotonicity_battery(seed, 50)?);
    out.push(mgf_check(seed, tol)?);
    out.push(sigmoid_agreement_check(tol)?);
    Ok(out)
}
