//! Seeded runs, sweeps and the checks attached to their outcomes.

use std::path::Path;

use negsim_core::analysis::{
    check_fullbatch_optimum, check_overexpansion, lemma_suite, sigmoid_excess_condition, variance_bounds, CheckReport,
    SigmoidRegime, CONVERGED_GRAD_NORM, INEQUALITY_SLACK_TOL,
};
use negsim_core::optimizer::{loss_increases, optimize, partition_fixed, select_best, Init, Outcome, ADVISORY_WINDOW};
use negsim_core::{LossFamily, SimilarityStats};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, InitKind, Preset, SweepAxis};
use crate::error::{LabError, Result};
use crate::io::{self, StatsJson, SweepRow};

/// Slack around the variance interval when judging a converged run.
pub const VARIANCE_SLACK: f64 = 0.02;
/// Tolerance on `|neg_mean + 1/(n-1)|` and on the full-batch optimum moments.
pub const MOMENT_TOL: f64 = 1e-2;
pub const POS_MEAN_MIN: f64 = 0.999;
/// Required distance below `-1/(n-1)` and below 1 in the excessive regime.
pub const EXCESS_NEG_MARGIN: f64 = 5e-3;
pub const EXCESS_POS_MARGIN: f64 = 1e-3;
/// Allowed increase of `neg_var` between consecutive sweep points.
pub const SWEEP_MONOTONE_SLACK: f64 = 0.02;

/// Best of `cfg.restarts` seeds (`seed + r`), run concurrently on the
/// current rayon pool. A warm start runs once.
pub fn solve(cfg: &ExperimentConfig) -> Result<Outcome> {
    let spec = cfg.loss_spec()?;
    let opt = cfg.optimizer_config()?;
    let p = partition_fixed(cfg.n, cfg.batch_size)?;
    let restarts = if matches!(opt.init, Init::WarmStart(_)) { 1 } else { cfg.restarts };
    let outs = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let o = negsim_core::OptimizerConfig { seed: opt.seed.wrapping_add(r as u64), ..opt.clone() };
            optimize(&spec, &o, &p, cfg.n, cfg.d)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(select_best(outs).expect("at least one restart"))
}

fn report(name: &str, passed: bool, lhs: f64, rhs: f64, margin: f64, tolerance: f64, details: String) -> CheckReport {
    CheckReport { name: name.into(), passed, lhs, rhs, margin, tolerance, details }
}

fn has_closed_form_optimum(family: &LossFamily) -> bool {
    matches!(family, LossFamily::InfoNce | LossFamily::SimClr | LossFamily::Dcl | LossFamily::Dhel)
}

/// Checks for a finished run: convergence, the closed-form optimum that applies to the
/// configured loss and batch layout, and the always-true inequalities on the
/// final embeddings.
pub fn outcome_checks(cfg: &ExperimentConfig, out: &Outcome) -> Result<Vec<CheckReport>> {
    let spec = cfg.loss_spec()?;
    let s = out.stats();
    let (n, m) = (cfg.n, cfg.batch_size);
    let tol = cfg.check.tolerance;
    let mut checks = Vec::new();

    let converged = out.final_grad_norm <= CONVERGED_GRAD_NORM;
    checks.push(report(
        "converged",
        converged,
        out.final_grad_norm,
        CONVERGED_GRAD_NORM,
        CONVERGED_GRAD_NORM - out.final_grad_norm,
        0.0,
        format!("{:?} after {} steps", out.termination, out.trajectory.last().map_or(0, |r| r.step)),
    ));

    let plain = spec.vrns_lambda() == 0.0 && spec.family().pinned_selectors() == Some(spec.selectors());
    if (converged || cfg.check.allow_unconverged) && plain {
        let etf_fits = cfg.d + 1 >= n;
        if m == n && !etf_fits {
            // no simplex ETF exists, so there is no closed-form full-batch optimum
        } else if m == n && has_closed_form_optimum(spec.family()) {
            checks.push(check_fullbatch_optimum(&s, n, tol.unwrap_or(MOMENT_TOL)));
        } else if m == n && matches!(spec.family(), LossFamily::SigLip) {
            let c = sigmoid_excess_condition(n, spec.temperature(), spec.bias())?;
            checks.push(report(
                "sigmoid_condition",
                true,
                c.ratio,
                c.threshold,
                c.threshold - c.ratio,
                0.0,
                format!("{:?}", c.regime),
            ));
            match c.regime {
                SigmoidRegime::Excessive => checks.push(excess_check(&s, n, tol)),
                SigmoidRegime::Aligned => checks.push(check_fullbatch_optimum(&s, n, tol.unwrap_or(MOMENT_TOL))),
                SigmoidRegime::Boundary => {}
            }
        } else if m < n && has_closed_form_optimum(spec.family()) {
            checks.extend(minibatch_checks(&s, n, m, cfg.d, tol)?);
        }
    }

    let over = check_overexpansion(&out.embeddings, tol.unwrap_or(INEQUALITY_SLACK_TOL));
    checks.push(over.report);
    checks.extend(lemma_suite(&out.embeddings));
    Ok(checks)
}

/// Negatives below `-1/(n-1) - 5e-3` and positives below `1 - 1e-3`.
pub fn excess_check(s: &SimilarityStats, n: usize, tol: Option<f64>) -> CheckReport {
    let target = -1.0 / (n as f64 - 1.0);
    let neg_gap = target - EXCESS_NEG_MARGIN - s.neg_mean;
    let pos_gap = 1.0 - EXCESS_POS_MARGIN - s.pos_mean;
    let margin = neg_gap.min(pos_gap);
    let tol = tol.unwrap_or(0.0);
    report(
        "excessive_separation",
        margin >= -tol,
        s.neg_mean,
        target - EXCESS_NEG_MARGIN,
        margin,
        tol,
        format!("pos_mean={:.6} neg_mean={:.6} (-1/(n-1)={target:.6})", s.pos_mean, s.neg_mean),
    )
}

/// Interval membership of `neg_var`, plus the pinned means.
pub fn minibatch_checks(s: &SimilarityStats, n: usize, m: usize, d: usize, tol: Option<f64>) -> Result<Vec<CheckReport>> {
    let b = variance_bounds(n, m, d)?;
    let slack = tol.unwrap_or(VARIANCE_SLACK);
    let margin = (s.neg_var - b.lower).min(b.upper - s.neg_var);
    let target = -1.0 / (n as f64 - 1.0);
    let mtol = tol.unwrap_or(MOMENT_TOL);
    Ok(vec![
        report(
            "variance_bounds",
            margin >= -slack,
            s.neg_var,
            b.lower,
            margin,
            slack,
            format!("interval [{:.6}, {:.6}]; d >= b(m-1): {}", b.lower, b.upper, b.dim_condition_met),
        ),
        CheckReport::equal("minibatch_neg_mean", s.neg_mean, target, mtol, String::new()),
        CheckReport::at_least("minibatch_pos_mean", s.pos_mean, POS_MEAN_MIN, 0.0, String::new()),
    ])
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub label: String,
    pub config: ExperimentConfig,
    pub outcome: Outcome,
    pub checks: Vec<CheckReport>,
}

impl RunResult {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn single(label: &str, cfg: ExperimentConfig) -> Result<RunResult> {
    let outcome = solve(&cfg)?;
    let checks = outcome_checks(&cfg, &outcome)?;
    Ok(RunResult { label: label.into(), config: cfg, outcome, checks })
}

/// The run set for a config: three runs for the figure2 preset, one otherwise.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    if cfg.preset != Some(Preset::Figure2) {
        return Ok(vec![single("run", cfg.clone())?]);
    }
    let full = ExperimentConfig { batch_size: cfg.n, ..cfg.clone() };
    let mut coaxial = cfg.clone();
    coaxial.opt.init = InitKind::Coaxial;
    let mut orthogonal = cfg.clone();
    orthogonal.opt.init = InitKind::Orthogonal;
    let jobs = [("full", full), ("coaxial", coaxial), ("orthogonal", orthogonal)];
    let mut results: Vec<RunResult> =
        jobs.into_par_iter().map(|(label, c)| single(label, c)).collect::<Result<Vec<_>>>()?;
    let (n, m, d) = (cfg.n, cfg.batch_size, cfg.d);
    let b = variance_bounds(n, m, d)?;
    for r in results.iter_mut() {
        let target = match r.label.as_str() {
            "coaxial" => b.upper,
            "orthogonal" => b.lower,
            _ => 0.0,
        };
        let s = r.outcome.stats();
        let tol = cfg.check.tolerance.unwrap_or(VARIANCE_SLACK);
        r.checks.push(CheckReport::equal("figure2_neg_var", s.neg_var, target, tol, String::new()));
        r.checks.push(CheckReport::equal(
            "figure2_neg_mean",
            s.neg_mean,
            -1.0 / (n as f64 - 1.0),
            cfg.check.tolerance.unwrap_or(MOMENT_TOL),
            String::new(),
        ));
    }
    Ok(results)
}

#[derive(Serialize)]
struct FinalStats<'a> {
    label: &'a str,
    n: usize,
    d: usize,
    batch_size: usize,
    loss: &'a str,
    final_loss: f64,
    final_grad_norm: f64,
    converged: bool,
    steps: usize,
    step_size: f64,
    stats: StatsJson,
}

#[derive(Serialize)]
struct LossIncreaseJson {
    from_step: usize,
    to_step: usize,
    before: f64,
    after: f64,
}

/// Advisory smoke check, never counted as a failure.
#[derive(Serialize)]
struct Advisory<'a> {
    label: &'a str,
    window: usize,
    loss_increases: Vec<LossIncreaseJson>,
}

fn labelled(label: &str, multi: bool, r: &CheckReport) -> CheckReport {
    if multi {
        CheckReport { name: format!("{label}/{}", r.name), ..r.clone() }
    } else {
        r.clone()
    }
}

/// Writes `config.txt` (the base config `cfg`), `trajectory[_<label>].csv`,
/// embeddings, `final_stats.json`, `advisory.json` and `checks.json` into `dir`.
pub fn write_run_artifacts(dir: &Path, cfg: &ExperimentConfig, results: &[RunResult]) -> Result<()> {
    io::create_dir(dir)?;
    let multi = results.len() > 1;
    io::write_text(&dir.join("config.txt"), &cfg.to_text())?;
    let mut stats = Vec::new();
    let mut reports = Vec::new();
    for r in results {
        let stem = if multi { format!("trajectory_{}", r.label) } else { "trajectory".into() };
        let path = dir.join(format!("{stem}.csv"));
        let f = std::fs::File::create(&path).map_err(crate::error::io_err(&path))?;
        io::write_trajectory(std::io::BufWriter::new(f), &r.outcome.trajectory)?;
        let stem = if multi { format!("embeddings_{}", r.label) } else { "embeddings".into() };
        io::write_embeddings(dir, &stem, &r.outcome.embeddings)?;
        stats.push(FinalStats {
            label: &r.label,
            n: r.config.n,
            d: r.config.d,
            batch_size: r.config.batch_size,
            loss: &r.config.loss.family,
            final_loss: r.outcome.final_loss,
            final_grad_norm: r.outcome.final_grad_norm,
            converged: r.outcome.converged(),
            steps: r.outcome.trajectory.last().map_or(0, |t| t.step),
            step_size: r.outcome.step_size,
            stats: r.outcome.stats().into(),
        });
        reports.extend(r.checks.iter().map(|c| labelled(&r.label, multi, c)));
    }
    let advisories: Vec<Advisory> = results
        .iter()
        .map(|r| Advisory {
            label: &r.label,
            window: ADVISORY_WINDOW,
            loss_increases: loss_increases(&r.outcome.trajectory, ADVISORY_WINDOW)
                .into_iter()
                .map(|x| LossIncreaseJson { from_step: x.from_step, to_step: x.to_step, before: x.before, after: x.after })
                .collect(),
        })
        .collect();
    io::write_text(&dir.join("final_stats.json"), &serde_json::to_string_pretty(&stats)?)?;
    io::write_text(&dir.join("advisory.json"), &serde_json::to_string_pretty(&advisories)?)?;
    io::write_text(&dir.join("checks.json"), &io::reports_json(&reports)?)
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub result: std::result::Result<RunResult, String>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    /// Cross-point checks, e.g. `neg_var` nonincreasing along the axis.
    pub trend_checks: Vec<CheckReport>,
}

impl SweepResult {
    pub fn passed(&self) -> bool {
        self.points.iter().all(|p| p.result.as_ref().is_ok_and(|r| r.passed()))
            && self.trend_checks.iter().all(|c| c.passed)
    }

    pub fn rows(&self) -> Vec<SweepRow> {
        self.points
            .iter()
            .map(|p| match &p.result {
                Ok(r) => {
                    let s = r.outcome.stats();
                    let passed = r.checks.iter().filter(|c| c.passed).count();
                    SweepRow {
                        axis: self.axis.name().into(),
                        value: p.value,
                        pos_mean: s.pos_mean,
                        neg_mean: s.neg_mean,
                        neg_var: s.neg_var,
                        within_mean: s.within_mean,
                        passed_checks: format!("{passed}/{}", r.checks.len()),
                    }
                }
                Err(_) => SweepRow {
                    axis: self.axis.name().into(),
                    value: p.value,
                    pos_mean: f64::NAN,
                    neg_mean: f64::NAN,
                    neg_var: f64::NAN,
                    within_mean: f64::NAN,
                    passed_checks: "error".into(),
                },
            })
            .collect()
    }

    pub fn reports(&self) -> Vec<CheckReport> {
        let mut out = Vec::new();
        for p in &self.points {
            let label = format!("{}={}", self.axis.name(), p.value);
            match &p.result {
                Ok(r) => out.extend(r.checks.iter().map(|c| labelled(&label, true, c))),
                Err(e) => out.push(report(&format!("{label}/error"), false, f64::NAN, f64::NAN, f64::NAN, 0.0, e.clone())),
            }
        }
        out.extend(self.trend_checks.iter().cloned());
        out
    }
}

/// One seeded run per value (seed + point index); points run concurrently
/// and a failing point is recorded without stopping the sweep.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(LabError::config("sweep.values: empty list"));
    }
    let points_cfg: Vec<ExperimentConfig> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut c = cfg.at_point(axis, v)?;
            c.opt.seed = cfg.opt.seed.wrapping_add(i as u64);
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let points: Vec<SweepPoint> = points_cfg
        .into_par_iter()
        .zip(values.par_iter())
        .map(|(c, &value)| SweepPoint { value, result: single("point", c).map_err(|e| e.to_string()) })
        .collect();

    let mut trend_checks = Vec::new();
    if matches!(axis, SweepAxis::BatchSize | SweepAxis::Lambda) {
        let tol = cfg.check.tolerance.unwrap_or(SWEEP_MONOTONE_SLACK);
        let vars: Vec<(f64, f64)> =
            points.iter().filter_map(|p| p.result.as_ref().ok().map(|r| (p.value, r.outcome.stats().neg_var))).collect();
        let worst = vars.windows(2).map(|w| (w[1].1 - w[0].1, w[1].0)).fold((f64::NEG_INFINITY, f64::NAN), |a, b| if b.0 > a.0 { b } else { a });
        if worst.0.is_finite() {
            trend_checks.push(report(
                "neg_var_nonincreasing",
                worst.0 <= tol,
                worst.0,
                0.0,
                worst.0,
                tol,
                format!("largest increase at {}={}", axis.name(), worst.1),
            ));
        }
    }
    Ok(SweepResult { axis, points, trend_checks })
}

/// Writes `config.txt`, `sweep.csv` and `sweep_checks.json` into `dir`.
pub fn write_sweep_artifacts(dir: &Path, cfg: &ExperimentConfig, result: &SweepResult) -> Result<()> {
    io::create_dir(dir)?;
    io::write_text(&dir.join("config.txt"), &cfg.to_text())?;
    let path = dir.join("sweep.csv");
    let f = std::fs::File::create(&path).map_err(crate::error::io_err(&path))?;
    io::write_sweep(std::io::BufWriter::new(f), &result.rows())?;
    io::write_text(&dir.join("sweep_checks.json"), &io::reports_json(&result.reports())?)
}

pub fn summary_table(reports: &[CheckReport]) -> String {
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut s = format!("{:<width$}  {:<6}  {:>12}  {:>10}\n", "check", "result", "margin", "tolerance");
    for r in reports {
        s.push_str(&format!(
            "{:<width$}  {:<6}  {:>12.4e}  {:>10.2e}\n",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.margin,
            r.tolerance
        ));
    }
    s
}
