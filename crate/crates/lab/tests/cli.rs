use std::fs;
use std::path::Path;

use negsim::cli::run_with_output;
use negsim::io::{self, ReportJson};
use negsim::runner;
use negsim::{ExperimentConfig, LabError, SweepAxis};
use negsim_core::analysis::variance_bounds;
use negsim_core::geometry::etf_residual;

fn negsim_output(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = run_with_output(std::iter::once("negsim").chain(args.iter().copied()), &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn negsim(args: &[&str]) -> i32 {
    negsim_output(args).0
}

fn dir_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_reports(path: &Path) -> Vec<ReportJson> {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn sorted_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

const SMALL_RUN: [&str; 14] = [
    "--set", "n=6", "--set", "d=4", "--set", "batch_size=3", "--set", "loss.family=dcl", "--set", "restarts=3", "--set",
    "opt.record_every=5", "--set", "opt.step_size=0.1",
];

#[test]
fn empty_config_lists_required_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.txt");
    fs::write(&cfg, "# nothing here\n").unwrap();
    let err = ExperimentConfig::load(Some(&cfg), &[]).unwrap_err();
    assert!(matches!(err, LabError::Config(_)));
    let msg = err.to_string();
    for key in ["n", "d", "loss.family"] {
        assert!(msg.contains(key), "{msg}");
    }
    assert_eq!(negsim(&["--config", dir_str(&cfg), "run"]), 2);
}

#[test]
fn config_errors_exit_two() {
    assert_eq!(negsim(&["--set", "n=4", "--set", "d=3", "--set", "loss.family=nope", "run"]), 2);
    assert_eq!(negsim(&["--set", "n=4", "--set", "d=3", "--set", "loss.family=simclr", "--set", "bogus=1", "run"]), 2);
    assert_eq!(negsim(&["--set", "n=5", "--set", "d=3", "--set", "batch_size=2", "--set", "loss.family=simclr", "run"]), 2);
    assert_eq!(negsim(&["--config", "/nonexistent/negsim.txt", "run"]), 3);
    assert_eq!(negsim(&["frobnicate"]), 2);
}

#[test]
fn figure2_run_writes_artifacts_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f2");
    assert_eq!(negsim(&["--out", dir_str(&out), "--set", "preset=figure2", "run"]), 0);
    for label in ["full", "coaxial", "orthogonal"] {
        let traj = io::read_trajectory(fs::File::open(out.join(format!("trajectory_{label}.csv"))).unwrap()).unwrap();
        assert!(!traj.is_empty());
        let e = io::read_embeddings(&out, &format!("embeddings_{label}")).unwrap();
        assert_eq!((e.n(), e.d()), (4, 3));
    }
    let reports = read_reports(&out.join("checks.json"));
    assert!(reports.iter().all(|r| r.passed));
    assert!(reports.iter().any(|r| r.name == "coaxial/figure2_neg_var"));
    let advisory: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("advisory.json")).unwrap()).unwrap();
    assert_eq!(advisory.as_array().unwrap().len(), 3);
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("final_stats.json")).unwrap()).unwrap();
    assert!(stats.to_string().contains("neg_var"));
    let cfg = ExperimentConfig::load(Some(&out.join("config.txt")), &[]).unwrap();
    assert_eq!((cfg.n, cfg.d, cfg.batch_size), (4, 3, 2));
    assert_eq!(runner::run(&cfg).unwrap().len(), 3);
}

#[test]
fn identical_seed_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let mut args: Vec<&str> = SMALL_RUN.to_vec();
    args.extend(["--seed", "11", "run"]);
    let with_out = |out: &Path, workers: &str| {
        let mut v = vec!["--out", dir_str(out), "--workers", workers];
        v.extend(args.iter().copied());
        negsim(&v)
    };
    let first = with_out(&a, "1");
    assert_eq!(with_out(&b, "1"), first);
    assert_eq!(with_out(&c, "4"), first);
    let out_a = sorted_files(&a);
    let out_a: Vec<_> = out_a.into_iter().filter(|(n, _)| n != "config.txt").collect();
    for other in [&b, &c] {
        let o: Vec<_> = sorted_files(other).into_iter().filter(|(n, _)| n != "config.txt").collect();
        assert_eq!(out_a, o);
    }
}

#[test]
fn different_seed_changes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, out: &Path| {
        let mut v = vec!["--out", dir_str(out), "--seed", seed];
        v.extend(SMALL_RUN);
        v.extend(["--set", "restarts=1", "run"]);
        negsim(&v);
        fs::read(out.join("trajectory.csv")).unwrap()
    };
    assert_ne!(run("1", &dir.path().join("x")), run("2", &dir.path().join("y")));
}

#[test]
fn trajectory_csv_round_trips_at_twelve_digits() {
    let mut overrides: Vec<String> = SMALL_RUN.chunks(2).map(|c| c[1].to_string()).collect();
    overrides.push("opt.seed=5".into());
    let cfg = ExperimentConfig::load(None, &overrides).unwrap();
    let out = runner::solve(&cfg).unwrap();
    let mut buf = Vec::new();
    io::write_trajectory(&mut buf, &out.trajectory).unwrap();
    let back = io::read_trajectory(buf.as_slice()).unwrap();
    assert_eq!(back.len(), out.trajectory.len());
    let close = |a: f64, b: f64| (a - b).abs() <= 5e-12 * a.abs().max(b.abs()) || a == b;
    for (r, rec) in back.iter().zip(&out.trajectory) {
        let orig = io::TrajectoryRow::from(rec);
        assert_eq!(r.step, orig.step);
        for (x, y) in [
            (r.loss, orig.loss),
            (r.pos_mean, orig.pos_mean),
            (r.pos_var, orig.pos_var),
            (r.neg_mean, orig.neg_mean),
            (r.neg_var, orig.neg_var),
            (r.within_mean, orig.within_mean),
            (r.within_var, orig.within_var),
            (r.grad_norm, orig.grad_norm),
        ] {
            assert!(close(x, y), "{x} vs {y}");
        }
    }
    let mut again = Vec::new();
    let recs: Vec<_> = out.trajectory.clone();
    io::write_trajectory(&mut again, &recs).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn sweep_csv_round_trips() {
    let mut overrides: Vec<String> = SMALL_RUN.chunks(2).map(|c| c[1].to_string()).collect();
    overrides.push("restarts=1".into());
    let cfg = ExperimentConfig::load(None, &overrides).unwrap();
    let result = runner::sweep(&cfg, SweepAxis::Temperature, &[0.2, 0.5]).unwrap();
    let rows = result.rows();
    let mut buf = Vec::new();
    io::write_sweep(&mut buf, &rows).unwrap();
    let back = io::read_sweep(buf.as_slice()).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in back.iter().zip(&rows) {
        assert_eq!((a.axis.as_str(), a.value, a.passed_checks.as_str()), (b.axis.as_str(), b.value, b.passed_checks.as_str()));
        for (x, y) in [(a.pos_mean, b.pos_mean), (a.neg_mean, b.neg_mean), (a.neg_var, b.neg_var), (a.within_mean, b.within_mean)] {
            assert!((x - y).abs() <= 5e-12 * x.abs().max(y.abs()) || x == y);
        }
    }
}

#[test]
fn single_value_sweep_matches_run() {
    let mut overrides: Vec<String> = SMALL_RUN.chunks(2).map(|c| c[1].to_string()).collect();
    overrides.push("opt.seed=3".into());
    let cfg = ExperimentConfig::load(None, &overrides).unwrap();
    let run = runner::run(&cfg).unwrap().remove(0);
    let sweep = runner::sweep(&cfg, SweepAxis::BatchSize, &[3.0]).unwrap();
    let point = sweep.points[0].result.as_ref().unwrap();
    assert_eq!(point.outcome.embeddings, run.outcome.embeddings);
    assert_eq!(point.outcome.final_loss, run.outcome.final_loss);
    assert_eq!(point.checks, run.checks);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["--out", dir_str(dir.path())];
    args.extend(SMALL_RUN);
    args.extend(["sweep", "--axis", "batch_size", "--values", "3,6"]);
    let (code, stdout) = negsim_output(&args);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.starts_with("axis,value,pos_mean,neg_mean,neg_var,within_mean,passed_checks\n"));
    let rows = io::read_sweep(fs::File::open(dir.path().join("sweep.csv")).unwrap()).unwrap();
    let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    assert_eq!(values, [3.0, 6.0]);
    assert!(rows.iter().all(|r| r.axis == "batch_size" && r.passed_checks.contains('/')));
}

#[test]
fn sweep_rejects_invalid_axis_values() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["--out", dir_str(dir.path())];
    args.extend(SMALL_RUN);
    args.extend(["sweep", "--axis", "batch_size", "--values", "3,4"]);
    assert_eq!(negsim(&args), 2);
    assert!(!dir.path().join("sweep.csv").exists());
}

#[test]
fn batch_size_sweep_variance_nonincreasing_within_bounds() {
    let cfg = ExperimentConfig::load(None, &["preset=variance-sweep".into()]).unwrap();
    let result = runner::sweep(&cfg, SweepAxis::BatchSize, &[2.0, 4.0, 8.0, 16.0, 32.0]).unwrap();
    let mut last = f64::INFINITY;
    for p in &result.points {
        let r = p.result.as_ref().unwrap();
        let s = r.outcome.stats();
        let m = p.value as usize;
        let b = variance_bounds(32, m, 32).unwrap();
        assert!(s.neg_var >= b.lower - 0.02 && s.neg_var <= b.upper + 0.02, "m={m}: {} not in [{}, {}]", s.neg_var, b.lower, b.upper);
        assert!(s.neg_var <= last + 0.02, "m={m}");
        last = s.neg_var;
    }
    assert!(result.passed());
}

#[test]
#[ignore = "does not hold at desk scale: the summed per-batch penalty leaves per-batch rotations free"]
fn lambda_sweep_variance_nonincreasing() {
    let overrides: Vec<String> = [
        "n=8", "d=4", "batch_size=2", "loss.family=simclr", "loss.temperature=0.2", "opt.step_size=0.01",
        "opt.max_steps=50000", "restarts=3",
    ]
    .map(String::from)
    .to_vec();
    let cfg = ExperimentConfig::load(None, &overrides).unwrap();
    let result = runner::sweep(&cfg, SweepAxis::Lambda, &[0.0, 1.0, 10.0, 30.0]).unwrap();
    let vars: Vec<f64> = result.points.iter().map(|p| p.result.as_ref().unwrap().outcome.stats().neg_var).collect();
    assert!(vars.windows(2).all(|w| w[1] <= w[0]), "{vars:?}");
}

#[test]
fn check_all_passes_by_default_and_fails_at_zero_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let ok = dir.path().join("ok");
    assert_eq!(negsim(&["--out", dir_str(&ok), "check-all"]), 0);
    let reports = read_reports(&ok.join("checks.json"));
    assert_eq!(reports.len(), 10);
    assert!(reports.iter().all(|r| r.passed));

    let strict = dir.path().join("strict");
    assert_eq!(negsim(&["--out", dir_str(&strict), "--set", "check.tolerance=0", "check-all"]), 1);
    let reports = read_reports(&strict.join("checks.json"));
    let failed: Vec<&ReportJson> = reports.iter().filter(|r| !r.passed).collect();
    assert!(!failed.is_empty());
    for r in failed {
        assert_eq!(r.tolerance, 0.0);
        assert!(r.margin.is_finite());
        assert!(r.details.contains("cases failed") || !r.details.is_empty());
    }
}

#[test]
fn check_all_passes_across_seeds() {
    for seed in 1..=10 {
        let reports = negsim::battery::check_all(seed, 1000, None).unwrap();
        let failed: Vec<_> = reports.iter().filter(|r| !r.passed).map(|r| (&r.name, &r.details)).collect();
        assert!(failed.is_empty(), "seed {seed}: {failed:?}");
    }
}

#[test]
fn etf_subcommand_writes_a_simplex() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(negsim(&["--out", dir_str(dir.path()), "etf", "--n", "7", "--d", "9"]), 0);
    let (m, view) = io::read_matrix(&dir.path().join("etf_n7_d9.txt")).unwrap();
    assert_eq!(view, 'u');
    assert_eq!((m.rows(), m.cols()), (7, 9));
    assert!(etf_residual(&m) <= 1e-12);
    let (code, stdout) = negsim_output(&["etf", "--n", "3", "--d", "2"]);
    assert_eq!(code, 0);
    assert!(stdout.starts_with("# embeddings n=3 d=2 view=u\n"));
    assert_eq!(stdout.lines().count(), 4);
    assert_eq!(negsim(&["etf", "--n", "7", "--d", "5"]), 2);
}

#[test]
fn grad_check_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    for family in ["info-nce", "siglip", "spectral"] {
        let fam = format!("loss.family={family}");
        let args = ["--out", dir_str(dir.path()), "--set", "n=5", "--set", "d=4", "--set", &fam, "grad-check"];
        assert_eq!(negsim(&args), 0, "{family}");
        let reports = read_reports(&dir.path().join("checks.json"));
        assert_eq!(reports.len(), 20);
    }
}
