//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a check failed, 2 configuration error,
//! 3 runtime abort.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use negsim_core::analysis::{finite_difference_check, CheckReport};
use negsim_core::geometry::make_etf;
use negsim_core::optimizer::{loss_increases, random_embeddings, ADVISORY_WINDOW};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::battery::{self, GRAD_FD_STEP, GRAD_REL_TOL};
use crate::config::{self, ExperimentConfig, SweepAxis};
use crate::error::{LabError, Result};
use crate::{io, runner};

#[derive(Debug, Parser)]
#[command(name = "negsim", version, about = "Contrastive-loss embedding geometry experiments")]
pub struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `opt.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `key=value` override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads for restarts and sweep points.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize one configuration (three runs for the figure2 preset).
    Run,
    /// One run per value along an axis.
    Sweep {
        /// batch_size, temperature or lambda; defaults to `sweep.axis`.
        #[arg(long)]
        axis: Option<SweepAxis>,
        /// Comma-separated values; defaults to `sweep.values`.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Fuzzed identity, inequality, gradient and probe battery.
    CheckAll,
    /// Write a simplex ETF matrix file (stdout unless --out is given).
    Etf {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
    },
    /// Finite-difference check of the configured loss over 20 seeds.
    GradCheck,
}

impl Cli {
    fn overrides(&self) -> Vec<String> {
        let mut o = self.set.clone();
        if let Some(s) = self.seed {
            o.push(format!("opt.seed={s}"));
        }
        if let Some(p) = &self.out {
            o.push(format!("output_dir={}", p.display()));
        }
        o
    }

    fn load(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load(self.config.as_deref(), &self.overrides())
    }

    /// For subcommands that ignore the experiment shape: missing required
    /// keys get placeholders.
    fn load_lenient(&self) -> Result<ExperimentConfig> {
        let mut pairs = match &self.config {
            Some(p) => config::parse_pairs(&std::fs::read_to_string(p).map_err(crate::error::io_err(p))?)?,
            None => Default::default(),
        };
        for o in self.overrides() {
            let (k, v) = o.split_once('=').ok_or_else(|| LabError::config(format!("--set expects key=value, got `{o}`")))?;
            pairs.insert(k.trim().to_string(), v.trim().to_string());
        }
        if !pairs.contains_key("preset") {
            for (k, v) in [("n", "4"), ("d", "3"), ("loss.family", "simclr")] {
                pairs.entry(k.to_string()).or_insert_with(|| v.to_string());
            }
        }
        ExperimentConfig::from_pairs(&pairs)
    }
}

fn exit_for(reports: &[CheckReport]) -> i32 {
    i32::from(!reports.iter().all(|c| c.passed))
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    // a closed pipe must not abort the run
    let mut emit = |text: &str| {
        let _ = out.write_all(text.as_bytes());
    };
    match &cli.command {
        Command::Run => {
            let cfg = cli.load()?;
            let results = runner::run(&cfg)?;
            runner::write_run_artifacts(&cfg.output_dir, &cfg, &results)?;
            let mut all = Vec::new();
            for r in &results {
                let s = r.outcome.stats();
                emit(&format!(
                    "{}: loss={:.6} pos_mean={:.6} neg_mean={:.6} neg_var={:.6} grad_norm={:.2e}\n",
                    r.label, r.outcome.final_loss, s.pos_mean, s.neg_mean, s.neg_var, r.outcome.final_grad_norm
                ));
                let rises = loss_increases(&r.outcome.trajectory, ADVISORY_WINDOW);
                if !rises.is_empty() {
                    eprintln!("advisory: {}: loss rose across {} of the {ADVISORY_WINDOW}-step windows", r.label, rises.len());
                }
                all.extend(r.checks.iter().map(|c| CheckReport { name: format!("{}/{}", r.label, c.name), ..c.clone() }));
            }
            emit(&runner::summary_table(&all));
            Ok(exit_for(&all))
        }
        Command::Sweep { axis, values } => {
            let cfg = cli.load()?;
            let axis = axis.or(cfg.sweep.axis).ok_or_else(|| LabError::config("sweep.axis: not set"))?;
            let values = values.clone().unwrap_or_else(|| cfg.sweep.values.clone());
            let result = runner::sweep(&cfg, axis, &values)?;
            runner::write_sweep_artifacts(&cfg.output_dir, &cfg, &result)?;
            let mut csv = Vec::new();
            io::write_sweep(&mut csv, &result.rows())?;
            emit(&String::from_utf8_lossy(&csv));
            let reports = result.reports();
            emit(&runner::summary_table(&reports));
            Ok(exit_for(&reports))
        }
        Command::CheckAll => {
            let cfg = cli.load_lenient()?;
            let reports = battery::check_all(cfg.opt.seed, cfg.check.fuzz_cases, cfg.check.tolerance)?;
            io::create_dir(&cfg.output_dir)?;
            io::write_text(&cfg.output_dir.join("checks.json"), &io::reports_json(&reports)?)?;
            emit(&runner::summary_table(&reports));
            Ok(exit_for(&reports))
        }
        Command::Etf { n, d } => {
            let cfg = cli.load_lenient()?;
            let (n, d) = (n.unwrap_or(cfg.n), d.unwrap_or(cfg.d));
            let m = make_etf(n, d)?;
            match &cli.out {
                Some(dir) => {
                    io::create_dir(dir)?;
                    io::write_matrix(&dir.join(format!("etf_n{n}_d{d}.txt")), &m, 'u')?;
                }
                None => emit(&io::format_matrix(&m, 'u')),
            }
            Ok(0)
        }
        Command::GradCheck => {
            let cfg = cli.load()?;
            let spec = cfg.loss_spec()?;
            let tol = cfg.check.tolerance.unwrap_or(GRAD_REL_TOL);
            let idx: Vec<usize> = (0..cfg.n).collect();
            let mut reports = Vec::new();
            for s in 0..20u64 {
                let seed = cfg.opt.seed.wrapping_add(s);
                let e = random_embeddings(cfg.n, cfg.d, &mut ChaCha8Rng::seed_from_u64(seed))?;
                let g = finite_difference_check(&spec, &e, &idx, GRAD_FD_STEP)?;
                reports.push(CheckReport {
                    name: format!("grad_check/seed={seed}"),
                    passed: g.max_rel_error <= tol,
                    lhs: g.max_rel_error,
                    rhs: 0.0,
                    margin: g.max_rel_error,
                    tolerance: tol,
                    details: format!("{} max abs error {:.3e}", spec.family().name(), g.max_abs_error),
                });
            }
            io::create_dir(&cfg.output_dir)?;
            io::write_text(&cfg.output_dir.join("checks.json"), &io::reports_json(&reports)?)?;
            emit(&runner::summary_table(&reports));
            Ok(exit_for(&reports))
        }
    }
}

/// Parses `args` and runs the command with stdout as the report stream;
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_output(args, &mut std::io::stdout())
}

/// As [`main_with_args`], writing reports to `out`.
pub fn run_with_output<I, T>(args: I, out: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if cli.workers == 0 {
        eprintln!("error: --workers must be at least 1");
        return 2;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 3;
        }
    };
    match pool.install(|| execute(&cli, out)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
