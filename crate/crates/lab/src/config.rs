//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Keys use dotted prefixes
//! (`loss.temperature`, `opt.step_size`). A `preset` key seeds every other
//! field before the remaining keys are applied, regardless of line order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use negsim_core::geometry::{batch_etf_configuration, make_etf, BatchLayout};
use negsim_core::loss::SiglipWeight;
use negsim_core::optimizer::{Init, Schedule};
use negsim_core::{EmbeddingSet, LossFamily, LossSpec, OptimizerConfig};

use crate::error::{io_err, LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Figure2,
    VarianceSweep,
    TemperatureSweep,
    ExcessSeparation,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Figure2, Preset::VarianceSweep, Preset::TemperatureSweep, Preset::ExcessSeparation];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Figure2 => "figure2",
            Preset::VarianceSweep => "variance-sweep",
            Preset::TemperatureSweep => "temperature-sweep",
            Preset::ExcessSeparation => "excess-separation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Random,
    Etf,
    Coaxial,
    Orthogonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    BatchSize,
    Temperature,
    Lambda,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::BatchSize => "batch_size",
            SweepAxis::Temperature => "temperature",
            SweepAxis::Lambda => "lambda",
        }
    }
}

macro_rules! named_enum {
    ($ty:ty, $what:literal, { $($text:literal => $val:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($val),)+
                    _ => Err(format!(concat!("unknown ", $what, " `{}`; expected one of: {}"), s, [$($text),+].join(", "))),
                }
            }
        }
    };
}

named_enum!(Preset, "preset", {
    "figure2" => Preset::Figure2,
    "variance-sweep" => Preset::VarianceSweep,
    "temperature-sweep" => Preset::TemperatureSweep,
    "excess-separation" => Preset::ExcessSeparation,
});
named_enum!(InitKind, "init", {
    "random" => InitKind::Random,
    "etf" => InitKind::Etf,
    "coaxial" => InitKind::Coaxial,
    "orthogonal" => InitKind::Orthogonal,
});
named_enum!(SweepAxis, "sweep axis", {
    "batch_size" => SweepAxis::BatchSize,
    "temperature" => SweepAxis::Temperature,
    "lambda" => SweepAxis::Lambda,
});

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub family: String,
    pub c1: Option<bool>,
    pub c2: Option<bool>,
    pub temperature: f64,
    pub bias: f64,
    pub vrns_lambda: f64,
    /// Defaults to `n`.
    pub n_global: Option<usize>,
    pub siglip_weight: SiglipWeight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub step_size: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub seed: u64,
    pub init: InitKind,
    pub noise_sigma: f64,
    pub record_every: usize,
    pub schedule: Schedule,
    pub max_halvings: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckConfig {
    /// Replaces every pinned tolerance of the check battery when set.
    pub tolerance: Option<f64>,
    /// Run optimum checks on unconverged runs too.
    pub allow_unconverged: bool,
    pub fuzz_cases: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub axis: Option<SweepAxis>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n: usize,
    pub d: usize,
    pub batch_size: usize,
    pub loss: LossConfig,
    pub opt: OptConfig,
    pub restarts: usize,
    pub preset: Option<Preset>,
    pub output_dir: PathBuf,
    pub check: CheckConfig,
    pub sweep: SweepConfig,
}

/// Keys that must be present when no preset is given.
pub const REQUIRED_KEYS: [&str; 3] = ["n", "d", "loss.family"];

impl Default for ExperimentConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        Self {
            n: 0,
            d: 0,
            batch_size: 0,
            loss: LossConfig {
                family: String::new(),
                c1: None,
                c2: None,
                temperature: 0.2,
                bias: 0.0,
                vrns_lambda: 0.0,
                n_global: None,
                siglip_weight: SiglipWeight::GlobalSize,
            },
            opt: OptConfig {
                step_size: opt.step_size,
                max_steps: opt.max_steps,
                grad_tol: opt.grad_tol,
                seed: opt.seed,
                init: InitKind::Random,
                noise_sigma: opt.noise_sigma,
                record_every: opt.record_every,
                schedule: opt.schedule,
                max_halvings: opt.max_halvings,
            },
            restarts: 5,
            preset: None,
            output_dir: PathBuf::from("out"),
            check: CheckConfig { tolerance: None, allow_unconverged: false, fuzz_cases: 1000 },
            sweep: SweepConfig { axis: None, values: Vec::new() },
        }
    }
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let mut c = Self { preset: Some(p), ..Self::default() };
        c.loss.family = "simclr".into();
        c.loss.temperature = 0.2;
        match p {
            Preset::Figure2 => {
                (c.n, c.d, c.batch_size) = (4, 3, 2);
                c.restarts = 1;
            }
            Preset::VarianceSweep => {
                (c.n, c.d, c.batch_size) = (32, 32, 2);
                c.opt.step_size = 2.0;
                c.restarts = 3;
                c.sweep = SweepConfig { axis: Some(SweepAxis::BatchSize), values: vec![2.0, 4.0, 8.0, 16.0, 32.0] };
            }
            Preset::TemperatureSweep => {
                (c.n, c.d, c.batch_size) = (16, 12, 4);
                c.restarts = 3;
                c.sweep = SweepConfig { axis: Some(SweepAxis::Temperature), values: vec![0.1, 0.2, 0.5, 1.0] };
            }
            Preset::ExcessSeparation => {
                (c.n, c.d, c.batch_size) = (16, 16, 16);
                c.loss.family = "siglip".into();
                c.loss.temperature = 10.0;
                c.loss.bias = -5.0;
                c.opt.step_size = 0.05;
                c.restarts = 1;
            }
        }
        c
    }

    /// Parses a config file and applies `overrides` (`key=value`) on top.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut pairs = match path {
            Some(p) => parse_pairs(&std::fs::read_to_string(p).map_err(io_err(p))?)?,
            None => BTreeMap::new(),
        };
        for o in overrides {
            let (k, v) = split_pair(o).ok_or_else(|| LabError::config(format!("--set expects key=value, got `{o}`")))?;
            pairs.insert(k, v);
        }
        Self::from_pairs(&pairs)
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = match pairs.get("preset") {
            Some(p) => Self::preset(parse_value("preset", p)?),
            None => {
                let missing: Vec<&str> = REQUIRED_KEYS.iter().copied().filter(|k| !pairs.contains_key(*k)).collect();
                if !missing.is_empty() {
                    return Err(LabError::config(format!("missing required keys: {}", missing.join(", "))));
                }
                Self::default()
            }
        };
        let mut batch_given = false;
        for (k, v) in pairs {
            cfg.apply(k, v)?;
            batch_given |= k == "batch_size";
        }
        if !batch_given && cfg.preset.is_none() {
            cfg.batch_size = cfg.n;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "preset" => {}
            "n" => self.n = parse_value(key, v)?,
            "d" => self.d = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "restarts" => self.restarts = parse_value(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "loss.family" => self.loss.family = v.to_string(),
            "loss.c1" => self.loss.c1 = Some(parse_bit(key, v)?),
            "loss.c2" => self.loss.c2 = Some(parse_bit(key, v)?),
            "loss.temperature" => self.loss.temperature = parse_value(key, v)?,
            "loss.bias" => self.loss.bias = parse_value(key, v)?,
            "loss.vrns_lambda" => self.loss.vrns_lambda = parse_value(key, v)?,
            "loss.n_global" => self.loss.n_global = Some(parse_value(key, v)?),
            "loss.siglip_weight" => {
                self.loss.siglip_weight = match v {
                    "global" => SiglipWeight::GlobalSize,
                    "batch" => SiglipWeight::BatchSize,
                    _ => return Err(LabError::config(format!("{key}: expected `global` or `batch`, got `{v}`"))),
                }
            }
            "opt.step_size" => self.opt.step_size = parse_value(key, v)?,
            "opt.max_steps" => self.opt.max_steps = parse_value(key, v)?,
            "opt.grad_tol" => self.opt.grad_tol = parse_value(key, v)?,
            "opt.seed" => self.opt.seed = parse_value(key, v)?,
            "opt.init" => self.opt.init = parse_value(key, v)?,
            "opt.noise_sigma" => self.opt.noise_sigma = parse_value(key, v)?,
            "opt.record_every" => self.opt.record_every = parse_value(key, v)?,
            "opt.schedule" => {
                self.opt.schedule = match v {
                    "summed" => Schedule::Summed,
                    "round-robin" => Schedule::RoundRobin,
                    _ => return Err(LabError::config(format!("{key}: expected `summed` or `round-robin`, got `{v}`"))),
                }
            }
            "opt.max_halvings" => self.opt.max_halvings = parse_value(key, v)?,
            "check.tolerance" => self.check.tolerance = Some(parse_value(key, v)?),
            "check.allow_unconverged" => self.check.allow_unconverged = parse_value(key, v)?,
            "check.fuzz_cases" => self.check.fuzz_cases = parse_value(key, v)?,
            "sweep.axis" => self.sweep.axis = Some(parse_value(key, v)?),
            "sweep.values" => {
                self.sweep.values = v
                    .split(',')
                    .map(|x| parse_value::<f64>(key, x.trim()))
                    .collect::<Result<Vec<_>>>()?
            }
            _ => return Err(LabError::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Cross-field checks; the message names the offending field.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(LabError::config(msg));
        if self.n < 2 {
            return fail(format!("n: need at least 2 instances, got {}", self.n));
        }
        if self.d < 2 {
            return fail(format!("d: need at least 2 dimensions, got {}", self.d));
        }
        if self.batch_size == 0 || !self.n.is_multiple_of(self.batch_size) {
            return fail(format!("batch_size: {} does not divide n = {}", self.batch_size, self.n));
        }
        if self.restarts == 0 {
            return fail("restarts: must be at least 1".into());
        }
        let spec = self.loss_spec()?;
        if self.batch_size < 2 && matches!(spec.family().form(), negsim_core::loss::LossForm::InfoSym) {
            return fail(format!("batch_size: {} needs at least 2 instances per batch", spec.family().name()));
        }
        self.optimizer_config()?.validate()?;
        if let Some(axis) = self.sweep.axis {
            if self.sweep.values.is_empty() {
                return fail("sweep.values: empty list".into());
            }
            for &x in &self.sweep.values {
                self.at_point(axis, x)?;
            }
        }
        if let Some(t) = self.check.tolerance {
            if t.is_nan() || t < 0.0 {
                return fail(format!("check.tolerance: must be nonnegative, got {t}"));
            }
        }
        Ok(())
    }

    /// Copy with `axis` set to `value`, validated.
    pub fn at_point(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut c = self.clone();
        match axis {
            SweepAxis::BatchSize => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(LabError::config(format!("sweep.values: batch size {value} is not a positive integer")));
                }
                c.batch_size = value as usize;
            }
            SweepAxis::Temperature => c.loss.temperature = value,
            SweepAxis::Lambda => c.loss.vrns_lambda = value,
        }
        c.sweep.axis = None;
        c.validate()?;
        Ok(c)
    }

    pub fn n_global(&self) -> usize {
        self.loss.n_global.unwrap_or(self.n)
    }

    pub fn loss_spec(&self) -> Result<LossSpec> {
        let family = LossFamily::from_name(&self.loss.family).ok_or_else(|| {
            let names: Vec<&str> = LossFamily::NAMED.iter().map(|f| f.name()).collect();
            LabError::config(format!("loss.family: unknown `{}`; expected one of: {}", self.loss.family, names.join(", ")))
        })?;
        let mut spec = LossSpec::new(family, self.loss.temperature, self.n_global())?;
        if self.loss.c1.is_some() || self.loss.c2.is_some() {
            let (c1, c2) = spec.selectors();
            spec = spec.with_selectors(self.loss.c1.unwrap_or(c1), self.loss.c2.unwrap_or(c2))?;
        }
        if spec.uses_bias() {
            spec = spec.with_bias(self.loss.bias)?;
        } else if self.loss.bias != 0.0 {
            return Err(LabError::config(format!("loss.bias: `{}` takes no bias", self.loss.family)));
        }
        if self.loss.vrns_lambda != 0.0 {
            spec = spec.with_vrns(self.loss.vrns_lambda)?;
        }
        Ok(spec.with_siglip_weight(self.loss.siglip_weight))
    }

    pub fn warm_start(&self) -> Result<Option<EmbeddingSet>> {
        let (n, d, m) = (self.n, self.d, self.batch_size);
        Ok(match self.opt.init {
            InitKind::Random => None,
            InitKind::Etf => Some(EmbeddingSet::self_paired(make_etf(n, d)?)?),
            InitKind::Coaxial => Some(batch_etf_configuration(n / m, m, d, BatchLayout::Coaxial)?),
            InitKind::Orthogonal => Some(batch_etf_configuration(n / m, m, d, BatchLayout::Orthogonal)?),
        })
    }

    pub fn optimizer_config(&self) -> Result<OptimizerConfig> {
        let o = &self.opt;
        Ok(OptimizerConfig {
            step_size: o.step_size,
            max_steps: o.max_steps,
            grad_tol: o.grad_tol,
            seed: o.seed,
            init: self.warm_start()?.map_or(Init::RandomGaussian, Init::WarmStart),
            noise_sigma: o.noise_sigma,
            record_every: o.record_every,
            schedule: o.schedule,
            max_halvings: o.max_halvings,
        })
    }

    /// Every field as `key = value` lines, parseable by [`ExperimentConfig::from_pairs`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        if let Some(p) = self.preset {
            line("preset", p.name().into());
        }
        line("n", self.n.to_string());
        line("d", self.d.to_string());
        line("batch_size", self.batch_size.to_string());
        line("restarts", self.restarts.to_string());
        line("output_dir", self.output_dir.display().to_string());
        line("loss.family", self.loss.family.clone());
        if let Some(c) = self.loss.c1 {
            line("loss.c1", (c as u8).to_string());
        }
        if let Some(c) = self.loss.c2 {
            line("loss.c2", (c as u8).to_string());
        }
        line("loss.temperature", self.loss.temperature.to_string());
        line("loss.bias", self.loss.bias.to_string());
        line("loss.vrns_lambda", self.loss.vrns_lambda.to_string());
        if let Some(n) = self.loss.n_global {
            line("loss.n_global", n.to_string());
        }
        let w = match self.loss.siglip_weight {
            SiglipWeight::GlobalSize => "global",
            SiglipWeight::BatchSize => "batch",
        };
        line("loss.siglip_weight", w.into());
        line("opt.step_size", self.opt.step_size.to_string());
        line("opt.max_steps", self.opt.max_steps.to_string());
        line("opt.grad_tol", self.opt.grad_tol.to_string());
        line("opt.seed", self.opt.seed.to_string());
        let init = match self.opt.init {
            InitKind::Random => "random",
            InitKind::Etf => "etf",
            InitKind::Coaxial => "coaxial",
            InitKind::Orthogonal => "orthogonal",
        };
        line("opt.init", init.into());
        line("opt.noise_sigma", self.opt.noise_sigma.to_string());
        line("opt.record_every", self.opt.record_every.to_string());
        let schedule = match self.opt.schedule {
            Schedule::Summed => "summed",
            Schedule::RoundRobin => "round-robin",
        };
        line("opt.schedule", schedule.into());
        line("opt.max_halvings", self.opt.max_halvings.to_string());
        if let Some(t) = self.check.tolerance {
            line("check.tolerance", t.to_string());
        }
        line("check.allow_unconverged", self.check.allow_unconverged.to_string());
        line("check.fuzz_cases", self.check.fuzz_cases.to_string());
        if let Some(a) = self.sweep.axis {
            line("sweep.axis", a.name().into());
            let vals: Vec<String> = self.sweep.values.iter().map(|v| v.to_string()).collect();
            line("sweep.values", vals.join(","));
        }
        s
    }
}

fn split_pair(s: &str) -> Option<(String, String)> {
    let (k, v) = s.split_once('=')?;
    let (k, v) = (k.trim(), v.trim());
    (!k.is_empty()).then(|| (k.to_string(), v.to_string()))
}

/// `key = value` lines; blank lines and `#` comments are skipped, a repeated
/// key is an error.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = split_pair(line).ok_or_else(|| LabError::config(format!("line {}: expected `key = value`, got `{raw}`", no + 1)))?;
        if out.insert(k.clone(), v).is_some() {
            return Err(LabError::config(format!("line {}: key `{k}` given twice", no + 1)));
        }
    }
    Ok(out)
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| LabError::config(format!("{key}: cannot parse `{v}`: {e}")))
}

fn parse_bit(key: &str, v: &str) -> Result<bool> {
    match v {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        _ => Err(LabError::config(format!("{key}: expected 0 or 1, got `{v}`"))),
    }
}
