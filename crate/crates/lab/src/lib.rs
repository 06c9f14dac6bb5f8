//! Experiment runner for contrastive-loss embedding geometry.
//!
//! Wraps `negsim_core` with a flat text configuration, seeded runs and
//! sweeps, a fuzzed check battery and CSV/JSON artifacts.

pub mod battery;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod runner;

pub use config::{ExperimentConfig, Preset, SweepAxis};
pub use error::{LabError, Result};
