//! Layering of command-line flags over a TOML file over built-in defaults.

use std::path::{Path, PathBuf};

use clap::Parser;
use digca::experiment::ExperimentConfig;
use digca::protocol::ExecutionOrder;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Parser)]
#[command(
    name = "digca",
    version,
    about = "Run dynamic DCOP hierarchy experiments"
)]
pub struct Args {
    /// TOML file with experiment settings.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run seed; repeat for several. Replaces any seeds from the file.
    #[arg(long = "seed", value_name = "N")]
    pub seeds: Vec<u64>,
    /// Out-degree limit; repeat for several.
    #[arg(long = "max-out-degree", value_name = "N")]
    pub max_out_degrees: Vec<usize>,
    /// topdown, bottomup or none.
    #[arg(long, value_name = "ORDER")]
    pub algorithm: Option<ExecutionOrder>,
    /// Rebuild the hierarchy and re-solve from scratch after each event.
    #[arg(long)]
    pub baseline_restart: bool,
    /// Output directory (default: results).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Use this event script for every run instead of generated ones.
    #[arg(long, value_name = "PATH")]
    pub events_script: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seeds: Option<Vec<u64>>,
    pub max_out_degrees: Option<Vec<usize>>,
    pub problems: Option<usize>,
    pub master_seed: Option<u64>,
    pub add_events: Option<usize>,
    pub change_events: Option<usize>,
    pub remove_events: Option<usize>,
    pub inter_event_delay: Option<f64>,
    pub algorithm: Option<String>,
    pub baseline_restart: Option<bool>,
    pub fault_containment: Option<bool>,
    pub out: Option<PathBuf>,
    pub events_script: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

pub fn resolve(args: &Args) -> Result<ExperimentConfig, String> {
    let file = match &args.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    merge(args, &file)
}

pub fn merge(args: &Args, file: &FileConfig) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::default();
    if let Some(v) = &file.seeds {
        cfg.seeds = v.clone();
    }
    if let Some(v) = &file.max_out_degrees {
        cfg.max_out_degrees = v.clone();
    }
    if let Some(v) = file.problems {
        cfg.problems = v;
    }
    if let Some(v) = file.master_seed {
        cfg.master_seed = v;
    }
    if let Some(v) = file.add_events {
        cfg.add_events = v;
    }
    if let Some(v) = file.change_events {
        cfg.change_events = v;
    }
    if let Some(v) = file.remove_events {
        cfg.remove_events = v;
    }
    if let Some(v) = file.inter_event_delay {
        cfg.inter_event_delay = v;
    }
    if let Some(v) = &file.algorithm {
        cfg.algorithm = v.parse().map_err(|e| format!("algorithm: {e}"))?;
    }
    if let Some(v) = file.baseline_restart {
        cfg.baseline_restart = v;
    }
    if let Some(v) = file.fault_containment {
        cfg.fault_containment = v;
    }
    if let Some(v) = &file.out {
        cfg.output = v.clone();
    }
    if let Some(v) = &file.events_script {
        cfg.events_script = Some(v.clone());
    }

    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds.clone();
    }
    if !args.max_out_degrees.is_empty() {
        cfg.max_out_degrees = args.max_out_degrees.clone();
    }
    if let Some(a) = args.algorithm {
        cfg.algorithm = a;
    }
    // a bare switch can only turn the baseline on
    if args.baseline_restart {
        cfg.baseline_restart = true;
    }
    if let Some(v) = &args.out {
        cfg.output = v.clone();
    }
    if let Some(v) = &args.events_script {
        cfg.events_script = Some(v.clone());
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}
