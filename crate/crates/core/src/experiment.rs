//! Experiment protocol: scripted runs across problems, seeds and degree
//! limits, with per-run JSONL records and a CSV summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{
    derive_seed, rng_stream, EdgeSelector, EnvironmentEvent, EventScript, ScriptEntry,
};
use crate::policy::PolicyConfig;
use crate::protocol::{AgentId, ExecutionOrder};
use crate::sim::{run_script, RunReport, SimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub max_out_degrees: Vec<usize>,
    /// Number of random problems per degree.
    pub problems: usize,
    pub master_seed: u64,
    pub add_events: usize,
    pub change_events: usize,
    pub remove_events: usize,
    pub inter_event_delay: f64,
    pub algorithm: ExecutionOrder,
    pub baseline_restart: bool,
    pub fault_containment: bool,
    pub output: PathBuf,
    /// Replaces the generated script for every run.
    pub events_script: Option<PathBuf>,
    /// Timers, network and observer settings shared by all runs.
    pub base: SimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: (0..10).collect(),
            max_out_degrees: vec![3, 5, 6],
            problems: 5,
            master_seed: 0,
            add_events: 100,
            change_events: 10,
            remove_events: 10,
            inter_event_delay: 5.0,
            algorithm: ExecutionOrder::TopDown,
            baseline_restart: false,
            fault_containment: true,
            output: PathBuf::from("results"),
            events_script: None,
            base: SimConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.max_out_degrees.is_empty() {
            return bad("at least one max out-degree is required".into());
        }
        if let Some(d) = self.max_out_degrees.iter().find(|&&d| d == 0) {
            return bad(format!("max out-degree must be at least 1, got {d}"));
        }
        if self.problems == 0 {
            return bad("problems must be at least 1".into());
        }
        if self.remove_events > self.add_events {
            return bad(format!(
                "remove_events ({}) exceeds add_events ({})",
                self.remove_events, self.add_events
            ));
        }
        if self.change_events > 0 && self.add_events < 2 {
            return bad("change events need at least two added agents".into());
        }
        if !(self.inter_event_delay > 0.0 && self.inter_event_delay.is_finite()) {
            return bad(format!(
                "inter_event_delay must be positive, got {}",
                self.inter_event_delay
            ));
        }
        self.base.validate()
    }

    pub fn problem_seed(&self, problem: usize) -> u64 {
        derive_seed(self.master_seed, "problem", &[problem as u64])
    }

    pub fn run_seed(&self, seed: u64) -> u64 {
        derive_seed(self.master_seed, "run", &[seed])
    }

    pub fn sim_config(&self, degree: usize, problem: usize, seed: u64) -> Result<SimConfig> {
        let mut cfg = self.base;
        cfg.policy = PolicyConfig::new(degree)?;
        cfg.solver.order = self.algorithm;
        cfg.solver.containment = self.fault_containment;
        cfg.baseline_restart = self.baseline_restart;
        cfg.liveness = !self.baseline_restart;
        cfg.problem_seed = self.problem_seed(problem);
        cfg.run_seed = self.run_seed(seed);
        Ok(cfg)
    }

    pub fn script_for(&self, problem: usize) -> Result<EventScript> {
        match &self.events_script {
            Some(path) => EventScript::from_file(path),
            None => {
                let mut rng = rng_stream(self.problem_seed(problem), "script", &[]);
                Ok(generate_script(
                    self.add_events,
                    self.change_events,
                    self.remove_events,
                    self.inter_event_delay,
                    &mut rng,
                ))
            }
        }
    }

    fn mode_label(&self) -> String {
        if self.baseline_restart {
            format!("{}-baseline", self.algorithm)
        } else {
            self.algorithm.to_string()
        }
    }
}

/// Adds agents `0..adds`, then changes random edges, then removes distinct
/// random agents, one event every `gap` seconds.
pub fn generate_script<R: Rng + ?Sized>(
    adds: usize,
    changes: usize,
    removes: usize,
    gap: f64,
    rng: &mut R,
) -> EventScript {
    let mut events: Vec<EnvironmentEvent> = (0..adds)
        .map(|i| EnvironmentEvent::AddAgent(AgentId(i as u32)))
        .collect();
    events.extend((0..changes).map(|_| EnvironmentEvent::ChangeConstraint(EdgeSelector::Random)));
    let victims = index::sample(rng, adds, removes.min(adds));
    events.extend(
        victims
            .into_iter()
            .map(|v| EnvironmentEvent::RemoveAgent(AgentId(v as u32))),
    );
    EventScript::new(
        events
            .into_iter()
            .enumerate()
            .map(|(k, event)| ScriptEntry {
                at: k as f64 * gap,
                event,
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub degree: usize,
    pub problem: usize,
    pub seed: u64,
    pub total_messages: u64,
    pub event_messages: u64,
    pub solver_messages: u64,
    pub final_cost: f64,
    pub violations: usize,
    pub time_to_stabilize: Option<f64>,
    pub jsonl: PathBuf,
}

impl RunSummary {
    fn from_report(
        report: &RunReport,
        degree: usize,
        problem: usize,
        seed: u64,
        jsonl: PathBuf,
    ) -> Self {
        let last = report.records.last();
        RunSummary {
            degree,
            problem,
            seed,
            total_messages: last.map_or(0, |r| r.total_messages),
            event_messages: last.map_or(0, |r| r.event_messages),
            solver_messages: report.counters.sent.solver(),
            final_cost: last.map_or(0.0, |r| r.global_cost),
            violations: report.violation_count(),
            time_to_stabilize: report.time_to_stabilize(),
            jsonl,
        }
    }
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub mode: String,
    pub degree: usize,
    /// `None` for the row pooling every seed.
    pub seed: Option<u64>,
    pub runs: usize,
    pub total_messages: (f64, f64),
    pub event_messages: (f64, f64),
    pub final_cost: (f64, f64),
}

pub const SUMMARY_HEADER: &str = "mode,max_out_degree,seed,runs,total_messages_mean,total_messages_std,event_messages_mean,event_messages_std,final_cost_mean,final_cost_std";

impl SummaryRow {
    pub fn from_runs(mode: &str, degree: usize, seed: Option<u64>, runs: &[&RunSummary]) -> Self {
        let col = |f: &dyn Fn(&RunSummary) -> f64| {
            mean_std(&runs.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        SummaryRow {
            mode: mode.to_string(),
            degree,
            seed,
            runs: runs.len(),
            total_messages: col(&|r| r.total_messages as f64),
            event_messages: col(&|r| r.event_messages as f64),
            final_cost: col(&|r| r.final_cost),
        }
    }

    pub fn to_csv(&self) -> String {
        let seed = self
            .seed
            .map_or_else(|| "all".to_string(), |s| s.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.mode,
            self.degree,
            seed,
            self.runs,
            self.total_messages.0,
            self.total_messages.1,
            self.event_messages.0,
            self.event_messages.1,
            self.final_cost.0,
            self.final_cost.1
        )
    }
}

pub fn summarize(mode: &str, runs: &[RunSummary]) -> Vec<SummaryRow> {
    let mut degrees: Vec<usize> = runs.iter().map(|r| r.degree).collect();
    degrees.dedup();
    let mut rows = Vec::new();
    for d in degrees {
        let at_degree: Vec<&RunSummary> = runs.iter().filter(|r| r.degree == d).collect();
        let mut seeds: Vec<u64> = at_degree.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        for s in seeds {
            let group: Vec<&RunSummary> =
                at_degree.iter().copied().filter(|r| r.seed == s).collect();
            rows.push(SummaryRow::from_runs(mode, d, Some(s), &group));
        }
        rows.push(SummaryRow::from_runs(mode, d, None, &at_degree));
    }
    rows
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{SUMMARY_HEADER}").expect("writing to a String");
    for r in rows {
        writeln!(out, "{}", r.to_csv()).expect("writing to a String");
    }
    out
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunSummary>,
    pub rows: Vec<SummaryRow>,
    pub summary_path: PathBuf,
}

impl ExperimentOutcome {
    pub fn violations(&self) -> usize {
        self.runs.iter().map(|r| r.violations).sum()
    }
}

pub fn run_file_name(mode: &str, degree: usize, problem: usize, seed: u64) -> String {
    format!("{mode}_d{degree}_p{problem}_s{seed}.jsonl")
}

/// Runs every (degree, problem, seed) combination and writes
/// `<output>/runs/*.jsonl` plus `<output>/summary.csv`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let runs_dir = cfg.output.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    let mode = cfg.mode_label();
    let scripts: Vec<EventScript> = (0..cfg.problems)
        .map(|p| cfg.script_for(p))
        .collect::<Result<_>>()?;
    let mut runs = Vec::new();
    for &degree in &cfg.max_out_degrees {
        for (problem, script) in scripts.iter().enumerate() {
            for &seed in &cfg.seeds {
                let sim = cfg.sim_config(degree, problem, seed)?;
                let report = run_script(sim, script)?;
                let path = runs_dir.join(run_file_name(&mode, degree, problem, seed));
                report.write_jsonl(&path)?;
                let summary = RunSummary::from_report(&report, degree, problem, seed, path);
                log::info!(
                    "degree {degree} problem {problem} seed {seed}: {} messages, cost {}, {} violations",
                    summary.total_messages,
                    summary.final_cost,
                    summary.violations
                );
                runs.push(summary);
            }
        }
    }
    let rows = summarize(&mode, &runs);
    let summary_path = cfg.output.join("summary.csv");
    write_text(&summary_path, &summary_csv(&rows))?;
    Ok(ExperimentOutcome {
        runs,
        rows,
        summary_path,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_script_shape() {
        let mut rng = rng_stream(1, "script", &[]);
        let s = generate_script(100, 10, 10, 5.0, &mut rng);
        assert_eq!(s.len(), 120);
        assert_eq!(s.entries[99].at, 495.0);
        assert_eq!(s.entries[119].at, 595.0);
        let removed: std::collections::BTreeSet<AgentId> = s.entries[110..]
            .iter()
            .map(|e| match e.event {
                EnvironmentEvent::RemoveAgent(a) => a,
                other => panic!("unexpected {other}"),
            })
            .collect();
        assert_eq!(removed.len(), 10);
        assert!(s.entries[100..110]
            .iter()
            .all(|e| e.event == EnvironmentEvent::ChangeConstraint(EdgeSelector::Random)));
    }

    #[test]
    fn validation() {
        let ok = ExperimentConfig::default();
        assert!(ok.validate().is_ok());
        let too_many_removes = ExperimentConfig {
            add_events: 3,
            remove_events: 4,
            change_events: 0,
            ..ExperimentConfig::default()
        };
        assert!(too_many_removes.validate().is_err());
        let no_seeds = ExperimentConfig {
            seeds: vec![],
            ..ExperimentConfig::default()
        };
        assert!(no_seeds.validate().is_err());
        let zero_degree = ExperimentConfig {
            max_out_degrees: vec![3, 0],
            ..ExperimentConfig::default()
        };
        assert!(zero_degree.validate().is_err());
    }

    #[test]
    fn mean_std_oracle() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        // population std is 2; sample std is sqrt(32/7)
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_experiment_has_zero_cost() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            seeds: vec![1],
            max_out_degrees: vec![3],
            problems: 1,
            add_events: 0,
            change_events: 0,
            remove_events: 0,
            output: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.runs.len(), 1);
        assert_eq!(out.runs[0].final_cost, 0.0);
        assert_eq!(out.runs[0].total_messages, 0);
        let csv = std::fs::read_to_string(&out.summary_path).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with(SUMMARY_HEADER));
    }
}
