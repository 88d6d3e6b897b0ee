//! Deterministic discrete-event simulation of agents exchanging messages.
//!
//! A single queue ordered by (time, insertion) drives message deliveries,
//! periodic timers, environment events and observer snapshots, so a run is
//! a pure function of its configuration, script and seeds.

mod engine;
pub mod network;
pub mod queue;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Assignment, ConstraintEdge};
use crate::monitor::{Counters, HierarchySnapshot, MetricsRecord, Violation};
use crate::policy::PolicyConfig;
use crate::protocol::{AgentId, ProtocolTiming};
use crate::solver::SolverConfig;

pub use engine::{run_script, Simulator};
pub use network::{GlobalVisibility, HeavyTail, IdRangeVisibility, NetworkModel, Visibility};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub policy: PolicyConfig,
    pub timing: ProtocolTiming,
    pub keep_alive_period: f64,
    pub inspect_period: f64,
    /// Run the keep-alive exchange and neighbor inspection.
    pub liveness: bool,
    pub solver: SolverConfig,
    /// Debounce window between a solver trigger and the solver run.
    pub settle_delay: f64,
    pub network: NetworkModel,
    /// Simulated time after the last scripted event before the run ends.
    pub final_tail: f64,
    pub probe_interval: f64,
    /// Rebuild the hierarchy and re-solve from scratch after every event.
    pub baseline_restart: bool,
    /// Latest start of the from-scratch solve after an event.
    pub baseline_deadline: f64,
    /// Minimum unchanged span for the hierarchy to count as stable.
    pub stabilization_window: f64,
    pub problem_seed: u64,
    pub run_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            policy: PolicyConfig::default(),
            timing: ProtocolTiming::default(),
            keep_alive_period: 0.5,
            inspect_period: 1.5,
            liveness: true,
            solver: SolverConfig::default(),
            settle_delay: 0.3,
            network: NetworkModel::default(),
            final_tail: 45.0,
            probe_interval: 0.5,
            baseline_restart: false,
            baseline_deadline: 4.5,
            stabilization_window: 10.0,
            problem_seed: 0,
            run_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("connect_period", self.timing.connect_period),
            ("announce_wait", self.timing.announce_wait),
            ("state_timeout", self.timing.state_timeout),
            ("keep_alive_period", self.keep_alive_period),
            ("inspect_period", self.inspect_period),
            ("probe_interval", self.probe_interval),
            ("baseline_deadline", self.baseline_deadline),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        let non_negative = [
            ("settle_delay", self.settle_delay),
            ("final_tail", self.final_tail),
            ("stabilization_window", self.stabilization_window),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.policy.max_out_degree == 0 {
            return Err(Error::InvalidConfig(
                "max_out_degree must be at least 1".into(),
            ));
        }
        self.network.validate().map_err(Error::InvalidConfig)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepViolation {
    pub at: f64,
    pub violation: Violation,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    /// One record per scripted event, or a single record for an empty script.
    pub records: Vec<MetricsRecord>,
    pub event_snapshots: Vec<HierarchySnapshot>,
    /// Periodic hierarchy probes; consecutive identical shapes are collapsed.
    pub probes: Vec<HierarchySnapshot>,
    /// Register-level violations seen right after some handler ran.
    pub step_violations: Vec<StepViolation>,
    pub stuck_active: Vec<(f64, AgentId)>,
    pub counters: Counters,
    pub nearest_key_lookups: u64,
    pub final_snapshot: HierarchySnapshot,
    pub final_assignment: Assignment,
    pub final_edges: Vec<ConstraintEdge>,
    pub final_cost: f64,
    pub last_event_at: Option<f64>,
    pub end_at: f64,
    /// Start of the final unchanged hierarchy after the last event.
    pub stabilized_at: Option<f64>,
    /// Messages still travelling when the run ended.
    pub messages_in_flight: u64,
}

impl RunReport {
    pub fn violation_count(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.violations.len())
            .sum::<usize>()
            + self.step_violations.len()
            + self.stuck_active.len()
    }

    pub fn time_to_stabilize(&self) -> Option<f64> {
        self.stabilized_at
            .map(|t| t - self.last_event_at.unwrap_or(0.0))
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}
