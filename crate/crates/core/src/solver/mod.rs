//! DCOP solvers hosted by the agents of the interaction graph.
//!
//! Two strategies share one per-agent state: a greedy top-down pass started
//! when a child confirms its parent, and a bottom-up utility propagation
//! started when a parent accepts a child. Both only touch local registers,
//! the agent's incident constraints and messages exchanged with direct
//! neighbors.

pub mod bottomup;
pub mod topdown;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{Domain, Environment};
use crate::protocol::{Action, AgentId, ExecutionOrder, GraphMessage, MessageBody};

pub use bottomup::{
    build_util_table, choose_root_value, choose_value_from_util, should_propagate, UtilEntry,
    UtilTable,
};
pub use topdown::{analytic_refine, local_cost, top_down_assign, Choice, LocalTerm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SolverMessage {
    Util(UtilTable),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TriggerReason {
    ChildAdded,
    ParentAssigned,
    NeighborRemoved,
    ConstraintChanged,
}

impl TriggerReason {
    pub const ALL: [TriggerReason; 4] = [
        TriggerReason::ChildAdded,
        TriggerReason::ParentAssigned,
        TriggerReason::NeighborRemoved,
        TriggerReason::ConstraintChanged,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TriggerReason::ChildAdded => "ChildAdded",
            TriggerReason::ParentAssigned => "ParentAssigned",
            TriggerReason::NeighborRemoved => "NeighborRemoved",
            TriggerReason::ConstraintChanged => "ConstraintChanged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverTrigger {
    pub agent: AgentId,
    pub reason: TriggerReason,
    pub at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub order: ExecutionOrder,
    /// Add the analytic stationary point to top-down candidates.
    pub refine: bool,
    /// Suppress UTIL/VALUE messages that would not change the receiver.
    pub containment: bool,
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            order: ExecutionOrder::TopDown,
            refine: true,
            containment: true,
            tolerance: 1e-9,
        }
    }
}

/// What the solver may see of its agent: its own links and the constraints
/// incident to it.
#[derive(Debug, Clone, Copy)]
pub struct LocalView<'a> {
    pub id: AgentId,
    pub parent: Option<AgentId>,
    pub children: &'a BTreeSet<AgentId>,
    pub env: &'a Environment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub domain: Domain,
    pub value: f64,
    /// Last value received from the current parent.
    pub parent_value: Option<f64>,
    /// Domain samples of the current parent, learned at link time.
    pub parent_samples: Option<Vec<f64>>,
    pub child_tables: BTreeMap<AgentId, UtilTable>,
    pub last_sent_util: Option<UtilTable>,
    pub last_value_sent: BTreeMap<AgentId, f64>,
    pub runs: u64,
    pub deferred: u64,
    pub nearest_key_lookups: u64,
}

impl SolverState {
    pub fn new(domain: Domain) -> Self {
        let value = domain.samples.first().copied().unwrap_or(0.0);
        SolverState {
            domain,
            value,
            parent_value: None,
            parent_samples: None,
            child_tables: BTreeMap::new(),
            last_sent_util: None,
            last_value_sent: BTreeMap::new(),
            runs: 0,
            deferred: 0,
            nearest_key_lookups: 0,
        }
    }

    pub fn on_parent_linked(&mut self, parent_samples: Vec<f64>) {
        self.parent_samples = Some(parent_samples);
        self.parent_value = None;
        self.last_sent_util = None;
    }

    /// Clears everything learned from `j`.
    pub fn forget(&mut self, j: AgentId, was_parent: bool) {
        self.child_tables.remove(&j);
        self.last_value_sent.remove(&j);
        if was_parent {
            self.parent_samples = None;
            self.parent_value = None;
            self.last_sent_util = None;
        }
    }

    /// Drops all neighbor knowledge; the current value stays.
    pub fn reset_links(&mut self) {
        self.parent_value = None;
        self.parent_samples = None;
        self.child_tables.clear();
        self.last_sent_util = None;
        self.last_value_sent.clear();
    }

    pub fn run(&mut self, cfg: &SolverConfig, view: LocalView<'_>, out: &mut Vec<Action>) {
        self.runs += 1;
        match cfg.order {
            ExecutionOrder::TopDown => self.top_down_step(cfg, view, out),
            ExecutionOrder::BottomUp => self.bottom_up_step(cfg, view, out),
            ExecutionOrder::None => {}
        }
    }

    pub fn on_message(
        &mut self,
        from: AgentId,
        msg: &SolverMessage,
        cfg: &SolverConfig,
        view: LocalView<'_>,
        out: &mut Vec<Action>,
    ) {
        match (cfg.order, msg) {
            (ExecutionOrder::TopDown, SolverMessage::Value(v)) if view.parent == Some(from) => {
                self.parent_value = Some(*v);
                self.runs += 1;
                self.top_down_step(cfg, view, out);
            }
            (ExecutionOrder::BottomUp, SolverMessage::Util(t)) if view.children.contains(&from) => {
                self.child_tables.insert(from, t.clone());
                self.last_value_sent.remove(&from);
                self.runs += 1;
                self.bottom_up_step(cfg, view, out);
            }
            (ExecutionOrder::BottomUp, SolverMessage::Value(v)) if view.parent == Some(from) => {
                self.parent_value = Some(*v);
                self.runs += 1;
                let value = match self.local_table(view) {
                    Some(table) => self.pick(*v, &table),
                    None => self.root_choice(view),
                };
                self.value_phase(value, cfg, view, out);
            }
            _ => log::debug!(
                "agent {}: solver message from non-neighbor {}",
                view.id,
                from
            ),
        }
    }

    fn send_value(&mut self, to: AgentId, value: f64, view: LocalView<'_>, out: &mut Vec<Action>) {
        self.last_value_sent.insert(to, value);
        out.push(Action::Send {
            to,
            msg: GraphMessage::new(view.id, MessageBody::Solver(SolverMessage::Value(value))),
        });
    }

    fn top_down_step(&mut self, cfg: &SolverConfig, view: LocalView<'_>, out: &mut Vec<Action>) {
        let mut terms = Vec::new();
        if let (Some(p), Some(pv)) = (view.parent, self.parent_value) {
            if let Some(e) = view.env.edge(view.id, p) {
                terms.push(LocalTerm {
                    coefficients: e.coefficients,
                    self_is_x: e.key.lo == view.id,
                    neighbor_value: pv,
                });
            }
        }
        let alphas: Vec<f64> = view
            .env
            .incident(view.id)
            .map(|e| {
                if e.key.lo == view.id {
                    e.coefficients.a
                } else {
                    e.coefficients.c
                }
            })
            .collect();
        let choice = top_down_assign(&self.domain.samples, &terms, &alphas, cfg.refine);
        self.value = choice.value;
        for &c in view.children {
            self.send_value(c, choice.value, view, out);
        }
    }

    /// Own table for the parent using whatever child tables are at hand.
    fn local_table(&self, view: LocalView<'_>) -> Option<UtilTable> {
        let p = view.parent?;
        let samples = self.parent_samples.as_ref()?;
        let edge = view.env.edge(view.id, p)?;
        let tables: Vec<&UtilTable> = view
            .children
            .iter()
            .filter_map(|c| self.child_tables.get(c))
            .collect();
        Some(build_util_table(
            view.id,
            &self.domain.samples,
            samples,
            edge,
            &tables,
        ))
    }

    fn root_choice(&self, view: LocalView<'_>) -> f64 {
        let tables: Vec<&UtilTable> = view
            .children
            .iter()
            .filter_map(|c| self.child_tables.get(c))
            .collect();
        choose_root_value(&self.domain.samples, &tables).unwrap_or(self.value)
    }

    fn pick(&mut self, parent_value: f64, table: &UtilTable) -> f64 {
        match choose_value_from_util(parent_value, table) {
            Some((v, exact)) => {
                if !exact {
                    self.nearest_key_lookups += 1;
                    log::warn!("parent value {parent_value} is not a table key, using nearest");
                }
                v
            }
            None => self.value,
        }
    }

    fn bottom_up_step(&mut self, cfg: &SolverConfig, view: LocalView<'_>, out: &mut Vec<Action>) {
        if !view
            .children
            .iter()
            .all(|c| self.child_tables.contains_key(c))
        {
            self.deferred += 1;
            return;
        }
        if view.parent.is_none() {
            let v = self.root_choice(view);
            self.value_phase(v, cfg, view, out);
            return;
        }
        let Some(table) = self.local_table(view) else {
            self.deferred += 1;
            return;
        };
        let tol = if cfg.containment { cfg.tolerance } else { -1.0 };
        if should_propagate(self.last_sent_util.as_ref(), &table, tol) {
            out.push(Action::Send {
                to: view.parent.expect("checked above"),
                msg: GraphMessage::new(
                    view.id,
                    MessageBody::Solver(SolverMessage::Util(table.clone())),
                ),
            });
            self.last_sent_util = Some(table);
        } else if let Some(pv) = self.parent_value {
            // the parent's view is unchanged; only refresh our own subtree
            let v = self.pick(pv, &table);
            self.value_phase(v, cfg, view, out);
        }
    }

    fn value_phase(
        &mut self,
        v: f64,
        cfg: &SolverConfig,
        view: LocalView<'_>,
        out: &mut Vec<Action>,
    ) {
        self.value = v;
        for &c in view.children {
            if !cfg.containment || self.last_value_sent.get(&c) != Some(&v) {
                self.send_value(c, v, view, out);
            }
        }
    }
}
