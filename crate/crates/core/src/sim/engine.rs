use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::network::{GlobalVisibility, Visibility};
use super::queue::EventQueue;
use super::{RunReport, SimConfig, StepViolation};
use crate::error::{Error, Result};
use crate::liveness::{inspect_neighbors, send_keep_alive, KeepAliveRegister};
use crate::model::{
    global_cost, rng_stream, Applied, Assignment, Environment, EnvironmentEvent, EventScript,
};
use crate::monitor::{
    check_stabilization, validate_hierarchy, Counters, HierarchySnapshot, MetricsRecord, Violation,
};
use crate::protocol::{
    Action, ActivityState, AgentId, AgentRegisters, ExecutionOrder, GraphMessage, MessageBody,
    StaleKind,
};
use crate::solver::{LocalView, SolverState, TriggerReason};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TimerKind {
    Connect,
    KeepAlive,
    Inspect,
    AnnounceWait(u64),
    SolverRun(u64),
}

#[derive(Debug)]
enum SimEvent {
    Deliver {
        to: AgentId,
        msg: GraphMessage,
        epoch: u64,
    },
    Timer {
        agent: AgentId,
        kind: TimerKind,
    },
    Env {
        event: EnvironmentEvent,
        script_index: Option<usize>,
    },
    Snapshot {
        script_index: Option<usize>,
        event: Option<EnvironmentEvent>,
    },
    Probe,
    BaselineSolve {
        epoch: u64,
    },
    End,
}

#[derive(Debug)]
struct Agent {
    regs: AgentRegisters,
    ka: KeepAliveRegister,
    solver: SolverState,
    solver_generation: u64,
}

pub struct Simulator {
    cfg: SimConfig,
    env: Environment,
    agents: BTreeMap<AgentId, Agent>,
    queue: EventQueue<SimEvent>,
    now: f64,
    /// Bumped by baseline restarts; deliveries from older epochs are dropped.
    epoch: u64,
    visibility: Box<dyn Visibility>,
    rng_selection: ChaCha8Rng,
    rng_network: ChaCha8Rng,
    rng_solver_network: ChaCha8Rng,
    rng_phases: ChaCha8Rng,
    counters: Counters,
    handshake_in_flight: u64,
    messages_in_flight: u64,
    probes: Vec<HierarchySnapshot>,
    records: Vec<MetricsRecord>,
    event_snapshots: Vec<HierarchySnapshot>,
    step_violations: Vec<StepViolation>,
    pending_violations: Vec<Violation>,
    stuck_active: Vec<(f64, AgentId)>,
    stuck_reported: BTreeMap<AgentId, u64>,
    baseline_pending: Option<u64>,
    events_applied: usize,
    last_event_at: Option<f64>,
    retired_nearest: u64,
    removed_at: BTreeMap<AgentId, f64>,
    end_scheduled: bool,
    ended: bool,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.run_seed;
        let mut sim = Simulator {
            env: Environment::new(cfg.problem_seed),
            agents: BTreeMap::new(),
            queue: EventQueue::default(),
            now: 0.0,
            epoch: 0,
            visibility: Box::new(GlobalVisibility),
            rng_selection: rng_stream(seed, "selection", &[]),
            rng_network: rng_stream(seed, "network", &[]),
            rng_solver_network: rng_stream(seed, "solver-network", &[]),
            rng_phases: rng_stream(seed, "phases", &[]),
            counters: Counters::default(),
            handshake_in_flight: 0,
            messages_in_flight: 0,
            probes: Vec::new(),
            records: Vec::new(),
            event_snapshots: Vec::new(),
            step_violations: Vec::new(),
            pending_violations: Vec::new(),
            stuck_active: Vec::new(),
            stuck_reported: BTreeMap::new(),
            baseline_pending: None,
            events_applied: 0,
            last_event_at: None,
            retired_nearest: 0,
            removed_at: BTreeMap::new(),
            end_scheduled: false,
            ended: false,
            cfg,
        };
        sim.queue.push(0.0, SimEvent::Probe);
        Ok(sim)
    }

    pub fn with_visibility(mut self, visibility: Box<dyn Visibility>) -> Self {
        self.visibility = visibility;
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn registers(&self, a: AgentId) -> Option<&AgentRegisters> {
        self.agents.get(&a).map(|ag| &ag.regs)
    }

    pub fn solver(&self, a: AgentId) -> Option<&SolverState> {
        self.agents.get(&a).map(|ag| &ag.solver)
    }

    pub fn step_violations(&self) -> &[StepViolation] {
        &self.step_violations
    }

    pub fn handshake_in_flight(&self) -> u64 {
        self.handshake_in_flight
    }

    /// Messages enqueued but not yet delivered or dropped.
    pub fn messages_in_flight(&self) -> u64 {
        self.messages_in_flight
    }

    /// Schedules one environment event outside any script. No metrics
    /// record is produced for it.
    pub fn schedule_event(&mut self, at: f64, event: EnvironmentEvent) {
        self.queue.push(
            at,
            SimEvent::Env {
                event,
                script_index: None,
            },
        );
    }

    /// Schedules every scripted event, one metrics snapshot per event taken
    /// just before the next one, and the end of the run. Returns the end
    /// time.
    pub fn load_script(&mut self, script: &EventScript) -> f64 {
        let entries = &script.entries;
        for (i, e) in entries.iter().enumerate() {
            if i > 0 {
                self.queue.push(
                    e.at,
                    SimEvent::Snapshot {
                        script_index: Some(i - 1),
                        event: Some(entries[i - 1].event),
                    },
                );
            }
            self.queue.push(
                e.at,
                SimEvent::Env {
                    event: e.event,
                    script_index: Some(i),
                },
            );
        }
        let end = entries.last().map_or(0.0, |e| e.at) + self.cfg.final_tail;
        self.queue.push(
            end,
            SimEvent::Snapshot {
                script_index: entries.len().checked_sub(1),
                event: entries.last().map(|e| e.event),
            },
        );
        self.queue.push(end, SimEvent::End);
        self.end_scheduled = true;
        end
    }

    /// Handles every queued event up to and including time `t`.
    pub fn run_until(&mut self, t: f64) -> Result<()> {
        while !self.ended && self.queue.peek_time().is_some_and(|at| at <= t) {
            self.step()?;
        }
        if !self.ended {
            self.now = self.now.max(t);
        }
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        if !self.end_scheduled {
            return Err(Error::InvalidConfig("no script loaded".into()));
        }
        while !self.ended && !self.queue.is_empty() {
            self.step()?;
        }
        Ok(())
    }

    fn step(&mut self) -> Result<()> {
        let Some((at, event)) = self.queue.pop() else {
            return Ok(());
        };
        self.now = at;
        match event {
            SimEvent::Deliver { to, msg, epoch } => self.deliver(to, msg, epoch),
            SimEvent::Timer { agent, kind } => self.fire_timer(agent, kind),
            SimEvent::Env {
                event,
                script_index,
            } => self.apply_event(event, script_index)?,
            SimEvent::Snapshot {
                script_index,
                event,
            } => self.record(script_index, event)?,
            SimEvent::Probe => self.probe(),
            SimEvent::BaselineSolve { epoch } => {
                if self.baseline_pending == Some(epoch) {
                    self.baseline_solve();
                }
            }
            SimEvent::End => self.ended = true,
        }
        Ok(())
    }

    fn send(&mut self, to: AgentId, msg: GraphMessage) {
        let kind = msg.kind();
        self.counters.sent.add(kind);
        self.messages_in_flight += 1;
        if kind.is_handshake() {
            self.handshake_in_flight += 1;
        }
        let rng = if kind.is_solver() {
            &mut self.rng_solver_network
        } else {
            &mut self.rng_network
        };
        let delay = self.cfg.network.draw(self.now, rng);
        self.queue.push(
            self.now + delay,
            SimEvent::Deliver {
                to,
                msg,
                epoch: self.epoch,
            },
        );
    }

    fn arm(&mut self, agent: AgentId, kind: TimerKind, at: f64) {
        self.queue.push(at, SimEvent::Timer { agent, kind });
    }

    fn handle_actions(&mut self, a: AgentId, actions: Vec<Action>) {
        for action in actions {
            match action {
                Action::Send { to, msg } => self.send(to, msg),
                Action::Broadcast(msg) => {
                    for to in self.visibility.audience(a, self.env.live()) {
                        self.send(to, msg.clone());
                    }
                }
                Action::ArmAnnounceWait { at, attempt } => {
                    self.arm(a, TimerKind::AnnounceWait(attempt), at)
                }
                Action::Link(j) => {
                    if self.env.is_live(a) && self.env.is_live(j) {
                        self.env.link(a, j);
                    }
                    if let Some(ag) = self.agents.get_mut(&a) {
                        ag.ka.note_linked(j);
                    }
                }
                Action::Unlink(j) => {
                    self.env.unlink(a, j);
                    if let Some(ag) = self.agents.get_mut(&a) {
                        // parents always have the lower id
                        ag.solver.forget(j, j < a);
                    }
                }
                Action::Trigger(reason) => self.trigger(a, reason),
                Action::Stale(StaleKind::ChildAdded) => self.counters.stale_child_added += 1,
                Action::Stale(StaleKind::ParentAssigned) => {
                    self.counters.stale_parent_assigned += 1
                }
            }
        }
    }

    fn trigger(&mut self, a: AgentId, reason: TriggerReason) {
        *self.counters.triggers.entry(reason).or_default() += 1;
        if self.cfg.baseline_restart || self.cfg.solver.order == ExecutionOrder::None {
            return;
        }
        let Some(ag) = self.agents.get_mut(&a) else {
            return;
        };
        ag.solver_generation += 1;
        let generation = ag.solver_generation;
        self.arm(
            a,
            TimerKind::SolverRun(generation),
            self.now + self.cfg.settle_delay,
        );
    }

    /// Register-level checks for the agent a handler just ran on.
    fn step_check(&mut self, a: AgentId) {
        let Some(ag) = self.agents.get(&a) else {
            return;
        };
        let r = &ag.regs;
        let mut found = Vec::new();
        if let Some(p) = r.parent {
            if p >= a {
                found.push(Violation::Ordering {
                    parent: p,
                    child: a,
                });
            }
            if r.children.contains(&p) {
                found.push(Violation::Cycle { agent: a });
            }
        }
        for &c in &r.children {
            if c <= a {
                found.push(Violation::Ordering {
                    parent: a,
                    child: c,
                });
            }
        }
        if r.children.len() > self.cfg.policy.max_out_degree {
            found.push(Violation::OutDegree {
                agent: a,
                children: r.children.len(),
                max: self.cfg.policy.max_out_degree,
            });
        }
        for violation in found {
            log::error!("t={:.3}: {:?}", self.now, violation);
            self.pending_violations.push(violation.clone());
            self.step_violations.push(StepViolation {
                at: self.now,
                violation,
            });
        }
    }

    fn deliver(&mut self, to: AgentId, msg: GraphMessage, epoch: u64) {
        self.messages_in_flight -= 1;
        if msg.kind().is_handshake() {
            self.handshake_in_flight -= 1;
        }
        if epoch != self.epoch || !self.agents.contains_key(&to) {
            self.counters.dropped += 1;
            return;
        }
        self.counters.delivered += 1;
        let cfg = &self.cfg;
        let ag = self.agents.get_mut(&to).expect("checked above");
        let from = msg.sender;
        let mut out = Vec::new();
        let mut check_baseline = false;
        match msg.body {
            MessageBody::KeepAlive => ag.ka.receive_keep_alive(from),
            MessageBody::Announce => ag.regs.receive_announce(from, &cfg.policy, &mut out),
            MessageBody::AnnounceResponse { child_count } => {
                ag.regs.receive_announce_response(from, child_count)
            }
            MessageBody::AddMe => {
                ag.regs
                    .receive_add_me(from, &cfg.policy, &ag.solver.domain.samples, &mut out);
            }
            MessageBody::ChildAdded { samples } => {
                if ag.regs.receive_child_added(from, &mut out) {
                    ag.solver.on_parent_linked(samples);
                    ag.ka.note_linked(from);
                }
            }
            MessageBody::AlreadyActive => ag.regs.receive_already_active(from),
            MessageBody::ParentAssigned => {
                ag.regs.receive_parent_assigned(from, &mut out);
                check_baseline = true;
            }
            MessageBody::Solver(m) => {
                let view = LocalView {
                    id: to,
                    parent: ag.regs.parent,
                    children: &ag.regs.children,
                    env: &self.env,
                };
                ag.solver.on_message(from, &m, &cfg.solver, view, &mut out);
            }
        }
        self.step_check(to);
        self.handle_actions(to, out);
        if check_baseline {
            self.maybe_finish_baseline();
        }
    }

    fn fire_timer(&mut self, a: AgentId, kind: TimerKind) {
        let cfg = &self.cfg;
        let now = self.now;
        let Some(ag) = self.agents.get_mut(&a) else {
            return;
        };
        let mut out = Vec::new();
        let mut rearm = None;
        match kind {
            TimerKind::Connect => {
                ag.regs.connect(now, &cfg.timing, &mut out);
                rearm = Some(cfg.timing.connect_period);
            }
            TimerKind::KeepAlive => {
                send_keep_alive(&ag.regs, &mut out);
                rearm = Some(cfg.keep_alive_period);
            }
            TimerKind::Inspect => {
                inspect_neighbors(&mut ag.regs, &mut ag.ka, &mut out);
                rearm = Some(cfg.inspect_period);
            }
            TimerKind::AnnounceWait(attempt) => {
                ag.regs
                    .connect_finish(now, attempt, &cfg.policy, &cfg.timing, &mut out)
            }
            TimerKind::SolverRun(generation) => {
                if generation != ag.solver_generation {
                    return;
                }
                self.counters.solver_runs += 1;
                let view = LocalView {
                    id: a,
                    parent: ag.regs.parent,
                    children: &ag.regs.children,
                    env: &self.env,
                };
                ag.solver.run(&cfg.solver, view, &mut out);
            }
        }
        if let Some(period) = rearm {
            self.arm(a, kind, now + period);
        }
        self.step_check(a);
        self.handle_actions(a, out);
    }

    fn spawn(&mut self, a: AgentId) {
        let domain = self
            .env
            .domain(a)
            .cloned()
            .expect("domain exists for a live agent");
        self.agents.insert(
            a,
            Agent {
                regs: AgentRegisters::new(a, self.cfg.solver.order),
                ka: KeepAliveRegister::default(),
                solver: SolverState::new(domain),
                solver_generation: 0,
            },
        );
        let mut periodic = vec![(TimerKind::Connect, self.cfg.timing.connect_period)];
        if self.cfg.liveness {
            periodic.push((TimerKind::KeepAlive, self.cfg.keep_alive_period));
            periodic.push((TimerKind::Inspect, self.cfg.inspect_period));
        }
        for (kind, period) in periodic {
            let phase = self.rng_phases.random_range(0.0..period);
            self.arm(a, kind, self.now + phase);
        }
    }

    fn apply_event(&mut self, event: EnvironmentEvent, script_index: Option<usize>) -> Result<()> {
        let index = script_index.unwrap_or(self.events_applied);
        let applied = self
            .env
            .apply(&event, &mut self.rng_selection)
            .map_err(|message| Error::ScriptViolation {
                index,
                at: self.now,
                message,
            })?;
        self.events_applied += 1;
        self.last_event_at = Some(self.now);
        log::debug!("t={:.3}: {}", self.now, event);
        match applied {
            Applied::Added(a) => self.spawn(a),
            Applied::Removed(a) => {
                if let Some(ag) = self.agents.remove(&a) {
                    self.retired_nearest += ag.solver.nearest_key_lookups;
                }
                self.env.unlink_all(a);
                self.removed_at.insert(a, self.now);
            }
            Applied::Changed(key) => {
                for a in [key.lo, key.hi] {
                    self.trigger(a, TriggerReason::ConstraintChanged);
                }
            }
        }
        if self.cfg.baseline_restart {
            self.baseline_restart();
        }
        Ok(())
    }

    fn baseline_restart(&mut self) {
        self.epoch += 1;
        self.env.clear_edges();
        for ag in self.agents.values_mut() {
            ag.regs.reset();
            ag.ka.clear();
            ag.solver.reset_links();
            ag.solver_generation += 1;
        }
        self.baseline_pending = Some(self.epoch);
        self.queue.push(
            self.now + self.cfg.baseline_deadline,
            SimEvent::BaselineSolve { epoch: self.epoch },
        );
        self.maybe_finish_baseline();
    }

    fn maybe_finish_baseline(&mut self) {
        if self.baseline_pending != Some(self.epoch) || self.agents.is_empty() {
            return;
        }
        let parented = self
            .agents
            .values()
            .filter(|ag| ag.regs.parent.is_some())
            .count();
        if parented + 1 == self.agents.len() {
            self.baseline_solve();
        }
    }

    /// Starts the solver from scratch on the current hierarchy.
    fn baseline_solve(&mut self) {
        self.baseline_pending = None;
        let starters: Vec<AgentId> = self
            .agents
            .iter()
            .filter(|(_, ag)| match self.cfg.solver.order {
                ExecutionOrder::TopDown => ag.regs.parent.is_none(),
                ExecutionOrder::BottomUp => ag.regs.children.is_empty(),
                ExecutionOrder::None => false,
            })
            .map(|(&a, _)| a)
            .collect();
        for a in starters {
            let ag = self.agents.get_mut(&a).expect("collected above");
            let mut out = Vec::new();
            let view = LocalView {
                id: a,
                parent: ag.regs.parent,
                children: &ag.regs.children,
                env: &self.env,
            };
            ag.solver.run(&self.cfg.solver, view, &mut out);
            self.counters.solver_runs += 1;
            self.handle_actions(a, out);
        }
    }

    pub fn is_quiescent(&self) -> bool {
        self.handshake_in_flight == 0
            && self
                .agents
                .values()
                .all(|ag| !ag.regs.is_active() && ag.regs.wait_deadline.is_none())
    }

    pub fn snapshot(&self) -> HierarchySnapshot {
        HierarchySnapshot {
            at: self.now,
            parent_of: self
                .agents
                .iter()
                .map(|(&a, ag)| (a, ag.regs.parent))
                .collect(),
            children_of: self
                .agents
                .iter()
                .map(|(&a, ag)| (a, ag.regs.children.clone()))
                .collect(),
            live: self.env.live().clone(),
            undetected: self.undetected(),
            quiescent: self.is_quiescent(),
        }
    }

    /// Removed agents that neighbors are not yet required to have noticed:
    /// two inspection rounds plus the longest possible delivery.
    fn undetected(&self) -> BTreeSet<AgentId> {
        let net = &self.cfg.network;
        let longest = net
            .tail
            .map_or(net.max_delay, |t| t.max_delay.max(net.max_delay));
        let bound = 2.0 * self.cfg.inspect_period + longest;
        self.removed_at
            .iter()
            .filter(|&(a, &t)| self.now - t <= bound && !self.env.is_live(*a))
            .map(|(&a, _)| a)
            .collect()
    }

    pub fn assignment(&self) -> Assignment {
        self.agents
            .iter()
            .map(|(&a, ag)| (a, ag.solver.value))
            .collect()
    }

    pub fn global_cost(&self) -> Result<f64> {
        global_cost(self.env.edges(), &self.assignment())
    }

    fn probe(&mut self) {
        let snap = self.snapshot();
        if !self.probes.last().is_some_and(|p| p.same_shape(&snap)) {
            self.probes.push(snap);
        }
        let limit = self.now - self.cfg.timing.connect_period - 1e-9;
        for (&a, ag) in &self.agents {
            if ag.regs.state != ActivityState::Active {
                continue;
            }
            let Some(deadline) = ag.regs.state_timeout_deadline else {
                continue;
            };
            if deadline < limit && self.stuck_reported.get(&a) != Some(&deadline.to_bits()) {
                self.stuck_reported.insert(a, deadline.to_bits());
                self.stuck_active.push((self.now, a));
                self.pending_violations
                    .push(Violation::StuckActive { agent: a });
            }
        }
        self.queue
            .push(self.now + self.cfg.probe_interval, SimEvent::Probe);
    }

    fn record(
        &mut self,
        script_index: Option<usize>,
        event: Option<EnvironmentEvent>,
    ) -> Result<()> {
        let snap = self.snapshot();
        let mut violations = validate_hierarchy(&snap, &self.cfg.policy, snap.quiescent);
        violations.append(&mut self.pending_violations);
        let sent = &self.counters.sent;
        self.records.push(MetricsRecord {
            event_index: script_index,
            event: event.map(|e| e.to_string()),
            at: self.now,
            global_cost: self.global_cost()?,
            messages_by_kind: sent.by_name(),
            total_messages: sent.total(),
            event_messages: sent.event_driven(),
            live_agents: snap.live.len(),
            tree_count: snap.tree_count(),
            max_depth: snap.max_depth(),
            violations,
        });
        self.event_snapshots.push(snap);
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunReport> {
        let final_snapshot = self.snapshot();
        self.probes.push(final_snapshot.clone());
        let stabilized_at = check_stabilization(
            &self.probes,
            self.last_event_at.unwrap_or(0.0),
            self.cfg.stabilization_window,
        );
        let final_cost = self.global_cost()?;
        let nearest_key_lookups = self.retired_nearest
            + self
                .agents
                .values()
                .map(|ag| ag.solver.nearest_key_lookups)
                .sum::<u64>();
        Ok(RunReport {
            final_assignment: self.assignment(),
            final_edges: self.env.edges().copied().collect(),
            records: self.records,
            event_snapshots: self.event_snapshots,
            probes: self.probes,
            step_violations: self.step_violations,
            stuck_active: self.stuck_active,
            counters: self.counters,
            nearest_key_lookups,
            final_snapshot,
            final_cost,
            last_event_at: self.last_event_at,
            end_at: self.now,
            stabilized_at,
            messages_in_flight: self.messages_in_flight,
        })
    }
}

/// Runs `script` to completion under `cfg`.
pub fn run_script(cfg: SimConfig, script: &EventScript) -> Result<RunReport> {
    let mut sim = Simulator::new(cfg)?;
    sim.load_script(script);
    sim.run_to_end()?;
    sim.finish()
}
