//! Per-agent connection state machine.
//!
//! Each handler runs to completion against one agent's [`AgentRegisters`]
//! and reports its side effects as [`Action`]s; the hosting runtime turns
//! those into deliveries, timers and constraint bookkeeping. Handlers never
//! block: the announce/wait/select sequence is split into
//! [`AgentRegisters::connect`] (broadcast and arm the wait deadline) and
//! [`AgentRegisters::connect_finish`] (select a respondent when the deadline
//! fires).

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::policy::{self, PolicyConfig};
use crate::solver::{SolverMessage, TriggerReason};

/// Agent identifier. Doubles as the variable identifier since every agent
/// owns exactly one variable. Identifiers are never reused within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActivityState {
    Inactive,
    Active,
}

/// Which protocol event starts the paired solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionOrder {
    TopDown,
    BottomUp,
    None,
}

impl ExecutionOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            ExecutionOrder::TopDown => "topdown",
            ExecutionOrder::BottomUp => "bottomup",
            ExecutionOrder::None => "none",
        }
    }
}

impl fmt::Display for ExecutionOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ExecutionOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "topdown" => Ok(ExecutionOrder::TopDown),
            "bottomup" => Ok(ExecutionOrder::BottomUp),
            "none" => Ok(ExecutionOrder::None),
            other => Err(format!(
                "unknown algorithm {other:?} (expected topdown, bottomup or none)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Announce,
    AnnounceResponse,
    AddMe,
    ChildAdded,
    AlreadyActive,
    ParentAssigned,
    KeepAlive,
    Util,
    Value,
}

impl MessageKind {
    pub const ALL: [MessageKind; 9] = [
        MessageKind::Announce,
        MessageKind::AnnounceResponse,
        MessageKind::AddMe,
        MessageKind::ChildAdded,
        MessageKind::AlreadyActive,
        MessageKind::ParentAssigned,
        MessageKind::KeepAlive,
        MessageKind::Util,
        MessageKind::Value,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Announce => "Announce",
            MessageKind::AnnounceResponse => "AnnounceResponse",
            MessageKind::AddMe => "AddMe",
            MessageKind::ChildAdded => "ChildAdded",
            MessageKind::AlreadyActive => "AlreadyActive",
            MessageKind::ParentAssigned => "ParentAssigned",
            MessageKind::KeepAlive => "KeepAlive",
            MessageKind::Util => "Util",
            MessageKind::Value => "Value",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Handshake traffic, i.e. everything that can still change registers.
    pub fn is_handshake(self) -> bool {
        matches!(
            self,
            MessageKind::Announce
                | MessageKind::AnnounceResponse
                | MessageKind::AddMe
                | MessageKind::ChildAdded
                | MessageKind::AlreadyActive
                | MessageKind::ParentAssigned
        )
    }

    pub fn is_solver(self) -> bool {
        matches!(self, MessageKind::Util | MessageKind::Value)
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MessageBody {
    Announce,
    AnnounceResponse {
        child_count: usize,
    },
    AddMe,
    /// Carries the new parent's domain samples, which the child needs to key
    /// utility tables by the parent's values.
    ChildAdded {
        samples: Vec<f64>,
    },
    AlreadyActive,
    ParentAssigned,
    KeepAlive,
    Solver(SolverMessage),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMessage {
    pub sender: AgentId,
    pub body: MessageBody,
}

impl GraphMessage {
    pub fn new(sender: AgentId, body: MessageBody) -> Self {
        GraphMessage { sender, body }
    }

    pub fn kind(&self) -> MessageKind {
        match &self.body {
            MessageBody::Announce => MessageKind::Announce,
            MessageBody::AnnounceResponse { .. } => MessageKind::AnnounceResponse,
            MessageBody::AddMe => MessageKind::AddMe,
            MessageBody::ChildAdded { .. } => MessageKind::ChildAdded,
            MessageBody::AlreadyActive => MessageKind::AlreadyActive,
            MessageBody::ParentAssigned => MessageKind::ParentAssigned,
            MessageBody::KeepAlive => MessageKind::KeepAlive,
            MessageBody::Solver(SolverMessage::Util(_)) => MessageKind::Util,
            MessageBody::Solver(SolverMessage::Value(_)) => MessageKind::Value,
        }
    }
}

/// Messages the protocol ignored because they no longer matched the
/// receiver's registers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StaleKind {
    ChildAdded,
    ParentAssigned,
}

/// Side effect requested by a handler.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Send {
        to: AgentId,
        msg: GraphMessage,
    },
    /// Announce to every agent the runtime considers visible.
    Broadcast(GraphMessage),
    /// Call [`AgentRegisters::connect_finish`] with `attempt` at `at`.
    ArmAnnounceWait {
        at: f64,
        attempt: u64,
    },
    /// A child was accepted; the runtime creates the constraint edge.
    Link(AgentId),
    /// A neighbor was dropped; the runtime clears everything known about it.
    Unlink(AgentId),
    Trigger(TriggerReason),
    Stale(StaleKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTiming {
    pub connect_period: f64,
    pub announce_wait: f64,
    pub state_timeout: f64,
    /// Upper bound on the connect back-off, in connect periods.
    pub max_backoff: u32,
}

impl Default for ProtocolTiming {
    fn default() -> Self {
        ProtocolTiming {
            connect_period: 1.0,
            announce_wait: 0.2,
            state_timeout: 2.0,
            max_backoff: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRegisters {
    pub id: AgentId,
    pub state: ActivityState,
    pub parent: Option<AgentId>,
    pub children: BTreeSet<AgentId>,
    /// Respondents of the current attempt with their reported child counts.
    pub respondents: Vec<(AgentId, usize)>,
    pub state_timeout_deadline: Option<f64>,
    pub execution_order: ExecutionOrder,
    /// Set while an announce wait is pending.
    pub wait_deadline: Option<f64>,
    attempt: u64,
    failed_attempts: u32,
    next_announce_at: f64,
    /// Lowest announcer heard so far; only a new lowest one ends a back-off.
    lowest_announcer: Option<AgentId>,
}

impl AgentRegisters {
    pub fn new(id: AgentId, execution_order: ExecutionOrder) -> Self {
        AgentRegisters {
            id,
            state: ActivityState::Inactive,
            parent: None,
            children: BTreeSet::new(),
            respondents: Vec::new(),
            state_timeout_deadline: None,
            execution_order,
            wait_deadline: None,
            attempt: 0,
            failed_attempts: 0,
            next_announce_at: f64::NEG_INFINITY,
            lowest_announcer: None,
        }
    }

    /// Drops every link and pending attempt, keeping identity and order.
    pub fn reset(&mut self) {
        let attempt = self.attempt;
        *self = AgentRegisters::new(self.id, self.execution_order);
        // keep attempt numbers monotone so stale wait timers stay stale
        self.attempt = attempt;
    }

    pub fn neighbors(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.parent.into_iter().chain(self.children.iter().copied())
    }

    pub fn is_neighbor(&self, j: AgentId) -> bool {
        self.parent == Some(j) || self.children.contains(&j)
    }

    pub fn is_active(&self) -> bool {
        self.state == ActivityState::Active
    }

    /// Consecutive announce attempts that found no respondent.
    pub fn failed_attempts(&self) -> u32 {
        self.failed_attempts
    }

    fn clear_backoff(&mut self) {
        self.failed_attempts = 0;
        self.next_announce_at = f64::NEG_INFINITY;
    }

    /// Periodic connect tick.
    pub fn connect(&mut self, now: f64, timing: &ProtocolTiming, out: &mut Vec<Action>) {
        if self.state == ActivityState::Inactive && self.parent.is_none() {
            if self.wait_deadline.is_some() || now < self.next_announce_at {
                return;
            }
            self.respondents.clear();
            self.attempt += 1;
            let at = now + timing.announce_wait;
            self.wait_deadline = Some(at);
            out.push(Action::Broadcast(GraphMessage::new(
                self.id,
                MessageBody::Announce,
            )));
            out.push(Action::ArmAnnounceWait {
                at,
                attempt: self.attempt,
            });
        } else if self.state == ActivityState::Active
            && self.parent.is_none()
            && self.state_timeout_deadline.is_some_and(|d| now >= d)
        {
            self.state = ActivityState::Inactive;
            self.state_timeout_deadline = None;
            self.respondents.clear();
        }
    }

    /// Second half of a connect attempt, run when the announce wait expires.
    pub fn connect_finish(
        &mut self,
        now: f64,
        attempt: u64,
        policy: &PolicyConfig,
        timing: &ProtocolTiming,
        out: &mut Vec<Action>,
    ) {
        if attempt != self.attempt || self.wait_deadline.take().is_none() {
            return;
        }
        if self.state == ActivityState::Inactive && self.parent.is_none() {
            match policy::select_respondent(&self.respondents, policy) {
                Some(j) => {
                    out.push(Action::Send {
                        to: j,
                        msg: GraphMessage::new(self.id, MessageBody::AddMe),
                    });
                    self.state = ActivityState::Active;
                    self.state_timeout_deadline = Some(now + timing.state_timeout);
                    self.clear_backoff();
                }
                None => {
                    // nobody below us answered: probe less often
                    self.failed_attempts = self.failed_attempts.saturating_add(1);
                    let factor = 2u32
                        .saturating_pow(self.failed_attempts)
                        .min(timing.max_backoff.max(1));
                    let started = now - timing.announce_wait;
                    self.next_announce_at =
                        started + timing.connect_period * (f64::from(factor) - 0.5);
                }
            }
        }
        self.respondents.clear();
    }

    pub fn receive_announce(&mut self, j: AgentId, policy: &PolicyConfig, out: &mut Vec<Action>) {
        if j < self.id && self.lowest_announcer.is_none_or(|l| j < l) {
            // a lower agent we never heard of may have room for us
            self.lowest_announcer = Some(j);
            if self.parent.is_none() {
                self.clear_backoff();
            }
        }
        if self.state == ActivityState::Inactive
            && policy::phi(self.id, j, self.children.len(), policy)
        {
            out.push(Action::Send {
                to: j,
                msg: GraphMessage::new(
                    self.id,
                    MessageBody::AnnounceResponse {
                        child_count: self.children.len(),
                    },
                ),
            });
        }
    }

    pub fn receive_announce_response(&mut self, j: AgentId, child_count: usize) {
        if self.state != ActivityState::Inactive {
            return;
        }
        match self.respondents.iter_mut().find(|(id, _)| *id == j) {
            Some(entry) => entry.1 = child_count,
            None => self.respondents.push((j, child_count)),
        }
    }

    /// Returns true if `j` was accepted as a child.
    pub fn receive_add_me(
        &mut self,
        j: AgentId,
        policy: &PolicyConfig,
        own_samples: &[f64],
        out: &mut Vec<Action>,
    ) -> bool {
        let has_room = self.children.contains(&j) || self.children.len() < policy.max_out_degree;
        if self.state == ActivityState::Inactive && has_room {
            self.children.insert(j);
            out.push(Action::Send {
                to: j,
                msg: GraphMessage::new(
                    self.id,
                    MessageBody::ChildAdded {
                        samples: own_samples.to_vec(),
                    },
                ),
            });
            out.push(Action::Link(j));
            true
        } else {
            out.push(Action::Send {
                to: j,
                msg: GraphMessage::new(self.id, MessageBody::AlreadyActive),
            });
            false
        }
    }

    /// Returns true if `j` became this agent's parent.
    pub fn receive_child_added(&mut self, j: AgentId, out: &mut Vec<Action>) -> bool {
        if self.state == ActivityState::Active && self.parent.is_none() {
            self.parent = Some(j);
            self.state = ActivityState::Inactive;
            self.state_timeout_deadline = None;
            self.clear_backoff();
            out.push(Action::Send {
                to: j,
                msg: GraphMessage::new(self.id, MessageBody::ParentAssigned),
            });
            if self.execution_order == ExecutionOrder::BottomUp {
                out.push(Action::Trigger(TriggerReason::ChildAdded));
            }
            true
        } else {
            log::debug!("agent {}: stale ChildAdded from {}", self.id, j);
            out.push(Action::Stale(StaleKind::ChildAdded));
            false
        }
    }

    pub fn receive_already_active(&mut self, _j: AgentId) {
        self.state = ActivityState::Inactive;
        self.state_timeout_deadline = None;
    }

    pub fn receive_parent_assigned(&mut self, j: AgentId, out: &mut Vec<Action>) {
        if !self.children.contains(&j) {
            log::debug!("agent {}: ParentAssigned from non-child {}", self.id, j);
            out.push(Action::Stale(StaleKind::ParentAssigned));
            return;
        }
        if self.execution_order == ExecutionOrder::TopDown {
            out.push(Action::Trigger(TriggerReason::ParentAssigned));
        }
    }

    /// Forgets neighbor `j`. Returns true if it was the parent.
    pub(crate) fn drop_neighbor(&mut self, j: AgentId) -> bool {
        self.respondents.retain(|(id, _)| *id != j);
        if self.parent == Some(j) {
            self.parent = None;
            self.state = ActivityState::Inactive;
            self.clear_backoff();
            true
        } else {
            self.children.remove(&j);
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(i: u32) -> AgentId {
        AgentId(i)
    }

    fn sends(out: &[Action]) -> Vec<(AgentId, MessageKind)> {
        out.iter()
            .filter_map(|a| match a {
                Action::Send { to, msg } => Some((*to, msg.kind())),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn init_is_inactive_and_unlinked() {
        for (i, order) in [
            (7, ExecutionOrder::BottomUp),
            (0, ExecutionOrder::TopDown),
            (3, ExecutionOrder::None),
        ] {
            let r = AgentRegisters::new(id(i), order);
            assert_eq!(r.state, ActivityState::Inactive);
            assert_eq!(r.parent, None);
            assert!(r.children.is_empty());
            assert!(r.respondents.is_empty());
            assert_eq!(r.state_timeout_deadline, None);
            assert_eq!(r.execution_order, order);
        }
    }

    #[test]
    fn connect_two_phase_selects_and_goes_active() {
        let timing = ProtocolTiming::default();
        let policy = PolicyConfig::default();
        let mut r = AgentRegisters::new(id(3), ExecutionOrder::TopDown);
        let mut out = Vec::new();
        r.connect(10.0, &timing, &mut out);
        assert!(matches!(out[0], Action::Broadcast(ref m) if m.kind() == MessageKind::Announce));
        let (at, attempt) = match out[1] {
            Action::ArmAnnounceWait { at, attempt } => (at, attempt),
            ref other => panic!("unexpected {other:?}"),
        };
        assert!((at - 10.2).abs() < 1e-12);

        r.receive_announce_response(id(1), 0);
        r.receive_announce_response(id(2), 0);
        out.clear();
        r.connect_finish(at, attempt, &policy, &timing, &mut out);
        assert_eq!(sends(&out), vec![(id(1), MessageKind::AddMe)]);
        assert_eq!(r.state, ActivityState::Active);
        assert_eq!(r.state_timeout_deadline, Some(at + 2.0));
        assert!(r.respondents.is_empty());
    }

    #[test]
    fn connect_is_noop_with_parent() {
        let mut r = AgentRegisters::new(id(6), ExecutionOrder::TopDown);
        r.parent = Some(id(5));
        let mut out = Vec::new();
        r.connect(1.0, &ProtocolTiming::default(), &mut out);
        assert!(out.is_empty());
        assert_eq!(r.wait_deadline, None);
    }

    #[test]
    fn connect_resets_expired_active_state() {
        let mut r = AgentRegisters::new(id(6), ExecutionOrder::TopDown);
        r.state = ActivityState::Active;
        r.state_timeout_deadline = Some(5.0);
        r.respondents.push((id(1), 0));
        let mut out = Vec::new();
        r.connect(4.0, &ProtocolTiming::default(), &mut out);
        assert_eq!(r.state, ActivityState::Active);
        r.connect(5.5, &ProtocolTiming::default(), &mut out);
        assert!(out.is_empty());
        assert_eq!(r.state, ActivityState::Inactive);
        assert_eq!(r.state_timeout_deadline, None);
        assert!(r.respondents.is_empty());
    }

    #[test]
    fn stale_wait_timer_is_ignored() {
        let timing = ProtocolTiming::default();
        let mut r = AgentRegisters::new(id(4), ExecutionOrder::None);
        let mut out = Vec::new();
        r.connect(0.0, &timing, &mut out);
        r.receive_announce_response(id(1), 0);
        out.clear();
        r.connect_finish(0.2, 99, &PolicyConfig::default(), &timing, &mut out);
        assert!(out.is_empty());
        assert!(r.wait_deadline.is_some());
    }

    #[test]
    fn empty_attempts_back_off_and_lower_announce_wakes() {
        let timing = ProtocolTiming::default();
        let policy = PolicyConfig::default();
        let mut r = AgentRegisters::new(id(4), ExecutionOrder::None);
        let mut out = Vec::new();
        let mut announces = Vec::new();
        for tick in 0..40 {
            let now = f64::from(tick);
            out.clear();
            r.connect(now, &timing, &mut out);
            if let Some(Action::ArmAnnounceWait { at, attempt }) = out.get(1).cloned() {
                announces.push(tick);
                r.connect_finish(at, attempt, &policy, &timing, &mut out);
            }
        }
        // 0, 2, 6, 14, 22, 30, 38: doubling up to the cap of 8 periods
        assert_eq!(announces, vec![0, 2, 6, 14, 22, 30, 38]);

        out.clear();
        r.receive_announce(id(1), &policy, &mut out);
        assert!(out.is_empty(), "4 never answers a lower announcer");
        r.connect(40.0, &timing, &mut out);
        assert!(matches!(out[0], Action::Broadcast(_)));
        let (at, attempt) = match out[1] {
            Action::ArmAnnounceWait { at, attempt } => (at, attempt),
            ref other => panic!("unexpected {other:?}"),
        };
        r.connect_finish(at, attempt, &policy, &timing, &mut out);
        assert_eq!(r.failed_attempts(), 1);

        // the same lower announcer again does not cut the back-off short
        r.receive_announce(id(1), &policy, &mut out);
        assert_eq!(r.failed_attempts(), 1);
        out.clear();
        r.connect(41.0, &timing, &mut out);
        assert!(out.is_empty());
        // a new lowest one does
        r.receive_announce(id(0), &policy, &mut out);
        assert_eq!(r.failed_attempts(), 0);
        r.connect(41.0, &timing, &mut out);
        assert!(matches!(out[0], Action::Broadcast(_)));
    }

    #[test]
    fn receive_announce_examples() {
        let policy = PolicyConfig::default();
        let mut out = Vec::new();

        let mut one = AgentRegisters::new(id(1), ExecutionOrder::None);
        one.receive_announce(id(3), &policy, &mut out);
        assert_eq!(
            out,
            vec![Action::Send {
                to: id(3),
                msg: GraphMessage::new(id(1), MessageBody::AnnounceResponse { child_count: 0 })
            }]
        );

        out.clear();
        let mut five = AgentRegisters::new(id(5), ExecutionOrder::None);
        five.receive_announce(id(2), &policy, &mut out);
        assert!(out.is_empty());

        one.state = ActivityState::Active;
        one.receive_announce(id(3), &policy, &mut out);
        assert!(out.is_empty());
    }

    #[test]
    fn respondents_are_deduplicated_latest_wins() {
        let mut r = AgentRegisters::new(id(9), ExecutionOrder::None);
        r.receive_announce_response(id(4), 1);
        assert_eq!(r.respondents, vec![(id(4), 1)]);
        r.receive_announce_response(id(4), 1);
        assert_eq!(r.respondents, vec![(id(4), 1)]);
        r.receive_announce_response(id(4), 2);
        assert_eq!(r.respondents, vec![(id(4), 2)]);
        r.state = ActivityState::Active;
        r.receive_announce_response(id(5), 0);
        assert_eq!(r.respondents, vec![(id(4), 2)]);
    }

    #[test]
    fn add_me_accepts_when_inactive_with_room() {
        let policy = PolicyConfig::new(3).unwrap();
        let mut r = AgentRegisters::new(id(1), ExecutionOrder::None);
        let mut out = Vec::new();
        assert!(r.receive_add_me(id(3), &policy, &[1.0, 2.0, 3.0], &mut out));
        assert!(r.children.contains(&id(3)));
        assert_eq!(sends(&out), vec![(id(3), MessageKind::ChildAdded)]);
        assert!(out.contains(&Action::Link(id(3))));
    }

    #[test]
    fn add_me_rejected_when_active_or_full() {
        let policy = PolicyConfig::new(3).unwrap();
        let mut out = Vec::new();
        let mut busy = AgentRegisters::new(id(1), ExecutionOrder::None);
        busy.state = ActivityState::Active;
        assert!(!busy.receive_add_me(id(3), &policy, &[], &mut out));
        assert!(busy.children.is_empty());
        assert_eq!(sends(&out), vec![(id(3), MessageKind::AlreadyActive)]);

        out.clear();
        let mut full = AgentRegisters::new(id(1), ExecutionOrder::None);
        full.children.extend([id(4), id(5), id(6)]);
        assert!(!full.receive_add_me(id(7), &policy, &[], &mut out));
        assert_eq!(full.children.len(), 3);
        assert_eq!(sends(&out), vec![(id(7), MessageKind::AlreadyActive)]);

        // a repeated AddMe from an existing child is not a new slot
        out.clear();
        assert!(full.receive_add_me(id(5), &policy, &[], &mut out));
        assert_eq!(full.children.len(), 3);
    }

    #[test]
    fn child_added_assigns_parent() {
        let mut r = AgentRegisters::new(id(3), ExecutionOrder::BottomUp);
        r.state = ActivityState::Active;
        r.state_timeout_deadline = Some(9.0);
        let mut out = Vec::new();
        assert!(r.receive_child_added(id(1), &mut out));
        assert_eq!(r.parent, Some(id(1)));
        assert_eq!(r.state, ActivityState::Inactive);
        assert_eq!(r.state_timeout_deadline, None);
        assert_eq!(sends(&out), vec![(id(1), MessageKind::ParentAssigned)]);
        assert!(out.contains(&Action::Trigger(TriggerReason::ChildAdded)));
    }

    #[test]
    fn child_added_top_down_does_not_trigger() {
        let mut r = AgentRegisters::new(id(3), ExecutionOrder::TopDown);
        r.state = ActivityState::Active;
        let mut out = Vec::new();
        r.receive_child_added(id(1), &mut out);
        assert!(!out.iter().any(|a| matches!(a, Action::Trigger(_))));
    }

    #[test]
    fn stale_child_added_is_ignored() {
        let mut out = Vec::new();
        let mut idle = AgentRegisters::new(id(3), ExecutionOrder::BottomUp);
        assert!(!idle.receive_child_added(id(1), &mut out));
        assert_eq!(idle.parent, None);
        assert_eq!(out, vec![Action::Stale(StaleKind::ChildAdded)]);

        out.clear();
        let mut parented = AgentRegisters::new(id(3), ExecutionOrder::BottomUp);
        parented.state = ActivityState::Active;
        parented.parent = Some(id(2));
        assert!(!parented.receive_child_added(id(1), &mut out));
        assert_eq!(parented.parent, Some(id(2)));
    }

    #[test]
    fn already_active_resets_state_and_deadline() {
        let mut r = AgentRegisters::new(id(3), ExecutionOrder::None);
        r.state = ActivityState::Active;
        r.state_timeout_deadline = Some(4.0);
        r.receive_already_active(id(1));
        assert_eq!(r.state, ActivityState::Inactive);
        assert_eq!(r.state_timeout_deadline, None);
        r.receive_already_active(id(1));
        assert_eq!(r.state, ActivityState::Inactive);
    }

    #[test]
    fn parent_assigned_triggers_only_top_down() {
        let mut out = Vec::new();
        let mut td = AgentRegisters::new(id(1), ExecutionOrder::TopDown);
        td.children.insert(id(3));
        td.receive_parent_assigned(id(3), &mut out);
        assert_eq!(out, vec![Action::Trigger(TriggerReason::ParentAssigned)]);

        out.clear();
        let mut bu = AgentRegisters::new(id(1), ExecutionOrder::BottomUp);
        bu.children.insert(id(3));
        bu.receive_parent_assigned(id(3), &mut out);
        assert!(out.is_empty());

        out.clear();
        td.receive_parent_assigned(id(8), &mut out);
        assert_eq!(out, vec![Action::Stale(StaleKind::ParentAssigned)]);
    }

    #[test]
    fn execution_order_round_trips_through_text() {
        for o in [
            ExecutionOrder::TopDown,
            ExecutionOrder::BottomUp,
            ExecutionOrder::None,
        ] {
            assert_eq!(o.to_string().parse::<ExecutionOrder>(), Ok(o));
            assert_eq!(serde_json::to_string(&o).unwrap(), format!("\"{o}\""));
        }
        assert!("dpop".parse::<ExecutionOrder>().is_err());
    }

    #[test]
    fn message_kinds_cover_every_body() {
        let bodies = [
            MessageBody::Announce,
            MessageBody::AnnounceResponse { child_count: 1 },
            MessageBody::AddMe,
            MessageBody::ChildAdded { samples: vec![] },
            MessageBody::AlreadyActive,
            MessageBody::ParentAssigned,
            MessageBody::KeepAlive,
            MessageBody::Solver(SolverMessage::Util(Default::default())),
            MessageBody::Solver(SolverMessage::Value(0.0)),
        ];
        let kinds: Vec<MessageKind> = bodies
            .into_iter()
            .map(|b| GraphMessage::new(id(0), b).kind())
            .collect();
        assert_eq!(kinds, MessageKind::ALL.to_vec());
        for (i, k) in MessageKind::ALL.iter().enumerate() {
            assert_eq!(k.index(), i);
        }
    }
}
