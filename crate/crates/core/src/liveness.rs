//! Keep-alive exchange and removal of unreachable neighbors.
//!
//! Every agent periodically sends a keep-alive to each neighbor and, on a
//! slower period, drops any neighbor it has not heard from since the last
//! inspection. A neighbor linked after the previous inspection is exempt
//! once, so a handshake that completes just before an inspection is not
//! mistaken for a silent neighbor.

use std::collections::BTreeSet;

use crate::protocol::{Action, AgentId, AgentRegisters, GraphMessage, MessageBody};
use crate::solver::TriggerReason;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeepAliveRegister {
    pub heard_from: BTreeSet<AgentId>,
    /// Neighbors linked since the last inspection.
    pub grace: BTreeSet<AgentId>,
}

impl KeepAliveRegister {
    pub fn receive_keep_alive(&mut self, j: AgentId) {
        self.heard_from.insert(j);
    }

    pub fn note_linked(&mut self, j: AgentId) {
        self.grace.insert(j);
    }

    pub fn clear(&mut self) {
        self.heard_from.clear();
        self.grace.clear();
    }
}

pub fn send_keep_alive(regs: &AgentRegisters, out: &mut Vec<Action>) {
    for to in regs.neighbors() {
        out.push(Action::Send {
            to,
            msg: GraphMessage::new(regs.id, MessageBody::KeepAlive),
        });
    }
}

/// Drops every neighbor missing from the keep-alive list. Emits one
/// `Unlink` per removed neighbor and at most one solver trigger. Returns
/// the removed neighbors.
pub fn inspect_neighbors(
    regs: &mut AgentRegisters,
    ka: &mut KeepAliveRegister,
    out: &mut Vec<Action>,
) -> Vec<AgentId> {
    let silent: Vec<AgentId> = regs
        .neighbors()
        .filter(|j| !ka.heard_from.contains(j) && !ka.grace.contains(j))
        .collect();
    for &j in &silent {
        regs.drop_neighbor(j);
        out.push(Action::Unlink(j));
    }
    ka.clear();
    if !silent.is_empty() {
        out.push(Action::Trigger(TriggerReason::NeighborRemoved));
    }
    silent
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{ActivityState, ExecutionOrder, MessageKind};

    fn id(i: u32) -> AgentId {
        AgentId(i)
    }

    fn regs(me: u32, parent: Option<u32>, children: &[u32]) -> AgentRegisters {
        let mut r = AgentRegisters::new(id(me), ExecutionOrder::TopDown);
        r.parent = parent.map(id);
        r.children = children.iter().copied().map(id).collect();
        r
    }

    fn targets(out: &[Action]) -> Vec<AgentId> {
        out.iter()
            .map(|a| match a {
                Action::Send { to, msg } => {
                    assert_eq!(msg.kind(), MessageKind::KeepAlive);
                    *to
                }
                other => panic!("unexpected {other:?}"),
            })
            .collect()
    }

    #[test]
    fn keep_alive_goes_to_every_neighbor() {
        let mut out = Vec::new();
        send_keep_alive(&regs(3, Some(1), &[4, 5]), &mut out);
        assert_eq!(targets(&out), vec![id(1), id(4), id(5)]);

        out.clear();
        send_keep_alive(&regs(3, None, &[]), &mut out);
        assert!(out.is_empty());

        send_keep_alive(&regs(3, Some(1), &[]), &mut out);
        assert_eq!(targets(&out), vec![id(1)]);
    }

    #[test]
    fn receive_is_idempotent_and_tolerates_strangers() {
        let mut ka = KeepAliveRegister::default();
        ka.receive_keep_alive(id(2));
        ka.receive_keep_alive(id(2));
        assert_eq!(ka.heard_from, BTreeSet::from([id(2)]));
        ka.receive_keep_alive(id(9));
        assert_eq!(ka.heard_from, BTreeSet::from([id(2), id(9)]));

        // 9 is not a neighbor: inspection neither removes nor keeps anything for it
        let mut r = regs(3, Some(2), &[]);
        let mut out = Vec::new();
        assert!(inspect_neighbors(&mut r, &mut ka, &mut out).is_empty());
        assert!(out.is_empty());
        assert_eq!(r.parent, Some(id(2)));
    }

    #[test]
    fn lost_parent_resets_to_inactive_and_triggers() {
        let mut r = regs(3, Some(1), &[4]);
        let mut ka = KeepAliveRegister::default();
        ka.receive_keep_alive(id(4));
        let mut out = Vec::new();
        let removed = inspect_neighbors(&mut r, &mut ka, &mut out);
        assert_eq!(removed, vec![id(1)]);
        assert_eq!(r.parent, None);
        assert_eq!(r.state, ActivityState::Inactive);
        assert!(r.children.contains(&id(4)));
        assert_eq!(
            out,
            vec![
                Action::Unlink(id(1)),
                Action::Trigger(TriggerReason::NeighborRemoved)
            ]
        );
        assert!(ka.heard_from.is_empty());
    }

    #[test]
    fn all_heard_is_a_noop() {
        let mut r = regs(3, Some(1), &[4]);
        let mut ka = KeepAliveRegister::default();
        ka.receive_keep_alive(id(1));
        ka.receive_keep_alive(id(4));
        let before = r.clone();
        let mut out = Vec::new();
        inspect_neighbors(&mut r, &mut ka, &mut out);
        assert!(out.is_empty());
        assert_eq!(r, before);
        assert!(ka.heard_from.is_empty());
    }

    #[test]
    fn several_removals_trigger_once() {
        let mut r = regs(3, None, &[4, 5, 6]);
        r.respondents.push((id(5), 0));
        let mut ka = KeepAliveRegister::default();
        ka.receive_keep_alive(id(4));
        let mut out = Vec::new();
        inspect_neighbors(&mut r, &mut ka, &mut out);
        assert_eq!(r.children, BTreeSet::from([id(4)]));
        assert!(r.respondents.is_empty());
        let triggers = out
            .iter()
            .filter(|a| matches!(a, Action::Trigger(_)))
            .count();
        assert_eq!(triggers, 1);
        assert!(out.contains(&Action::Unlink(id(5))));
        assert!(out.contains(&Action::Unlink(id(6))));
    }

    #[test]
    fn freshly_linked_neighbor_survives_one_inspection() {
        let mut r = regs(3, None, &[4]);
        let mut ka = KeepAliveRegister::default();
        ka.note_linked(id(4));
        let mut out = Vec::new();
        assert!(inspect_neighbors(&mut r, &mut ka, &mut out).is_empty());
        assert!(r.children.contains(&id(4)));
        assert_eq!(inspect_neighbors(&mut r, &mut ka, &mut out), vec![id(4)]);
    }
}
