//! Omniscient observer: hierarchy validity, stabilization detection and
//! message accounting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::policy::PolicyConfig;
use crate::protocol::{AgentId, MessageKind};
use crate::solver::TriggerReason;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HierarchySnapshot {
    pub at: f64,
    pub parent_of: BTreeMap<AgentId, Option<AgentId>>,
    pub children_of: BTreeMap<AgentId, BTreeSet<AgentId>>,
    pub live: BTreeSet<AgentId>,
    /// Agents removed so recently that neighbors may not have noticed yet.
    #[serde(default)]
    pub undetected: BTreeSet<AgentId>,
    /// No handshake message in flight and no agent mid-attempt.
    pub quiescent: bool,
}

impl HierarchySnapshot {
    /// Same parent and children registers, ignoring time.
    pub fn same_shape(&self, other: &HierarchySnapshot) -> bool {
        self.parent_of == other.parent_of && self.children_of == other.children_of
    }

    pub fn roots(&self) -> Vec<AgentId> {
        self.parent_of
            .iter()
            .filter(|(_, p)| p.is_none())
            .map(|(&a, _)| a)
            .collect()
    }

    pub fn tree_count(&self) -> usize {
        self.roots().len()
    }

    /// Longest parent chain; a lone root has depth 0. Cycles are cut at
    /// the number of agents.
    pub fn max_depth(&self) -> usize {
        let limit = self.parent_of.len();
        self.parent_of
            .keys()
            .map(|&a| {
                let mut depth = 0;
                let mut cur = a;
                while let Some(Some(p)) = self.parent_of.get(&cur) {
                    depth += 1;
                    cur = *p;
                    if depth > limit {
                        break;
                    }
                }
                depth
            })
            .max()
            .unwrap_or(0)
    }

    /// One tree whose root is the lowest live agent.
    pub fn is_single_tree_rooted_at_min(&self) -> bool {
        match self.live.first() {
            None => true,
            Some(&min) => self.roots() == [min] && self.max_depth() < self.live.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Cycle {
        agent: AgentId,
    },
    Ordering {
        parent: AgentId,
        child: AgentId,
    },
    OutDegree {
        agent: AgentId,
        children: usize,
        max: usize,
    },
    MultipleParents {
        child: AgentId,
        parents: Vec<AgentId>,
    },
    Inconsistent {
        parent: AgentId,
        child: AgentId,
    },
    DanglingReference {
        agent: AgentId,
        missing: AgentId,
    },
    StuckActive {
        agent: AgentId,
    },
}

/// Checks acyclicity, parent/child ordering and out-degrees. When
/// `consistency` is set (quiescent snapshots) also requires that parent and
/// children registers agree and reference only live agents, except agents
/// still within the failure-detection bound.
pub fn validate_hierarchy(
    s: &HierarchySnapshot,
    policy: &PolicyConfig,
    consistency: bool,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let limit = s.parent_of.len();
    for (&a, &p) in &s.parent_of {
        if let Some(p) = p {
            if p >= a {
                out.push(Violation::Ordering {
                    parent: p,
                    child: a,
                });
            }
        }
        let mut cur = a;
        let mut steps = 0;
        while let Some(Some(next)) = s.parent_of.get(&cur) {
            cur = *next;
            steps += 1;
            if cur == a || steps > limit {
                out.push(Violation::Cycle { agent: a });
                break;
            }
        }
    }
    for (&a, kids) in &s.children_of {
        if kids.len() > policy.max_out_degree {
            out.push(Violation::OutDegree {
                agent: a,
                children: kids.len(),
                max: policy.max_out_degree,
            });
        }
        for &c in kids {
            if c <= a {
                out.push(Violation::Ordering {
                    parent: a,
                    child: c,
                });
            }
        }
    }
    if !consistency {
        return out;
    }
    let mut claimed: BTreeMap<AgentId, Vec<AgentId>> = BTreeMap::new();
    for (&a, kids) in &s.children_of {
        for &c in kids {
            claimed.entry(c).or_default().push(a);
            if s.undetected.contains(&c) && !s.live.contains(&c) {
                continue;
            }
            if !s.live.contains(&c) {
                out.push(Violation::DanglingReference {
                    agent: a,
                    missing: c,
                });
            } else if s.parent_of.get(&c).copied().flatten() != Some(a) {
                out.push(Violation::Inconsistent {
                    parent: a,
                    child: c,
                });
            }
        }
    }
    for (child, parents) in claimed {
        if parents.len() > 1 {
            out.push(Violation::MultipleParents { child, parents });
        }
    }
    for (&a, &p) in &s.parent_of {
        let Some(p) = p else { continue };
        if s.undetected.contains(&p) && !s.live.contains(&p) {
            continue;
        }
        if !s.live.contains(&p) {
            out.push(Violation::DanglingReference {
                agent: a,
                missing: p,
            });
        } else if !s.children_of.get(&p).is_some_and(|k| k.contains(&a)) {
            out.push(Violation::Inconsistent {
                parent: p,
                child: a,
            });
        }
    }
    out
}

/// Start of the final run of identically-shaped snapshots taken at or after
/// `after`, provided that run lasts at least `min_window`.
pub fn check_stabilization(
    snapshots: &[HierarchySnapshot],
    after: f64,
    min_window: f64,
) -> Option<f64> {
    let tail: Vec<&HierarchySnapshot> = snapshots.iter().filter(|s| s.at >= after).collect();
    let last = *tail.last()?;
    let mut start = tail.len() - 1;
    while start > 0 && tail[start - 1].same_shape(last) {
        start -= 1;
    }
    let since = tail[start].at;
    (last.at - since >= min_window).then_some(since)
}

/// Per-kind message counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MessageCounts(pub [u64; MessageKind::ALL.len()]);

impl MessageCounts {
    pub fn add(&mut self, kind: MessageKind) {
        self.0[kind.index()] += 1;
    }

    pub fn get(&self, kind: MessageKind) -> u64 {
        self.0[kind.index()]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    /// Everything except periodic keep-alives.
    pub fn event_driven(&self) -> u64 {
        self.total() - self.get(MessageKind::KeepAlive)
    }

    pub fn solver(&self) -> u64 {
        self.get(MessageKind::Util) + self.get(MessageKind::Value)
    }

    pub fn by_name(&self) -> BTreeMap<String, u64> {
        MessageKind::ALL
            .iter()
            .map(|k| (k.as_str().to_string(), self.get(*k)))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Counters {
    /// Messages enqueued, one per recipient.
    pub sent: MessageCounts,
    pub delivered: u64,
    pub dropped: u64,
    pub stale_child_added: u64,
    pub stale_parent_assigned: u64,
    pub triggers: BTreeMap<TriggerReason, u64>,
    pub solver_runs: u64,
}

impl Counters {
    pub fn enqueued(&self) -> u64 {
        self.sent.total()
    }
}

/// One line of the per-run output stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub event_index: Option<usize>,
    pub event: Option<String>,
    pub at: f64,
    pub global_cost: f64,
    pub messages_by_kind: BTreeMap<String, u64>,
    pub total_messages: u64,
    pub event_messages: u64,
    pub live_agents: usize,
    pub tree_count: usize,
    pub max_depth: usize,
    pub violations: Vec<Violation>,
}
