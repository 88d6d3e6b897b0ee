//! Utility tables for bottom-up propagation over the hierarchy.
//!
//! A child summarises its whole subtree as one table keyed by its parent's
//! candidate values: the cheapest subtree cost for each parent value and
//! the own value that achieves it. Once the root picks its value, values
//! flow back down by table lookup.

use serde::{Deserialize, Serialize};

use crate::model::ConstraintEdge;
use crate::protocol::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilEntry {
    pub parent_value: f64,
    pub cost: f64,
    pub best_own: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UtilTable {
    pub entries: Vec<UtilEntry>,
}

impl UtilTable {
    /// Entry for `parent_value`, falling back to the nearest key. The flag
    /// is false when the fallback was used.
    pub fn lookup(&self, parent_value: f64) -> Option<(&UtilEntry, bool)> {
        if let Some(e) = self.entries.iter().find(|e| e.parent_value == parent_value) {
            return Some((e, true));
        }
        self.entries
            .iter()
            .min_by(|a, b| {
                (a.parent_value - parent_value)
                    .abs()
                    .total_cmp(&(b.parent_value - parent_value).abs())
            })
            .map(|e| (e, false))
    }

    pub fn cost_at(&self, parent_value: f64) -> f64 {
        self.lookup(parent_value).map_or(0.0, |(e, _)| e.cost)
    }
}

fn subtree_cost(own: f64, child_tables: &[&UtilTable]) -> f64 {
    child_tables.iter().map(|t| t.cost_at(own)).sum()
}

/// Builds `me`'s table for its parent. `parent_edge` is the constraint
/// between `me` and the parent; `child_tables` are keyed by `me`'s samples.
pub fn build_util_table(
    me: AgentId,
    own_samples: &[f64],
    parent_samples: &[f64],
    parent_edge: &ConstraintEdge,
    child_tables: &[&UtilTable],
) -> UtilTable {
    let below: Vec<f64> = own_samples
        .iter()
        .map(|&v| subtree_cost(v, child_tables))
        .collect();
    let entries = parent_samples
        .iter()
        .filter_map(|&p| {
            let mut best: Option<(f64, f64)> = None;
            for (&v, &sub) in own_samples.iter().zip(&below) {
                let c = parent_edge.eval_from(me, v, p) + sub;
                if best.is_none_or(|(bc, _)| c < bc) {
                    best = Some((c, v));
                }
            }
            best.map(|(cost, best_own)| UtilEntry {
                parent_value: p,
                cost,
                best_own,
            })
        })
        .collect();
    UtilTable { entries }
}

/// Value choice of an agent without a parent: the sample with the cheapest
/// combined subtree cost (earliest sample on ties).
pub fn choose_root_value(own_samples: &[f64], child_tables: &[&UtilTable]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &v in own_samples {
        let c = subtree_cost(v, child_tables);
        if best.is_none_or(|(bc, _)| c < bc) {
            best = Some((c, v));
        }
    }
    best.map(|(_, v)| v)
}

/// Own value for the parent's chosen value. The flag is false when the
/// parent value was not a table key and the nearest key was used instead.
pub fn choose_value_from_util(parent_value: f64, table: &UtilTable) -> Option<(f64, bool)> {
    table
        .lookup(parent_value)
        .map(|(e, exact)| (e.best_own, exact))
}

/// Fault containment: forward a table only if it differs from the one last
/// sent by more than `tol` in some entry.
pub fn should_propagate(previous: Option<&UtilTable>, next: &UtilTable, tol: f64) -> bool {
    let Some(prev) = previous else {
        return true;
    };
    prev.entries.len() != next.entries.len()
        || prev
            .entries
            .iter()
            .zip(&next.entries)
            .any(|(a, b)| a.parent_value != b.parent_value || (a.cost - b.cost).abs() > tol)
}
