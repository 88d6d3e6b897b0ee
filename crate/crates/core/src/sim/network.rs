//! Transport delay model and announce visibility.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::AgentId;

/// Occasional long delays, active until `until` (simulated seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeavyTail {
    pub probability: f64,
    pub max_delay: f64,
    pub until: f64,
}

/// Every message is delivered exactly once after a delay drawn uniformly
/// from `[min_delay, max_delay]`, or from the heavy tail when configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub min_delay: f64,
    pub max_delay: f64,
    pub tail: Option<HeavyTail>,
}

impl Default for NetworkModel {
    fn default() -> Self {
        NetworkModel {
            min_delay: 0.01,
            max_delay: 0.1,
            tail: None,
        }
    }
}

impl NetworkModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_delay >= 0.0
            && self.min_delay <= self.max_delay
            && self.max_delay.is_finite())
        {
            return Err(format!(
                "network delay range [{}, {}] is invalid",
                self.min_delay, self.max_delay
            ));
        }
        if let Some(t) = self.tail {
            if !(0.0..=1.0).contains(&t.probability)
                || t.max_delay.is_nan()
                || t.max_delay < self.max_delay
            {
                return Err("heavy-tail delay parameters are invalid".into());
            }
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, now: f64, rng: &mut R) -> f64 {
        if let Some(t) = self.tail {
            if now < t.until && rng.random_bool(t.probability) {
                return rng.random_range(self.max_delay..=t.max_delay);
            }
        }
        rng.random_range(self.min_delay..=self.max_delay)
    }
}

/// Which agents hear an agent's announce broadcast.
pub trait Visibility {
    fn audience(&self, from: AgentId, live: &BTreeSet<AgentId>) -> Vec<AgentId>;
}

/// Every live agent hears every broadcast.
#[derive(Debug, Clone, Copy, Default)]
pub struct GlobalVisibility;

impl Visibility for GlobalVisibility {
    fn audience(&self, from: AgentId, live: &BTreeSet<AgentId>) -> Vec<AgentId> {
        live.iter().copied().filter(|&a| a != from).collect()
    }
}

/// Agents hear broadcasts only from ids within `range` of their own.
#[derive(Debug, Clone, Copy)]
pub struct IdRangeVisibility {
    pub range: u32,
}

impl Visibility for IdRangeVisibility {
    fn audience(&self, from: AgentId, live: &BTreeSet<AgentId>) -> Vec<AgentId> {
        live.iter()
            .copied()
            .filter(|&a| a != from && a.0.abs_diff(from.0) <= self.range)
            .collect()
    }
}
