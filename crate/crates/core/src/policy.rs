//! Response predicate, respondent selection and the out-degree cap.
//!
//! The predicate answers "may agent `i` become the parent of announcing
//! agent `j`?". It compares identifiers only, so two agents can never accept
//! each other and the parent relation stays acyclic no matter how
//! announcements interleave. The out-degree cap is folded into the same
//! check; [`crate::protocol::AgentRegisters::receive_add_me`] repeats it to
//! close races between concurrent joins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub max_out_degree: usize,
    pub tie_break: TieBreak,
}

impl PolicyConfig {
    pub fn new(max_out_degree: usize) -> Result<Self> {
        if max_out_degree == 0 {
            return Err(Error::InvalidConfig(
                "max out-degree must be at least 1".into(),
            ));
        }
        Ok(PolicyConfig {
            max_out_degree,
            tie_break: TieBreak::LowestId,
        })
    }
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            max_out_degree: 3,
            tie_break: TieBreak::LowestId,
        }
    }
}

/// Whether agent `i`, currently holding `child_count_of_i` children, should
/// answer an announcement from `j`.
pub fn phi(i: AgentId, j: AgentId, child_count_of_i: usize, cfg: &PolicyConfig) -> bool {
    i < j && child_count_of_i < cfg.max_out_degree
}

/// Picks the insertion point among respondents: fewest children first, then
/// by the configured tie-break.
pub fn select_respondent(respondents: &[(AgentId, usize)], cfg: &PolicyConfig) -> Option<AgentId> {
    match cfg.tie_break {
        TieBreak::LowestId => respondents
            .iter()
            .min_by_key(|(id, count)| (*count, *id))
            .map(|(id, _)| *id),
    }
}
