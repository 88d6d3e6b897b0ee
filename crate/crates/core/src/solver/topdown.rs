//! Greedy top-down assignment with a closed-form continuous candidate.

use crate::model::{eval_constraint, Coefficients, DOMAIN_LOWER, DOMAIN_UPPER};

/// One incident constraint seen from the deciding agent, with the other
/// endpoint's value fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTerm {
    pub coefficients: Coefficients,
    /// True when the deciding agent is the lower-indexed endpoint.
    pub self_is_x: bool,
    pub neighbor_value: f64,
}

impl LocalTerm {
    /// Coefficient of v² in this term.
    pub fn alpha(&self) -> f64 {
        if self.self_is_x {
            self.coefficients.a
        } else {
            self.coefficients.c
        }
    }

    /// Coefficient of v in this term.
    pub fn beta(&self) -> f64 {
        self.coefficients.b * self.neighbor_value
    }

    pub fn cost(&self, v: f64) -> f64 {
        if self.self_is_x {
            eval_constraint(&self.coefficients, v, self.neighbor_value)
        } else {
            eval_constraint(&self.coefficients, self.neighbor_value, v)
        }
    }
}

pub fn local_cost(terms: &[LocalTerm], v: f64) -> f64 {
    terms.iter().map(|t| t.cost(v)).sum()
}

/// Stationary point of the summed quadratic, clamped to the domain bounds.
/// `None` unless the quadratic is strictly convex.
pub fn analytic_refine(terms: &[LocalTerm]) -> Option<f64> {
    let alpha: f64 = terms.iter().map(LocalTerm::alpha).sum();
    if alpha <= 0.0 {
        return None;
    }
    let beta: f64 = terms.iter().map(LocalTerm::beta).sum();
    Some((-beta / (2.0 * alpha)).clamp(DOMAIN_LOWER, DOMAIN_UPPER))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub value: f64,
    pub cost: f64,
}

fn argmin(candidates: impl IntoIterator<Item = f64>, cost: impl Fn(f64) -> f64) -> Option<Choice> {
    let mut best: Option<Choice> = None;
    for value in candidates {
        let c = cost(value);
        if best.is_none_or(|b| c < b.cost) {
            best = Some(Choice { value, cost: c });
        }
    }
    best
}

/// Picks the agent's value given its already-assigned neighbors.
///
/// With no assigned neighbor the agent minimizes `Σ α·v²` over its own
/// incident edges (`own_alphas`), falling back to the first sample when it
/// has no edge. Otherwise the candidates are the domain samples plus, when
/// `refine` is set, the analytic stationary point (or both bounds when the
/// quadratic is not convex). Ties keep the earliest candidate.
pub fn top_down_assign(
    samples: &[f64],
    terms: &[LocalTerm],
    own_alphas: &[f64],
    refine: bool,
) -> Choice {
    let fallback = Choice {
        value: samples.first().copied().unwrap_or(0.0),
        cost: 0.0,
    };
    if terms.is_empty() {
        let alpha: f64 = own_alphas.iter().sum();
        return argmin(samples.iter().copied(), |v| alpha * v * v).unwrap_or(fallback);
    }
    let mut candidates = samples.to_vec();
    if refine {
        match analytic_refine(terms) {
            Some(v) => candidates.push(v),
            None => candidates.extend([DOMAIN_LOWER, DOMAIN_UPPER]),
        }
    }
    argmin(candidates, |v| local_cost(terms, v)).unwrap_or(fallback)
}
