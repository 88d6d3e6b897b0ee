//! DCOP data model: domains, quadratic binary constraints, the global
//! objective, environment events and the environment state they act on.
//!
//! Constraint edges follow the hierarchy: one edge per established
//! parent/child pair. An edge `f(x, y) = a·x² + b·x·y + c·y²` always binds
//! `x` to the lower-indexed endpoint.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::AgentId;

pub const DOMAIN_LOWER: f64 = -50.0;
pub const DOMAIN_UPPER: f64 = 50.0;
pub const SAMPLE_COUNT: usize = 3;
pub const COEFFICIENT_BOUND: f64 = 5.0;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a stream name and indices into an independent
/// stream seed.
pub fn derive_seed(seed: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut h = splitmix(seed);
    for b in tag.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    for &p in parts {
        h = splitmix(h ^ p);
    }
    h
}

pub fn rng_stream(seed: u64, tag: &str, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, parts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: f64,
    pub upper: f64,
    pub samples: Vec<f64>,
}

impl Domain {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

pub fn sample_domain<R: Rng + ?Sized>(rng: &mut R) -> Domain {
    let samples = (0..SAMPLE_COUNT)
        .map(|_| rng.random_range(DOMAIN_LOWER..=DOMAIN_UPPER))
        .collect();
    Domain {
        lower: DOMAIN_LOWER,
        upper: DOMAIN_UPPER,
        samples,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Coefficients {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Coefficients { a, b, c }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut draw = || rng.random_range(-COEFFICIENT_BOUND..=COEFFICIENT_BOUND);
        Coefficients {
            a: draw(),
            b: draw(),
            c: draw(),
        }
    }
}

/// Unordered agent pair, stored lower id first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub lo: AgentId,
    pub hi: AgentId,
}

impl EdgeKey {
    /// `None` for a self-loop.
    pub fn new(a: AgentId, b: AgentId) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(EdgeKey { lo: a, hi: b }),
            std::cmp::Ordering::Greater => Some(EdgeKey { lo: b, hi: a }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn other(&self, me: AgentId) -> AgentId {
        if me == self.lo {
            self.hi
        } else {
            self.lo
        }
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEdge {
    pub key: EdgeKey,
    pub coefficients: Coefficients,
}

impl ConstraintEdge {
    /// Cost with `x_value` for the lower endpoint and `y_value` for the
    /// higher one.
    pub fn eval(&self, x_value: f64, y_value: f64) -> f64 {
        eval_constraint(&self.coefficients, x_value, y_value)
    }

    /// Cost given `me`'s value and the other endpoint's value.
    pub fn eval_from(&self, me: AgentId, mine: f64, theirs: f64) -> f64 {
        if me == self.key.lo {
            self.eval(mine, theirs)
        } else {
            self.eval(theirs, mine)
        }
    }
}

pub fn eval_constraint(k: &Coefficients, x: f64, y: f64) -> f64 {
    k.a * x * x + k.b * x * y + k.c * y * y
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub values: BTreeMap<AgentId, f64>,
}

impl Assignment {
    pub fn get(&self, a: AgentId) -> Option<f64> {
        self.values.get(&a).copied()
    }

    pub fn set(&mut self, a: AgentId, v: f64) {
        self.values.insert(a, v);
    }
}

impl FromIterator<(AgentId, f64)> for Assignment {
    fn from_iter<T: IntoIterator<Item = (AgentId, f64)>>(iter: T) -> Self {
        Assignment {
            values: iter.into_iter().collect(),
        }
    }
}

/// Sum of every edge's cost under `sigma`, in iteration order.
pub fn global_cost<'a, I>(edges: I, sigma: &Assignment) -> Result<f64>
where
    I: IntoIterator<Item = &'a ConstraintEdge>,
{
    let mut total = 0.0;
    for e in edges {
        let x = sigma
            .get(e.key.lo)
            .ok_or(Error::IncompleteAssignment(e.key.lo))?;
        let y = sigma
            .get(e.key.hi)
            .ok_or(Error::IncompleteAssignment(e.key.hi))?;
        total += e.eval(x, y);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeSelector {
    /// Pick uniformly among the edges existing when the event fires.
    Random,
    Between(AgentId, AgentId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvironmentEvent {
    AddAgent(AgentId),
    RemoveAgent(AgentId),
    ChangeConstraint(EdgeSelector),
}

impl fmt::Display for EnvironmentEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvironmentEvent::AddAgent(a) => write!(f, "add {a}"),
            EnvironmentEvent::RemoveAgent(a) => write!(f, "remove {a}"),
            EnvironmentEvent::ChangeConstraint(EdgeSelector::Random) => {
                f.write_str("change random")
            }
            EnvironmentEvent::ChangeConstraint(EdgeSelector::Between(a, b)) => {
                write!(f, "change {a} {b}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub at: f64,
    pub event: EnvironmentEvent,
}

/// Timed environment events, one per line in text form:
///
/// ```text
/// # time kind payload
/// 0 add 0
/// 5 add 1
/// 10 change random
/// 15 change 0 1
/// 20 remove 1
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventScript {
    pub entries: Vec<ScriptEntry>,
}

impl EventScript {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        EventScript { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    pub fn to_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }
}

fn parse_id(tok: Option<&str>, line: usize) -> Result<AgentId> {
    let tok = tok.ok_or_else(|| Error::ScriptSyntax {
        line,
        message: "missing agent id".into(),
    })?;
    tok.parse::<u32>()
        .map(AgentId)
        .map_err(|_| Error::ScriptSyntax {
            line,
            message: format!("bad agent id {tok:?}"),
        })
}

impl FromStr for EventScript {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut entries: Vec<ScriptEntry> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut toks = content.split_whitespace();
            let at_tok = toks.next().unwrap_or_default();
            let at: f64 = at_tok.parse().map_err(|_| Error::ScriptSyntax {
                line,
                message: format!("bad timestamp {at_tok:?}"),
            })?;
            if !at.is_finite() || at < 0.0 {
                return Err(Error::ScriptSyntax {
                    line,
                    message: format!("timestamp must be finite and non-negative, got {at}"),
                });
            }
            if entries.last().is_some_and(|prev| prev.at > at) {
                return Err(Error::ScriptSyntax {
                    line,
                    message: "timestamps must be non-decreasing".into(),
                });
            }
            let event = match toks.next() {
                Some("add") => EnvironmentEvent::AddAgent(parse_id(toks.next(), line)?),
                Some("remove") => EnvironmentEvent::RemoveAgent(parse_id(toks.next(), line)?),
                Some("change") => match toks.next() {
                    Some("random") => EnvironmentEvent::ChangeConstraint(EdgeSelector::Random),
                    first => {
                        let a = parse_id(first, line)?;
                        let b = parse_id(toks.next(), line)?;
                        EnvironmentEvent::ChangeConstraint(EdgeSelector::Between(a, b))
                    }
                },
                other => {
                    return Err(Error::ScriptSyntax {
                        line,
                        message: format!("unknown event kind {other:?}"),
                    })
                }
            };
            if let Some(extra) = toks.next() {
                return Err(Error::ScriptSyntax {
                    line,
                    message: format!("unexpected trailing token {extra:?}"),
                });
            }
            entries.push(ScriptEntry { at, event });
        }
        Ok(EventScript { entries })
    }
}

impl fmt::Display for EventScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{} {}", e.at, e.event)?;
        }
        Ok(())
    }
}

/// What an applied event changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applied {
    Added(AgentId),
    Removed(AgentId),
    Changed(EdgeKey),
}

/// Simulator-owned problem state: who is present, their domains and the
/// constraint edges currently in force.
///
/// Domains and initial edge coefficients are derived from the problem seed
/// and the agent / pair identity, so they do not depend on the order in
/// which a run happens to create them.
#[derive(Debug, Clone)]
pub struct Environment {
    problem_seed: u64,
    domains: BTreeMap<AgentId, Domain>,
    edges: BTreeMap<EdgeKey, ConstraintEdge>,
    versions: BTreeMap<EdgeKey, u64>,
    live: BTreeSet<AgentId>,
    removed: BTreeSet<AgentId>,
}

impl Environment {
    pub fn new(problem_seed: u64) -> Self {
        Environment {
            problem_seed,
            domains: BTreeMap::new(),
            edges: BTreeMap::new(),
            versions: BTreeMap::new(),
            live: BTreeSet::new(),
            removed: BTreeSet::new(),
        }
    }

    pub fn live(&self) -> &BTreeSet<AgentId> {
        &self.live
    }

    pub fn is_live(&self, a: AgentId) -> bool {
        self.live.contains(&a)
    }

    pub fn domain(&self, a: AgentId) -> Option<&Domain> {
        self.domains.get(&a)
    }

    pub fn edges(&self) -> impl Iterator<Item = &ConstraintEdge> {
        self.edges.values()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, a: AgentId, b: AgentId) -> Option<&ConstraintEdge> {
        EdgeKey::new(a, b).and_then(|k| self.edges.get(&k))
    }

    pub fn incident(&self, a: AgentId) -> impl Iterator<Item = &ConstraintEdge> {
        self.edges
            .values()
            .filter(move |e| e.key.lo == a || e.key.hi == a)
    }

    fn coefficients_for(&self, key: EdgeKey) -> Coefficients {
        let version = self.versions.get(&key).copied().unwrap_or(0);
        let mut rng = rng_stream(
            self.problem_seed,
            "coefficients",
            &[u64::from(key.lo.0), u64::from(key.hi.0), version],
        );
        Coefficients::sample(&mut rng)
    }

    /// Creates the edge between `a` and `b` unless it already exists.
    pub fn link(&mut self, a: AgentId, b: AgentId) -> Option<&ConstraintEdge> {
        let key = EdgeKey::new(a, b)?;
        if !self.edges.contains_key(&key) {
            let coefficients = self.coefficients_for(key);
            self.edges.insert(key, ConstraintEdge { key, coefficients });
        }
        self.edges.get(&key)
    }

    pub fn unlink(&mut self, a: AgentId, b: AgentId) -> bool {
        EdgeKey::new(a, b)
            .and_then(|k| self.edges.remove(&k))
            .is_some()
    }

    /// Removes every edge incident to `a`.
    pub fn unlink_all(&mut self, a: AgentId) {
        self.edges.retain(|k, _| k.lo != a && k.hi != a);
    }

    pub fn clear_edges(&mut self) {
        self.edges.clear();
    }

    /// Applies one event. `selection` drives random edge choice.
    pub fn apply<R: Rng + ?Sized>(
        &mut self,
        event: &EnvironmentEvent,
        selection: &mut R,
    ) -> std::result::Result<Applied, String> {
        match *event {
            EnvironmentEvent::AddAgent(a) => {
                if self.live.contains(&a) || self.removed.contains(&a) {
                    return Err(format!("agent {a} already used"));
                }
                let mut rng = rng_stream(self.problem_seed, "domain", &[u64::from(a.0)]);
                self.domains.insert(a, sample_domain(&mut rng));
                self.live.insert(a);
                Ok(Applied::Added(a))
            }
            EnvironmentEvent::RemoveAgent(a) => {
                if !self.live.remove(&a) {
                    return Err(format!("agent {a} is not present"));
                }
                self.removed.insert(a);
                Ok(Applied::Removed(a))
            }
            EnvironmentEvent::ChangeConstraint(selector) => {
                let key = match selector {
                    EdgeSelector::Random => {
                        if self.edges.is_empty() {
                            return Err("no constraint edge to change".into());
                        }
                        let k = selection.random_range(0..self.edges.len());
                        *self.edges.keys().nth(k).expect("index in range")
                    }
                    EdgeSelector::Between(a, b) => {
                        let key = EdgeKey::new(a, b)
                            .ok_or_else(|| format!("self-loop ({a}, {a}) is not an edge"))?;
                        if !self.edges.contains_key(&key) {
                            return Err(format!("no constraint edge {key}"));
                        }
                        key
                    }
                };
                *self.versions.entry(key).or_insert(0) += 1;
                let coefficients = self.coefficients_for(key);
                self.edges
                    .get_mut(&key)
                    .expect("checked above")
                    .coefficients = coefficients;
                Ok(Applied::Changed(key))
            }
        }
    }
}
