use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::fault::FaultKind;
use super::latency::{Latency, DEFAULT_DELTA};
use super::trace::Time;
use crate::consensus::{DeadlockPolicy, QuorumRule};
use crate::ident::{IdSpace, IdentError, Identifier, DEFAULT_BITS};
use crate::ledger::DEFAULT_GRANT;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario json: {0}")]
    Json(serde_json::Error),
    #[error(transparent)]
    Ident(#[from] IdentError),
    #[error("unknown account `{0}`")]
    UnknownAccount(String),
    #[error("unknown transaction label `{0}`")]
    UnknownLabel(String),
    #[error("{0}")]
    Invalid(String),
}

impl From<serde_json::Error> for ScenarioError {
    fn from(e: serde_json::Error) -> Self {
        ScenarioError::Json(e)
    }
}

/// An identifier written either as a number or as a hex string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IdValue {
    Number(u64),
    Hex(String),
}

impl IdValue {
    pub fn resolve(&self, space: &IdSpace) -> Result<Identifier, IdentError> {
        match self {
            IdValue::Number(v) => space.try_from_u64(*v),
            IdValue::Hex(s) => space.from_hex(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeSpec {
    Count(usize),
    Ids(Vec<IdValue>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountSpec {
    pub name: String,
    #[serde(default)]
    pub id: Option<IdValue>,
    #[serde(default)]
    pub grant: Option<u64>,
}

/// Points at a node either directly or by its rank among the nodes closest
/// to an account (rank 0 is that account's leader).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeRef {
    Id {
        id: IdValue,
    },
    ClosestTo {
        closest_to: String,
        #[serde(default)]
        rank: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub node: NodeRef,
    pub behavior: FaultKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxSpec {
    pub label: String,
    #[serde(default)]
    pub at: Time,
    pub from: String,
    pub to: String,
    pub amount: u64,
    /// Defaults to one more than the sender's previous transaction.
    #[serde(default)]
    pub nonce: Option<u64>,
    /// Node the client submits to; defaults to a random honest node.
    #[serde(default)]
    pub entry: Option<NodeRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChurnKind {
    Join,
    Leave,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnEvent {
    pub at: Time,
    pub kind: ChurnKind,
    /// Joining id, or the leaving node; random when absent.
    #[serde(default)]
    pub node: Option<IdValue>,
}

/// Random joins and leaves as a Poisson process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonChurn {
    /// Expected events per synchrony bound.
    pub rate_per_delta: f64,
    /// Fraction of events that are joins.
    #[serde(default = "half")]
    pub join_fraction: f64,
    pub until: Time,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChurnSpec {
    #[serde(default)]
    pub events: Vec<ChurnEvent>,
    #[serde(default)]
    pub poisson: Option<PoissonChurn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CommittedSpec {
    All(AllMarker),
    Labels(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllMarker {
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ViewChangeSpec {
    #[serde(default)]
    pub min: Option<u64>,
    #[serde(default)]
    pub max: Option<u64>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assertions {
    #[serde(default)]
    pub committed: Option<CommittedSpec>,
    #[serde(default)]
    pub not_committed: Vec<String>,
    #[serde(default = "yes")]
    pub safety: bool,
    #[serde(default = "yes")]
    pub no_overdraft: bool,
    /// Highest view any honest validator reached, per transaction.
    #[serde(default)]
    pub view_changes: Option<ViewChangeSpec>,
    #[serde(default)]
    pub max_commit_latency: Option<Time>,
    #[serde(default)]
    pub min_commit_latency: Option<Time>,
    /// Every live honest validator of each committed transaction commits it.
    #[serde(default)]
    pub all_honest_commit: bool,
    /// Every message between prompt honest nodes arrives within the bound.
    #[serde(default)]
    pub prompt_delivery: bool,
}

impl Default for Assertions {
    fn default() -> Self {
        Assertions {
            committed: None,
            not_committed: Vec::new(),
            safety: true,
            no_overdraft: true,
            view_changes: None,
            max_commit_latency: None,
            min_commit_latency: None,
            all_honest_commit: false,
            prompt_delivery: false,
        }
    }
}

fn default_bits() -> u16 {
    DEFAULT_BITS
}
fn default_grant() -> u64 {
    DEFAULT_GRANT
}
fn default_r() -> usize {
    4
}
fn default_delta() -> Time {
    DEFAULT_DELTA
}

/// A complete, seeded simulation run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bits")]
    pub id_bits: u16,
    pub nodes: NodeSpec,
    #[serde(default)]
    pub accounts: Vec<AccountSpec>,
    #[serde(default = "default_grant")]
    pub default_grant: u64,
    #[serde(default = "default_r")]
    pub r: usize,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_delta")]
    pub delta: Time,
    #[serde(default)]
    pub latency: Latency,
    #[serde(default)]
    pub deadlock_policy: DeadlockPolicy,
    #[serde(default)]
    pub quorum_rule: QuorumRule,
    #[serde(default)]
    pub view_timeout: Option<Time>,
    #[serde(default)]
    pub replication_period: Option<Time>,
    #[serde(default)]
    pub include_prev_votes: bool,
    #[serde(default)]
    pub horizon: Option<Time>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub transactions: Vec<TxSpec>,
    #[serde(default)]
    pub churn: Option<ChurnSpec>,
    #[serde(default)]
    pub assertions: Assertions,
}

impl Scenario {
    /// `n` nodes and every other field at its default.
    pub fn with_nodes(n: usize) -> Scenario {
        serde_json::from_value(serde_json::json!({ "nodes": n })).expect("defaults deserialize")
    }

    pub fn from_json(s: &str) -> Result<Scenario, ScenarioError> {
        let sc: Scenario = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(m.to_string()));
        IdSpace::new(self.id_bits)?;
        if self.r == 0 {
            return bad("r must be positive");
        }
        if self.k.is_some_and(|k| k < self.r) {
            return bad("k must be at least r");
        }
        let node_count = match &self.nodes {
            NodeSpec::Count(n) => *n,
            NodeSpec::Ids(v) => v.len(),
        };
        if node_count == 0 {
            return bad("at least one node is required");
        }
        if self.latency.min > self.latency.max || self.latency.max > self.delta {
            return bad("latency must satisfy min <= max <= delta");
        }
        if self.replication_period.is_some() && self.horizon.is_none() {
            return bad("replication needs a horizon");
        }
        let names: Vec<&str> = self.accounts.iter().map(|a| a.name.as_str()).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(ScenarioError::Invalid(format!("duplicate account `{n}`")));
            }
        }
        let known = |n: &str| {
            if names.contains(&n) {
                Ok(())
            } else {
                Err(ScenarioError::UnknownAccount(n.to_string()))
            }
        };
        for t in &self.transactions {
            known(&t.from)?;
            known(&t.to)?;
            if t.from == t.to {
                return Err(ScenarioError::Invalid(format!("`{}` pays itself", t.label)));
            }
        }
        for f in &self.faults {
            if let NodeRef::ClosestTo { closest_to, .. } = &f.node {
                known(closest_to)?;
            }
        }
        let labels: Vec<&str> = self.transactions.iter().map(|t| t.label.as_str()).collect();
        let mut referenced = self.assertions.not_committed.clone();
        if let Some(CommittedSpec::Labels(l)) = &self.assertions.committed {
            referenced.extend(l.iter().cloned());
        }
        for l in referenced {
            if !labels.contains(&l.as_str()) {
                return Err(ScenarioError::UnknownLabel(l));
            }
        }
        Ok(())
    }
}
