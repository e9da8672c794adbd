//! Deterministic discrete-event simulation of the full protocol: message
//! latency, crash, sluggish and Byzantine faults, churn, traces and
//! post-run checks.

pub mod adversary;
pub mod checks;
pub mod fault;
pub mod latency;
pub mod message;
pub mod scenario;
pub mod sim;
pub mod trace;

pub use adversary::{adversarial_scenario, ADVERSARIAL_GROUP_SIZES};
pub use checks::{
    evaluate, late_deliveries, missing_commits, overdrafts, safety_violations, CheckResult,
};
pub use fault::{Behavior, FaultKind, SluggishWindows, Strategy};
pub use latency::{
    sluggish_delay, Latency, DEFAULT_DELTA, DEFAULT_MAX_LATENCY, DEFAULT_MIN_LATENCY,
};
pub use message::{Message, Proposal};
pub use scenario::{Scenario, ScenarioError};
pub use sim::{Sim, SimReport, TxOutcome};
pub use trace::{trace_to_string, write_trace, Phase, Time, TraceEvent, TraceRecord};
