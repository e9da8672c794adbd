use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::scenario::CommittedSpec;
use super::sim::{Sim, TxOutcome};
use super::trace::TraceEvent;
use crate::auth::Digest;
use crate::ident::Identifier;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Positions `(account, height)` where honest nodes hold or committed two
/// different blocks.
pub fn safety_violations(sim: &Sim) -> Vec<(Identifier, u64)> {
    let mut seen: BTreeMap<(Identifier, u64), BTreeSet<Digest>> = BTreeMap::new();
    for rec in sim.trace() {
        if let TraceEvent::Commit {
            node,
            block,
            sender,
            sender_height,
            receiver,
            receiver_height,
            ..
        } = &rec.event
        {
            if sim.is_honest(node) {
                seen.entry((*sender, *sender_height))
                    .or_default()
                    .insert(*block);
                seen.entry((*receiver, *receiver_height))
                    .or_default()
                    .insert(*block);
            }
        }
    }
    for (id, rep) in sim.replicas() {
        if !sim.is_honest(id) {
            continue;
        }
        for (acct, chain) in rep.chains() {
            for (i, b) in chain.blocks().iter().enumerate() {
                seen.entry((*acct, i as u64 + 1))
                    .or_default()
                    .insert(b.hash);
            }
        }
    }
    seen.into_iter()
        .filter(|(_, s)| s.len() > 1)
        .map(|(p, _)| p)
        .collect()
}

/// Honest `(node, account)` pairs whose stored chain ever goes negative.
pub fn overdrafts(sim: &Sim) -> Vec<(Identifier, Identifier)> {
    let mut out = Vec::new();
    for (id, rep) in sim.replicas() {
        if !sim.is_honest(id) {
            continue;
        }
        for (acct, chain) in rep.chains() {
            if !chain.never_overdrawn() {
                out.push((*id, *acct));
            }
        }
    }
    out
}

/// Messages between prompt honest nodes that took longer than the bound.
pub fn late_deliveries(sim: &Sim) -> usize {
    let sluggish = sim.sluggish_nodes();
    let delta = sim.delta();
    sim.trace()
        .iter()
        .filter(|rec| match &rec.event {
            TraceEvent::Send {
                from,
                to,
                deliver_at,
                ..
            } => {
                sim.is_honest(from)
                    && sim.is_honest(to)
                    && !sluggish.contains(from)
                    && deliver_at - rec.t > delta
            }
            _ => false,
        })
        .count()
}

/// Live honest validators of a committed transaction that never commit it.
pub fn missing_commits(sim: &Sim) -> Vec<(String, Identifier)> {
    let mut committed: BTreeSet<(Digest, Identifier)> = BTreeSet::new();
    for rec in sim.trace() {
        if let TraceEvent::Commit { node, tx, .. } = &rec.event {
            committed.insert((*tx, *node));
        }
    }
    let correct: BTreeSet<Identifier> = sim.correct_nodes().into_iter().collect();
    let mut out = Vec::new();
    for (label, tx, _) in sim.injected() {
        let id = tx.id();
        if !committed.iter().any(|(t, _)| *t == id) {
            continue;
        }
        for (node, rep) in sim.replicas() {
            let validator = rep.instances().iter().any(|i| i.tx == id);
            if validator && correct.contains(node) && !committed.contains(&(id, *node)) {
                out.push((label.clone(), *node));
            }
        }
    }
    out
}

/// Runs every assertion the scenario asks for.
pub fn evaluate(sim: &Sim, outcomes: &[TxOutcome]) -> Vec<CheckResult> {
    let a = &sim.scenario().assertions;
    let mut out = Vec::new();
    if a.safety {
        let v = safety_violations(sim);
        out.push(CheckResult::new(
            "safety",
            v.is_empty(),
            format!("{} conflicting positions", v.len()),
        ));
    }
    if a.no_overdraft {
        let v = overdrafts(sim);
        out.push(CheckResult::new(
            "no_overdraft",
            v.is_empty(),
            format!("{} overdrawn chains", v.len()),
        ));
    }
    let by_label = |l: &str| outcomes.iter().find(|o| o.label == l);
    if let Some(spec) = &a.committed {
        let wanted: Vec<&TxOutcome> = match spec {
            CommittedSpec::All(_) => outcomes.iter().collect(),
            CommittedSpec::Labels(ls) => ls.iter().filter_map(|l| by_label(l)).collect(),
        };
        let missing: Vec<&str> = wanted
            .iter()
            .filter(|o| o.committed_at.is_none())
            .map(|o| o.label.as_str())
            .collect();
        out.push(CheckResult::new(
            "committed",
            missing.is_empty(),
            if missing.is_empty() {
                "all committed".into()
            } else {
                format!("not committed: {}", missing.join(", "))
            },
        ));
    }
    for l in &a.not_committed {
        let ok = by_label(l).is_some_and(|o| o.committed_at.is_none());
        out.push(CheckResult::new(
            &format!("not_committed:{l}"),
            ok,
            if ok { "no commit" } else { "committed" },
        ));
    }
    if let Some(vc) = a.view_changes {
        for o in outcomes {
            let ok = vc.min.map_or(true, |m| o.max_view >= m)
                && vc.max.map_or(true, |m| o.max_view <= m);
            out.push(CheckResult::new(
                &format!("view_changes:{}", o.label),
                ok,
                format!("max view {}", o.max_view),
            ));
        }
    }
    if let Some(max) = a.max_commit_latency {
        for o in outcomes.iter().filter(|o| o.latency.is_some()) {
            let l = o.latency.unwrap_or(0);
            out.push(CheckResult::new(
                &format!("max_latency:{}", o.label),
                l <= max,
                format!("{l} ticks"),
            ));
        }
    }
    if let Some(min) = a.min_commit_latency {
        for o in outcomes.iter().filter(|o| o.latency.is_some()) {
            let l = o.latency.unwrap_or(0);
            out.push(CheckResult::new(
                &format!("min_latency:{}", o.label),
                l >= min,
                format!("{l} ticks"),
            ));
        }
    }
    if a.all_honest_commit {
        let m = missing_commits(sim);
        out.push(CheckResult::new(
            "all_honest_commit",
            m.is_empty(),
            format!("{} missing", m.len()),
        ));
    }
    if a.prompt_delivery {
        let late = late_deliveries(sim);
        out.push(CheckResult::new(
            "prompt_delivery",
            late == 0,
            format!("{late} late messages"),
        ));
    }
    out
}
