//! Seeded random scenarios with Byzantine and crashed validators, kept
//! within the per-group fault bound.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fault::{FaultKind, Strategy};
use super::latency::DEFAULT_DELTA;
use super::scenario::{AccountSpec, FaultSpec, IdValue, NodeRef, NodeSpec, Scenario, TxSpec};
use super::sim::Sim;
use crate::consensus::DeadlockPolicy;
use crate::ident::Identifier;
use crate::routing::oracle_closest;

/// Group sizes the generator draws from.
pub const ADVERSARIAL_GROUP_SIZES: [usize; 3] = [3, 5, 7];

/// Random accounts, transfers (some of them overdrafts) and faults. Every
/// account's r-group holds at most `r / 2` faulty nodes.
pub fn adversarial_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ca1_ab1e);
    let r = *ADVERSARIAL_GROUP_SIZES.choose(&mut rng).unwrap();
    let delta = DEFAULT_DELTA;
    let n_accounts = rng.gen_range(3..=5);
    let accounts: Vec<AccountSpec> = (0..n_accounts)
        .map(|i| AccountSpec {
            name: format!("acct{i}"),
            id: None,
            grant: Some(rng.gen_range(100..=300)),
        })
        .collect();
    let mut times: Vec<u64> = (0..rng.gen_range(3..=8))
        .map(|_| rng.gen_range(0..=4 * delta))
        .collect();
    times.sort_unstable();
    let transactions: Vec<TxSpec> = times
        .into_iter()
        .enumerate()
        .map(|(i, at)| {
            let from = rng.gen_range(0..n_accounts);
            let to = (from + rng.gen_range(1..n_accounts)) % n_accounts;
            TxSpec {
                label: format!("tx{i}"),
                at,
                from: format!("acct{from}"),
                to: format!("acct{to}"),
                amount: rng.gen_range(10..=150),
                nonce: None,
                entry: None,
            }
        })
        .collect();
    let mut scenario = Scenario {
        name: format!("adversarial-{seed}"),
        seed,
        r,
        nodes: NodeSpec::Count(rng.gen_range(24..=48)),
        accounts,
        transactions,
        deadlock_policy: if rng.gen_bool(0.5) {
            DeadlockPolicy::ProactiveOrder
        } else {
            DeadlockPolicy::OptimisticTimeout
        },
        horizon: Some(400 * delta),
        ..Scenario::with_nodes(0)
    };

    let sim = Sim::new(&scenario).expect("generated scenario is valid");
    let nodes: Vec<Identifier> = sim.replicas().keys().copied().collect();
    let groups: Vec<BTreeSet<Identifier>> = sim
        .accounts()
        .values()
        .map(|a| oracle_closest(&nodes, a, r).into_iter().collect())
        .collect();
    let limit = r / 2;
    let mut load = vec![0usize; groups.len()];
    let mut faulty = BTreeMap::new();
    for (g, group) in groups.iter().enumerate() {
        let want = rng.gen_range(0..=limit);
        let mut members: Vec<Identifier> = group.iter().copied().collect();
        members.shuffle(&mut rng);
        for node in members {
            if load[g] >= want {
                break;
            }
            if faulty.contains_key(&node) {
                continue;
            }
            let hits: Vec<usize> = (0..groups.len())
                .filter(|&i| groups[i].contains(&node))
                .collect();
            if hits.iter().any(|&i| load[i] >= limit) {
                continue;
            }
            for i in hits {
                load[i] += 1;
            }
            let behavior = if rng.gen_bool(0.1) {
                FaultKind::Crash {
                    at: rng.gen_range(0..=6 * delta),
                }
            } else {
                FaultKind::Byzantine {
                    strategy: *Strategy::ALL.choose(&mut rng).unwrap(),
                }
            };
            faulty.insert(node, behavior);
        }
    }
    scenario.faults = faulty
        .into_iter()
        .map(|(node, behavior)| FaultSpec {
            node: NodeRef::Id {
                id: IdValue::Hex(node.to_hex()),
            },
            behavior,
        })
        .collect();
    scenario
}
