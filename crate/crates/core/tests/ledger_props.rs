use std::collections::BTreeMap;

use proptest::prelude::*;
use scalegraph::auth::SimAuthenticator;
use scalegraph::ident::{IdSpace, Identifier};
use scalegraph::ledger::{build_dag, GrantBook, Ledger, Transaction, Verdict};

fn accounts(n: usize) -> Vec<Identifier> {
    let space = IdSpace::new(16).unwrap();
    (0..n as u64).map(|i| space.id(0x100 + 37 * i)).collect()
}

/// Applies `(from, to, amount)` transfers, committing the accepted ones.
fn replay(grant: u64, n: usize, ops: &[(usize, usize, u64)]) -> (Ledger, usize) {
    let auth = SimAuthenticator::new(1);
    let ids = accounts(n);
    let mut ledger = Ledger::new(GrantBook {
        default: grant,
        overrides: BTreeMap::new(),
    });
    let mut nonces = vec![0u64; n];
    let mut accepted = 0;
    for &(from, to, amount) in ops {
        let (from, to) = (from % n, to % n);
        if from == to {
            continue;
        }
        let tx = Transaction::signed(&auth, ids[from], ids[to], amount, nonces[from] + 1);
        if ledger.validate(&tx, &auth) != Verdict::Accept {
            continue;
        }
        nonces[from] += 1;
        let block = ledger.build_block(tx, vec![ids[from], ids[to]]);
        ledger.commit(block).expect("validated block appends");
        accepted += 1;
    }
    (ledger, accepted)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accepted_sequences_never_overdraw(
        grant in 0u64..200,
        ops in prop::collection::vec((0usize..5, 0usize..5, 1u64..150), 0..60),
    ) {
        let (ledger, _) = replay(grant, 5, &ops);
        for chain in ledger.chains() {
            prop_assert!(chain.never_overdrawn());
            prop_assert!(chain.prefix_balances().iter().all(|b| *b >= 0));
        }
    }

    #[test]
    fn dag_is_acyclic_and_projects_to_chains(
        ops in prop::collection::vec((0usize..4, 0usize..4, 1u64..80), 0..50),
    ) {
        let (ledger, accepted) = replay(300, 4, &ops);
        let dag = build_dag(ledger.chains()).unwrap();
        prop_assert_eq!(dag.len(), accepted);
        prop_assert!(dag.is_acyclic());
        let order = dag.topological_order().unwrap();
        prop_assert_eq!(order.len(), accepted);
        for chain in ledger.chains() {
            let projected = dag.project(&chain.account()).unwrap();
            let hashes: Vec<_> = chain.blocks().iter().map(|b| b.hash).collect();
            prop_assert_eq!(projected, hashes);
        }
        for (child, parent) in dag.edges() {
            prop_assert!(dag.happens_before(&parent, &child));
        }
    }

    #[test]
    fn balances_conserve_total_supply(
        ops in prop::collection::vec((0usize..6, 0usize..6, 1u64..100), 0..80),
    ) {
        let (ledger, _) = replay(120, 6, &ops);
        let total: i128 = ledger.chains().map(|c| c.balance()).sum();
        let touched = ledger.chains().count() as i128;
        prop_assert_eq!(total, 120 * touched);
    }
}

#[test]
fn double_spend_commits_at_most_one() {
    let auth = SimAuthenticator::new(2);
    let ids = accounts(3);
    let mut ledger = Ledger::new(GrantBook {
        default: 100,
        overrides: BTreeMap::new(),
    });
    let a = Transaction::signed(&auth, ids[0], ids[1], 80, 1);
    let b = Transaction::signed(&auth, ids[0], ids[2], 80, 2);
    assert!(ledger.validate(&a, &auth).is_accept());
    let block = ledger.build_block(a, ids.clone());
    ledger.commit(block).unwrap();
    assert!(!ledger.validate(&b, &auth).is_accept());
    assert_eq!(ledger.chain(&ids[0]).unwrap().balance(), 20);
}
