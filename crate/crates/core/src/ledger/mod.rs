//! Per-account block chains, spending rules, chain synchronisation and
//! replication bookkeeping, and the cross-account dependency graph.

mod block;
mod chain;
mod dag;
mod jsonl;
mod replication;

use thiserror::Error;

use crate::ident::Identifier;

pub use block::{Block, ParentRef, Transaction};
pub use chain::{AccountChain, GrantBook, Ledger, RejectReason, Verdict, DEFAULT_GRANT};
pub use dag::{build_dag, TransactionDag};
pub use jsonl::{export_chain, import_chain};
pub use replication::{
    replication_tick, ReplicationAction, ReplicationPolicy, ReplicationState, DEFAULT_DROP_PERIODS,
    DEFAULT_REMAINING_REPLICATIONS,
};

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("parent mismatch: chain tip is {expected:?}, block extends {got:?}")]
    ParentMismatch { expected: ParentRef, got: ParentRef },
    #[error("block does not involve account {0}")]
    NotInvolved(Identifier),
    #[error("block hash does not match its contents")]
    BadHash,
    #[error("sender {sender} nonce {nonce} appears with different contents")]
    Inconsistent { sender: Identifier, nonce: u64 },
    #[error("dependency graph has a cycle")]
    Cycle,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
