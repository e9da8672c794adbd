//! Per-transaction agreement among the sender-side and receiver-side
//! validator groups: quorum counting, account locks and the replica state
//! machine.

mod group;
mod locks;
mod replica;

pub use group::{
    count_votes, quorum, vote_digest, QuorumCertificate, QuorumRule, ValidatorGroup, VoteCount,
    VoteKind,
};
pub use locks::{lock_order, Acquire, DeadlockPolicy, LockClaim, LockOrder, LockTable};
pub use replica::{Behavior, Env, InstanceSummary, Replica, ReplicaConfig, Strategy, Timer};
