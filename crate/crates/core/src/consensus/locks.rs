use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::auth::Digest;
use crate::ident::Identifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LockOrder {
    /// Lock the sender chain, then ask the receiver-side leader.
    LockBeforeRequest,
    /// Ask the receiver-side leader first, lock the sender chain on reply.
    LockAfterReply,
}

/// Locks are always taken in ascending account order, which rules out
/// cycles of waiting leaders.
pub fn lock_order(sender: &Identifier, receiver: &Identifier) -> LockOrder {
    if sender < receiver {
        LockOrder::LockBeforeRequest
    } else {
        LockOrder::LockAfterReply
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeadlockPolicy {
    /// Lock ordering by account identifier.
    #[default]
    ProactiveOrder,
    /// Always lock the sender first; deadlocks end by expiry and retry.
    OptimisticTimeout,
}

/// Who holds or waits for an account lock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LockClaim {
    /// The local node leading `tx` on its sender side.
    Local { tx: Digest, attempt: u32 },
    /// A sender-side leader asking for this (receiver) account's tip.
    Remote {
        tx: Digest,
        attempt: u32,
        requester: Identifier,
    },
}

impl LockClaim {
    pub fn tx(&self) -> Digest {
        match self {
            LockClaim::Local { tx, .. } | LockClaim::Remote { tx, .. } => *tx,
        }
    }

    pub fn attempt(&self) -> u32 {
        match self {
            LockClaim::Local { attempt, .. } | LockClaim::Remote { attempt, .. } => *attempt,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct AccountLock {
    holder: Option<LockClaim>,
    generation: u64,
    waiters: VecDeque<LockClaim>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acquire {
    /// Lock now held; `generation` identifies this tenure for expiry timers.
    Granted {
        generation: u64,
    },
    /// Already held by the same transaction.
    AlreadyHeld {
        generation: u64,
    },
    Queued,
}

/// Account locks at one node, each with a FIFO of waiters.
#[derive(Debug, Clone, Default)]
pub struct LockTable {
    locks: BTreeMap<Identifier, AccountLock>,
}

impl LockTable {
    pub fn holder(&self, account: &Identifier) -> Option<LockClaim> {
        self.locks.get(account).and_then(|l| l.holder)
    }

    pub fn generation(&self, account: &Identifier) -> u64 {
        self.locks.get(account).map_or(0, |l| l.generation)
    }

    pub fn is_locked(&self, account: &Identifier) -> bool {
        self.holder(account).is_some()
    }

    /// Takes the lock or queues the claim. Re-entrant per transaction: a
    /// newer attempt by the holder's transaction replaces the claim.
    pub fn acquire(&mut self, account: Identifier, claim: LockClaim) -> Acquire {
        let lock = self.locks.entry(account).or_default();
        match lock.holder {
            None => {
                lock.generation += 1;
                lock.holder = Some(claim);
                Acquire::Granted {
                    generation: lock.generation,
                }
            }
            Some(h) if h.tx() == claim.tx() => {
                if claim.attempt() >= h.attempt() {
                    lock.holder = Some(claim);
                }
                Acquire::AlreadyHeld {
                    generation: lock.generation,
                }
            }
            Some(_) => {
                lock.waiters.retain(|w| w.tx() != claim.tx());
                lock.waiters.push_back(claim);
                Acquire::Queued
            }
        }
    }

    /// Releases `account` if held by `tx` (at `attempt` or earlier, when
    /// given) and drops any queued claims of `tx`. Returns the claim that
    /// now holds the lock, if the holder changed.
    pub fn release(
        &mut self,
        account: &Identifier,
        tx: &Digest,
        attempt: Option<u32>,
    ) -> Option<(LockClaim, u64)> {
        let lock = self.locks.get_mut(account)?;
        lock.waiters
            .retain(|w| w.tx() != *tx || attempt.is_some_and(|a| w.attempt() > a));
        let held = lock
            .holder
            .is_some_and(|h| h.tx() == *tx && attempt.map_or(true, |a| h.attempt() <= a));
        if !held {
            return None;
        }
        lock.holder = None;
        self.grant_next(account)
    }

    /// Releases the lock if still held under `generation`.
    pub fn expire(&mut self, account: &Identifier, generation: u64) -> Option<LockClaim> {
        let lock = self.locks.get_mut(account)?;
        if lock.generation != generation {
            return None;
        }
        lock.holder.take()
    }

    /// Hands a free lock to the first waiter.
    pub fn grant_next(&mut self, account: &Identifier) -> Option<(LockClaim, u64)> {
        let lock = self.locks.get_mut(account)?;
        if lock.holder.is_some() {
            return None;
        }
        let next = lock.waiters.pop_front()?;
        lock.generation += 1;
        lock.holder = Some(next);
        Some((next, lock.generation))
    }

    pub fn waiters(&self, account: &Identifier) -> Vec<LockClaim> {
        self.locks
            .get(account)
            .map(|l| l.waiters.iter().copied().collect())
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::IdSpace;

    #[test]
    fn lock_order_by_identifier() {
        let s = IdSpace::default();
        assert_eq!(lock_order(&s.id(3), &s.id(9)), LockOrder::LockBeforeRequest);
        assert_eq!(lock_order(&s.id(9), &s.id(3)), LockOrder::LockAfterReply);
    }

    #[test]
    fn second_claim_waits_until_release() {
        let s = IdSpace::default();
        let acct = s.id(1);
        let (t1, t2) = (Digest::of(b"1"), Digest::of(b"2"));
        let mut locks = LockTable::default();
        assert!(matches!(
            locks.acquire(acct, LockClaim::Local { tx: t1, attempt: 0 }),
            Acquire::Granted { .. }
        ));
        let remote = LockClaim::Remote {
            tx: t2,
            attempt: 0,
            requester: s.id(7),
        };
        assert_eq!(locks.acquire(acct, remote), Acquire::Queued);
        let (next, _) = locks.release(&acct, &t1, None).unwrap();
        assert_eq!(next, remote);
        assert_eq!(locks.holder(&acct), Some(remote));
    }

    #[test]
    fn reentrant_for_same_transaction() {
        let s = IdSpace::default();
        let t = Digest::of(b"t");
        let mut locks = LockTable::default();
        let g = locks.acquire(s.id(1), LockClaim::Local { tx: t, attempt: 0 });
        let again = locks.acquire(s.id(1), LockClaim::Local { tx: t, attempt: 1 });
        assert!(
            matches!((g, again), (Acquire::Granted { generation: a }, Acquire::AlreadyHeld { generation: b }) if a == b)
        );
    }

    #[test]
    fn stale_release_ignored() {
        let s = IdSpace::default();
        let t = Digest::of(b"t");
        let mut locks = LockTable::default();
        locks.acquire(s.id(1), LockClaim::Local { tx: t, attempt: 2 });
        assert!(locks.release(&s.id(1), &t, Some(1)).is_none());
        assert!(locks.is_locked(&s.id(1)));
        locks.release(&s.id(1), &t, Some(2));
        assert!(!locks.is_locked(&s.id(1)));
    }

    #[test]
    fn expiry_checks_generation() {
        let s = IdSpace::default();
        let mut locks = LockTable::default();
        let Acquire::Granted { generation } = locks.acquire(
            s.id(1),
            LockClaim::Local {
                tx: Digest::of(b"a"),
                attempt: 0,
            },
        ) else {
            panic!()
        };
        assert!(locks.expire(&s.id(1), generation + 1).is_none());
        assert!(locks.expire(&s.id(1), generation).is_some());
    }
}
