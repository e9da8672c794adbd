use serde::{Deserialize, Serialize};

/// Replications a node still performs after leaving an account's
/// closest set.
pub const DEFAULT_REMAINING_REPLICATIONS: u32 = 3;
/// Replication periods between the last replication and dropping a chain.
pub const DEFAULT_DROP_PERIODS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicationPolicy {
    pub remaining_replications: u32,
    pub drop_periods: u32,
}

impl Default for ReplicationPolicy {
    fn default() -> Self {
        ReplicationPolicy {
            remaining_replications: DEFAULT_REMAINING_REPLICATIONS,
            drop_periods: DEFAULT_DROP_PERIODS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplicationAction {
    /// Send the tip to the closest set and run again next period.
    ReplicateAndReschedule,
    /// A peer already replicated this period; just reschedule.
    SkipAndReschedule,
    /// Outside the closest set: send the tip, `remaining` more to go.
    Replicate {
        remaining: u32,
    },
    StartDropTimer,
    /// Drop timer already running; nothing to do.
    Idle,
}

/// Per-(node, account) replication bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicationState {
    remaining: u32,
    tip_received: bool,
    drop_pending: bool,
}

impl ReplicationState {
    pub fn new(policy: &ReplicationPolicy) -> Self {
        ReplicationState {
            remaining: policy.remaining_replications,
            tip_received: false,
            drop_pending: false,
        }
    }

    pub fn remaining(&self) -> u32 {
        self.remaining
    }

    pub fn drop_pending(&self) -> bool {
        self.drop_pending
    }

    /// A peer sent its tip for this account during the current period.
    pub fn on_tip_received(&mut self) {
        self.tip_received = true;
    }
}

/// Decides what a node storing an account's chain does this period.
/// `in_closest` is whether the node is currently among the account's
/// closest storage nodes.
pub fn replication_tick(
    state: &mut ReplicationState,
    in_closest: bool,
    policy: &ReplicationPolicy,
) -> ReplicationAction {
    let heard = std::mem::take(&mut state.tip_received);
    if in_closest {
        state.remaining = policy.remaining_replications;
        state.drop_pending = false;
        return if heard {
            ReplicationAction::SkipAndReschedule
        } else {
            ReplicationAction::ReplicateAndReschedule
        };
    }
    if state.remaining > 0 {
        state.remaining -= 1;
        return ReplicationAction::Replicate {
            remaining: state.remaining,
        };
    }
    if state.drop_pending {
        ReplicationAction::Idle
    } else {
        state.drop_pending = true;
        ReplicationAction::StartDropTimer
    }
}
