use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::group::{vote_digest, QuorumCertificate, QuorumRule, ValidatorGroup, VoteKind};
use super::locks::{lock_order, Acquire, DeadlockPolicy, LockClaim, LockOrder, LockTable};
use crate::auth::{Authenticator, Digest, Signature};
use crate::ident::Identifier;
use crate::ledger::{
    replication_tick, AccountChain, Block, GrantBook, ParentRef, ReplicationAction,
    ReplicationPolicy, ReplicationState, Transaction, Verdict,
};
use crate::routing::LookupPool;
use crate::simnet::message::{Message, Proposal};
use crate::simnet::trace::{Phase, Time, TraceEvent};

/// What a replica can ask of the world around it.
pub trait Env {
    fn now(&self) -> Time;
    fn send(&mut self, from: Identifier, to: Identifier, msg: Message);
    fn set_timer(&mut self, owner: Identifier, delay: Time, timer: Timer);
    /// The `count` live nodes closest to `target`, distance-ordered.
    fn closest(&mut self, target: &Identifier, count: usize) -> Vec<Identifier>;
    /// What `owner`'s own routing table knows about `target`.
    fn table_closest(
        &self,
        owner: &Identifier,
        target: &Identifier,
        count: usize,
    ) -> Vec<Identifier>;
    fn observe(&mut self, owner: &Identifier, node: Identifier);
    fn auth(&self) -> &dyn Authenticator;
    fn trace(&mut self, event: TraceEvent);
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "timer", rename_all = "snake_case")]
pub enum Timer {
    View {
        tx: Digest,
        view: u64,
    },
    PreCommit {
        tx: Digest,
        view: u64,
        block: Digest,
    },
    StatusWait {
        tx: Digest,
        view: u64,
    },
    Attempt {
        tx: Digest,
        view: u64,
        attempt: u32,
    },
    Retry {
        tx: Digest,
        view: u64,
        attempt: u32,
    },
    TipTimeout {
        tx: Digest,
        view: u64,
        attempt: u32,
        index: usize,
    },
    LockExpiry {
        account: Identifier,
        generation: u64,
        extensions: u32,
    },
    GapRetry {
        account: Identifier,
        tries: u32,
    },
    Replication,
    DropChain {
        account: Identifier,
    },
    LookupRound {
        lookup: u64,
        round: u32,
    },
}

impl Timer {
    /// Periodic timers keep firing forever and do not count as pending work.
    pub fn is_periodic(&self) -> bool {
        matches!(self, Timer::Replication)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// As leader, sends two conflicting blocks to the two halves of the
    /// group; as voter, votes and commits everything it sees.
    Equivocate,
    /// Votes and commits everything; as leader, proposes without checking
    /// the sender's balance.
    VoteInvalid,
    /// Ignores every message and timer.
    Silent,
    /// Hands out or builds on a chain tip one block behind the real one.
    StaleTip,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Equivocate,
        Strategy::VoteInvalid,
        Strategy::Silent,
        Strategy::StaleTip,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    #[default]
    Honest,
    Byzantine(Strategy),
}

impl Behavior {
    pub fn is_honest(&self) -> bool {
        matches!(self, Behavior::Honest)
    }

    fn votes_everything(&self) -> bool {
        matches!(
            self,
            Behavior::Byzantine(Strategy::Equivocate | Strategy::VoteInvalid)
        )
    }

    fn silent(&self) -> bool {
        matches!(self, Behavior::Byzantine(Strategy::Silent))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaConfig {
    pub r: usize,
    /// Storage replication set size, `k >= r`.
    pub k: usize,
    pub delta: Time,
    pub view_timeout: Time,
    pub lock_expiry: Time,
    pub max_retries: u32,
    pub tip_timeout: Time,
    pub deadlock_policy: DeadlockPolicy,
    pub quorum_rule: QuorumRule,
    pub include_prev_votes: bool,
    pub replication_period: Option<Time>,
    pub replication: ReplicationPolicy,
    pub lookup_size: usize,
    pub alpha: usize,
    pub grants: GrantBook,
}

impl ReplicaConfig {
    pub fn new(r: usize, delta: Time) -> Self {
        ReplicaConfig {
            r,
            k: r,
            delta,
            view_timeout: 60 * delta,
            lock_expiry: 10 * delta,
            max_retries: 3,
            tip_timeout: 4 * delta,
            deadlock_policy: DeadlockPolicy::default(),
            quorum_rule: QuorumRule::default(),
            include_prev_votes: false,
            replication_period: None,
            replication: ReplicationPolicy::default(),
            lookup_size: 20,
            alpha: crate::routing::DEFAULT_ALPHA,
            grants: GrantBook::default(),
        }
    }
}

#[derive(Debug, Clone)]
struct Lead {
    view: u64,
    attempt: u32,
    receiver_index: usize,
    tip: Option<ParentRef>,
    sender_locked: bool,
    busy: bool,
    proposed: bool,
}

#[derive(Debug, Clone)]
struct Instance {
    tx: Transaction,
    group: ValidatorGroup,
    view: u64,
    blocks: BTreeMap<Digest, Block>,
    leader_props: BTreeMap<u64, Proposal>,
    forwarded: BTreeSet<(u64, Digest)>,
    forwards: BTreeMap<(u64, Digest), BTreeSet<Identifier>>,
    votes: BTreeMap<(u64, Digest), BTreeMap<Identifier, Signature>>,
    commits: BTreeMap<Digest, BTreeMap<Identifier, Signature>>,
    voted: BTreeMap<u64, Digest>,
    lock: Option<QuorumCertificate>,
    certified: BTreeSet<Digest>,
    armed: BTreeSet<(u64, Digest)>,
    sent_commit: BTreeSet<Digest>,
    equivocation: BTreeSet<u64>,
    blames: BTreeMap<u64, BTreeMap<Identifier, Signature>>,
    blamed: BTreeSet<u64>,
    statuses: BTreeMap<u64, Vec<(Block, QuorumCertificate)>>,
    committed: Option<Digest>,
    commit_without_block: Option<Digest>,
    abandoned: bool,
    lead: Option<Lead>,
}

impl Instance {
    fn new(tx: Transaction, group: ValidatorGroup) -> Self {
        Instance {
            tx,
            group,
            view: 0,
            blocks: BTreeMap::new(),
            leader_props: BTreeMap::new(),
            forwarded: BTreeSet::new(),
            forwards: BTreeMap::new(),
            votes: BTreeMap::new(),
            commits: BTreeMap::new(),
            voted: BTreeMap::new(),
            lock: None,
            certified: BTreeSet::new(),
            armed: BTreeSet::new(),
            sent_commit: BTreeSet::new(),
            equivocation: BTreeSet::new(),
            blames: BTreeMap::new(),
            blamed: BTreeSet::new(),
            statuses: BTreeMap::new(),
            committed: None,
            commit_without_block: None,
            abandoned: false,
            lead: None,
        }
    }

    fn settled(&self) -> bool {
        self.committed.is_some() || self.abandoned
    }
}

#[derive(Debug, Clone)]
struct PendingFill {
    block: Block,
    evidence: Option<QuorumCertificate>,
    peers: Vec<Identifier>,
}

#[derive(Debug, Clone)]
struct ActiveLookup {
    pool: LookupPool,
    outstanding: BTreeSet<Identifier>,
}

enum Check {
    Ok,
    Defer,
    Reject(String),
}

/// Outcome of one instance at one node, for reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub tx: Digest,
    pub view: u64,
    pub committed: Option<Digest>,
    pub abandoned: bool,
}

/// One validator node: consensus instances, account locks, stored chains
/// and replication state. All input arrives through `on_message` and
/// `on_timer`; all output goes through [`Env`].
#[derive(Debug, Clone)]
pub struct Replica {
    id: Identifier,
    behavior: Behavior,
    cfg: std::sync::Arc<ReplicaConfig>,
    rng: ChaCha8Rng,
    chains: BTreeMap<Identifier, AccountChain>,
    evidence: BTreeMap<Identifier, QuorumCertificate>,
    replication: BTreeMap<Identifier, ReplicationState>,
    locks: LockTable,
    instances: BTreeMap<Digest, Instance>,
    seen_positions: BTreeMap<(Identifier, u64), BTreeMap<Digest, (Digest, u64)>>,
    deferred: Vec<(Identifier, Proposal)>,
    pending_fill: BTreeMap<Identifier, PendingFill>,
    lookups: BTreeMap<u64, ActiveLookup>,
    next_lookup: u64,
}

fn positions(block: &Block) -> [(Identifier, u64); 2] {
    [
        (block.tx.sender, block.sender_height()),
        (block.tx.receiver, block.receiver_height()),
    ]
}

fn stale(tip: ParentRef, chain: Option<&AccountChain>) -> ParentRef {
    match tip.height {
        0 => ParentRef {
            hash: Digest::of(b"stale"),
            height: 0,
        },
        1 => ParentRef::GENESIS,
        h => chain
            .and_then(|c| c.block_at(h - 1))
            .map(|b| ParentRef {
                hash: b.hash,
                height: h - 1,
            })
            .unwrap_or(ParentRef::GENESIS),
    }
}

impl Replica {
    pub fn new(
        id: Identifier,
        behavior: Behavior,
        cfg: std::sync::Arc<ReplicaConfig>,
        seed: u64,
    ) -> Self {
        Replica {
            id,
            behavior,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            chains: BTreeMap::new(),
            evidence: BTreeMap::new(),
            replication: BTreeMap::new(),
            locks: LockTable::default(),
            instances: BTreeMap::new(),
            seen_positions: BTreeMap::new(),
            deferred: Vec::new(),
            pending_fill: BTreeMap::new(),
            lookups: BTreeMap::new(),
            next_lookup: 0,
        }
    }

    pub fn id(&self) -> Identifier {
        self.id
    }

    pub fn behavior(&self) -> Behavior {
        self.behavior
    }

    pub fn chains(&self) -> &BTreeMap<Identifier, AccountChain> {
        &self.chains
    }

    pub fn chain(&self, account: &Identifier) -> Option<&AccountChain> {
        self.chains.get(account)
    }

    pub fn locks(&self) -> &LockTable {
        &self.locks
    }

    pub fn instances(&self) -> Vec<InstanceSummary> {
        self.instances
            .iter()
            .map(|(tx, i)| InstanceSummary {
                tx: *tx,
                view: i.view,
                committed: i.committed,
                abandoned: i.abandoned,
            })
            .collect()
    }

    /// Starts storing `account`'s chain (empty).
    pub fn ensure_chain(&mut self, account: Identifier) {
        if !self.chains.contains_key(&account) {
            let grant = self.cfg.grants.grant(&account);
            self.chains
                .insert(account, AccountChain::new(account, grant));
            self.replication
                .insert(account, ReplicationState::new(&self.cfg.replication));
        }
    }

    fn q_reached(&self, group: &ValidatorGroup, voters: &BTreeSet<Identifier>) -> bool {
        group.has_quorum(voters, self.cfg.quorum_rule)
    }

    fn broadcast(
        &self,
        env: &mut dyn Env,
        group: &ValidatorGroup,
        msg: Message,
        include_self: bool,
    ) {
        for n in &group.union_v {
            if *n != self.id || include_self {
                env.send(self.id, *n, msg.clone());
            }
        }
    }

    fn derive_group(&self, env: &mut dyn Env, tx: &Transaction) -> ValidatorGroup {
        let r = self.cfg.r;
        ValidatorGroup::derive(&tx.sender, &tx.receiver, r, |a, n| {
            Ok::<_, ()>(env.closest(a, n))
        })
        .expect("closest never fails")
    }

    fn phase(&self, env: &mut dyn Env, tx: Digest, view: u64, phase: Phase) {
        env.trace(TraceEvent::Phase {
            node: self.id,
            tx,
            view,
            phase,
        });
    }

    // ---- entry points ----------------------------------------------------

    pub fn on_message(&mut self, env: &mut dyn Env, from: Identifier, msg: Message) {
        if self.behavior.silent() {
            return;
        }
        match msg {
            Message::ClientTx { tx } => self.on_client_tx(env, tx),
            Message::TxForward { tx } => {
                self.ensure_instance(env, &tx);
            }
            Message::TipRequest {
                tx,
                view: _,
                attempt,
            } => self.on_tip_request(env, from, tx, attempt),
            Message::TipReply {
                tx_id,
                account: _,
                tip,
                attempt,
            } => self.on_tip_reply(env, from, tx_id, tip, attempt),
            Message::TipBusy { tx_id, attempt } => {
                if let Some(lead) = self.instances.get_mut(&tx_id).and_then(|i| i.lead.as_mut()) {
                    if lead.attempt == attempt {
                        lead.busy = true;
                    }
                }
            }
            Message::TipRelease {
                tx_id,
                account,
                attempt,
            } => self.release_lock(env, account, tx_id, Some(attempt)),
            Message::Propose { proposal } | Message::Forward { proposal } => {
                self.on_proposal(env, from, proposal)
            }
            Message::Vote {
                tx_id,
                view,
                block,
                signature,
            } => self.on_vote(env, tx_id, view, block, signature),
            Message::Certified { qc } => self.on_certified(env, qc),
            Message::Commit {
                tx_id,
                view: _,
                block,
                signature,
            } => self.on_commit_msg(env, tx_id, block, signature),
            Message::Blame {
                tx_id,
                view,
                signature,
                proof,
            } => self.on_blame(env, tx_id, view, signature, proof.map(|b| *b)),
            Message::Status {
                tx_id,
                view,
                highest,
            } => self.on_status(env, tx_id, view, highest.map(|b| *b)),
            Message::GetBlocks {
                account,
                from: lo,
                to,
            } => {
                if let Some(chain) = self.chains.get(&account) {
                    let blocks = chain.get_blocks(lo, to);
                    env.send(self.id, from, Message::Blocks { account, blocks });
                }
            }
            Message::Blocks { account, blocks } => self.on_blocks(env, account, blocks),
            Message::ReplicateTip {
                account,
                block,
                evidence,
            } => self.on_replicate_tip(env, from, account, block, evidence),
            Message::FindNode {
                lookup,
                target,
                count,
            } => {
                env.observe(&self.id, from);
                let nodes = env.table_closest(&self.id, &target, count);
                env.send(self.id, from, Message::FindNodeReply { lookup, nodes });
            }
            Message::FindNodeReply { lookup, nodes } => {
                self.on_find_node_reply(env, from, lookup, nodes)
            }
        }
    }

    pub fn on_timer(&mut self, env: &mut dyn Env, timer: Timer) {
        if self.behavior.silent() {
            return;
        }
        match timer {
            Timer::View { tx, view } => self.on_view_timeout(env, tx, view),
            Timer::PreCommit { tx, view, block } => self.on_precommit_timer(env, tx, view, block),
            Timer::StatusWait { tx, view } => {
                if self
                    .instances
                    .get(&tx)
                    .is_some_and(|i| i.view == view && !i.settled())
                {
                    self.become_leader(env, tx, view);
                }
            }
            Timer::Attempt { tx, view, attempt } => self.on_attempt_expired(env, tx, view, attempt),
            Timer::Retry { tx, view, attempt } => {
                let ok = self.instances.get(&tx).is_some_and(|i| {
                    !i.settled()
                        && i.lead.as_ref().is_some_and(|l| {
                            l.view == view && !l.proposed && l.attempt + 1 == attempt
                        })
                });
                if ok {
                    self.begin_attempt(env, tx, attempt);
                }
            }
            Timer::TipTimeout {
                tx,
                view,
                attempt,
                index,
            } => {
                let resend = self
                    .instances
                    .get_mut(&tx)
                    .and_then(|i| i.lead.as_mut())
                    .is_some_and(|l| {
                        if l.view == view
                            && l.attempt == attempt
                            && l.tip.is_none()
                            && !l.busy
                            && !l.proposed
                            && l.receiver_index == index
                        {
                            l.receiver_index += 1;
                            true
                        } else {
                            false
                        }
                    });
                if resend {
                    self.send_tip_request(env, tx);
                }
            }
            Timer::LockExpiry {
                account,
                generation,
                extensions,
            } => self.on_lock_expiry(env, account, generation, extensions),
            Timer::GapRetry { account, tries } => self.on_gap_retry(env, account, tries),
            Timer::Replication => self.on_replication_tick(env),
            Timer::DropChain { account } => {
                let k = self.cfg.k;
                if !env.closest(&account, k).contains(&self.id)
                    && self.chains.remove(&account).is_some()
                {
                    self.evidence.remove(&account);
                    self.replication.remove(&account);
                    env.trace(TraceEvent::DropChain {
                        node: self.id,
                        account,
                    });
                }
            }
            Timer::LookupRound { lookup, round } => {
                self.on_lookup_round_timeout(env, lookup, round)
            }
        }
    }

    // ---- transaction intake ----------------------------------------------

    fn on_client_tx(&mut self, env: &mut dyn Env, tx: Transaction) {
        let id = tx.id();
        if !tx.is_well_formed() || !tx.signature_valid(env.auth()) {
            env.trace(TraceEvent::Reject {
                node: self.id,
                tx: id,
                view: 0,
                reason: "malformed-client-tx".into(),
            });
            return;
        }
        let group = self.derive_group(env, &tx);
        self.broadcast(env, &group, Message::TxForward { tx }, true);
    }

    /// Creates the local instance for `tx` if this node validates it.
    fn ensure_instance(&mut self, env: &mut dyn Env, tx: &Transaction) -> bool {
        let id = tx.id();
        if self.instances.contains_key(&id) {
            return true;
        }
        if !tx.is_well_formed() {
            return false;
        }
        let group = self.derive_group(env, tx);
        if !group.contains(&self.id) {
            return false;
        }
        let leader = group.leader_for_view(0);
        self.instances.insert(id, Instance::new(tx.clone(), group));
        env.set_timer(
            self.id,
            self.cfg.view_timeout,
            Timer::View { tx: id, view: 0 },
        );
        if leader == self.id {
            self.become_leader(env, id, 0);
        }
        true
    }

    // ---- leader side -----------------------------------------------------

    fn become_leader(&mut self, env: &mut dyn Env, tx: Digest, view: u64) {
        let Some(inst) = self.instances.get_mut(&tx) else {
            return;
        };
        if inst.settled() {
            return;
        }
        let receiver_index = view as usize % inst.group.r_r.len().max(1);
        if view > 0 {
            let mut best: Option<(Block, QuorumCertificate)> = inst.lock.as_ref().and_then(|qc| {
                inst.blocks
                    .get(&qc.block_hash)
                    .map(|b| (b.clone(), qc.clone()))
            });
            for (b, qc) in inst.statuses.get(&view).into_iter().flatten() {
                if best.as_ref().map_or(true, |(_, cur)| qc.view > cur.view) {
                    best = Some((b.clone(), qc.clone()));
                }
            }
            if let Some((block, qc)) = best {
                inst.lead = Some(Lead {
                    view,
                    attempt: 0,
                    receiver_index,
                    tip: None,
                    sender_locked: false,
                    busy: false,
                    proposed: true,
                });
                self.propose(env, tx, block, Some(qc));
                return;
            }
        }
        inst.lead = Some(Lead {
            view,
            attempt: 0,
            receiver_index,
            tip: None,
            sender_locked: false,
            busy: false,
            proposed: false,
        });
        self.begin_attempt(env, tx, 0);
    }

    fn begin_attempt(&mut self, env: &mut dyn Env, tx: Digest, attempt: u32) {
        let Some(inst) = self.instances.get(&tx) else {
            return;
        };
        let t = inst.tx.clone();
        let view = inst.view;
        if self.behavior.is_honest() {
            match self.chains.get(&t.sender) {
                None => {
                    env.trace(TraceEvent::Abandon {
                        node: self.id,
                        tx,
                        reason: "leader-missing-chain".into(),
                    });
                    return;
                }
                Some(chain) => {
                    if let Verdict::Reject(reason) = chain.validate_transaction(&t, env.auth()) {
                        self.abandon(env, tx, format!("{reason:?}"));
                        return;
                    }
                }
            }
        }
        let inst = self.instances.get_mut(&tx).expect("checked above");
        let lead = inst.lead.as_mut().expect("leading");
        lead.attempt = attempt;
        lead.tip = None;
        lead.sender_locked = false;
        lead.busy = false;
        env.set_timer(
            self.id,
            self.cfg.lock_expiry,
            Timer::Attempt { tx, view, attempt },
        );
        self.phase(env, tx, view, Phase::AwaitingTip);
        let order = match self.cfg.deadlock_policy {
            DeadlockPolicy::ProactiveOrder => lock_order(&t.sender, &t.receiver),
            DeadlockPolicy::OptimisticTimeout => LockOrder::LockBeforeRequest,
        };
        if !self.behavior.is_honest() {
            if let Some(l) = self.instances.get_mut(&tx).and_then(|i| i.lead.as_mut()) {
                l.sender_locked = true;
            }
            self.send_tip_request(env, tx);
            return;
        }
        match order {
            LockOrder::LockBeforeRequest => {
                if self.take_sender_lock(env, tx, t.sender, attempt) {
                    self.send_tip_request(env, tx);
                }
            }
            LockOrder::LockAfterReply => self.send_tip_request(env, tx),
        }
    }

    /// Returns true when the lock is held now; otherwise the claim waits.
    fn take_sender_lock(
        &mut self,
        env: &mut dyn Env,
        tx: Digest,
        account: Identifier,
        attempt: u32,
    ) -> bool {
        let claim = LockClaim::Local { tx, attempt };
        match self.locks.acquire(account, claim) {
            Acquire::Granted { .. } | Acquire::AlreadyHeld { .. } => {
                env.trace(TraceEvent::Lock {
                    node: self.id,
                    account,
                    tx,
                    event: "acquired".into(),
                });
                if let Some(l) = self.instances.get_mut(&tx).and_then(|i| i.lead.as_mut()) {
                    l.sender_locked = true;
                }
                true
            }
            Acquire::Queued => {
                env.trace(TraceEvent::Lock {
                    node: self.id,
                    account,
                    tx,
                    event: "queued".into(),
                });
                false
            }
        }
    }

    fn send_tip_request(&mut self, env: &mut dyn Env, tx: Digest) {
        let Some(inst) = self.instances.get(&tx) else {
            return;
        };
        let Some(lead) = inst.lead.as_ref() else {
            return;
        };
        let index = lead.receiver_index;
        let target = inst.group.r_r[index % inst.group.r_r.len()];
        let msg = Message::TipRequest {
            tx: inst.tx.clone(),
            view: lead.view,
            attempt: lead.attempt,
        };
        let timer = Timer::TipTimeout {
            tx,
            view: lead.view,
            attempt: lead.attempt,
            index,
        };
        env.send(self.id, target, msg);
        env.set_timer(self.id, self.cfg.tip_timeout, timer);
    }

    fn on_tip_reply(
        &mut self,
        env: &mut dyn Env,
        from: Identifier,
        tx: Digest,
        tip: ParentRef,
        attempt: u32,
    ) {
        let current = self.instances.get_mut(&tx).and_then(|i| {
            let settled = i.settled();
            i.lead
                .as_mut()
                .filter(|l| !settled && l.attempt == attempt && !l.proposed && l.tip.is_none())
        });
        let Some(lead) = current else {
            // Stale attempt: let the receiver side go.
            if let Some(inst) = self.instances.get(&tx) {
                let account = inst.tx.receiver;
                env.send(
                    self.id,
                    from,
                    Message::TipRelease {
                        tx_id: tx,
                        account,
                        attempt,
                    },
                );
            }
            return;
        };
        lead.tip = Some(tip);
        if lead.sender_locked {
            self.propose_fresh(env, tx);
            return;
        }
        let sender = self.instances[&tx].tx.sender;
        if self.take_sender_lock(env, tx, sender, attempt) {
            self.propose_fresh(env, tx);
        }
    }

    /// Sender lock granted after waiting.
    fn on_local_grant(&mut self, env: &mut dyn Env, tx: Digest, attempt: u32) {
        let Some(lead) = self.instances.get_mut(&tx).and_then(|i| i.lead.as_mut()) else {
            return;
        };
        if lead.attempt != attempt || lead.proposed {
            return;
        }
        lead.sender_locked = true;
        if lead.tip.is_some() {
            self.propose_fresh(env, tx);
        } else {
            self.send_tip_request(env, tx);
        }
    }

    fn on_attempt_expired(&mut self, env: &mut dyn Env, tx: Digest, view: u64, attempt: u32) {
        let Some(inst) = self.instances.get_mut(&tx) else {
            return;
        };
        if inst.settled() {
            return;
        }
        let Some(lead) = inst.lead.as_ref() else {
            return;
        };
        if lead.view != view || lead.attempt != attempt || lead.proposed {
            return;
        }
        let sender = inst.tx.sender;
        let receiver = inst.tx.receiver;
        let target = inst.group.r_r[lead.receiver_index % inst.group.r_r.len()];
        self.release_lock(env, sender, tx, Some(attempt));
        env.send(
            self.id,
            target,
            Message::TipRelease {
                tx_id: tx,
                account: receiver,
                attempt,
            },
        );
        if attempt < self.cfg.max_retries {
            let d = self.cfg.delta;
            let backoff = self.rng.gen_range(d..=3 * d);
            env.trace(TraceEvent::Retry {
                node: self.id,
                tx,
                attempt: attempt + 1,
                at: env.now() + backoff,
            });
            env.set_timer(
                self.id,
                backoff,
                Timer::Retry {
                    tx,
                    view,
                    attempt: attempt + 1,
                },
            );
        } else {
            env.trace(TraceEvent::Abandon {
                node: self.id,
                tx,
                reason: "retries-exhausted".into(),
            });
        }
    }

    fn propose_fresh(&mut self, env: &mut dyn Env, tx: Digest) {
        let Some(inst) = self.instances.get(&tx) else {
            return;
        };
        let Some(lead) = inst.lead.as_ref() else {
            return;
        };
        let Some(receiver_tip) = lead.tip else {
            return;
        };
        let t = inst.tx.clone();
        let chain = self.chains.get(&t.sender);
        let mut sender_tip = chain.map(AccountChain::tip).unwrap_or(ParentRef::GENESIS);
        if self.behavior.is_honest() {
            if let Some(Verdict::Reject(reason)) =
                chain.map(|c| c.validate_transaction(&t, env.auth()))
            {
                self.abandon(env, tx, format!("{reason:?}"));
                return;
            }
        }
        if self.behavior == Behavior::Byzantine(Strategy::StaleTip) {
            sender_tip = stale(sender_tip, chain);
        }
        let prev_votes = if self.cfg.include_prev_votes {
            Some(
                self.evidence
                    .get(&t.sender)
                    .map(|qc| qc.votes.clone())
                    .unwrap_or_default(),
            )
        } else {
            None
        };
        let validators = inst.group.union_v.clone();
        let block = Block::new(
            t.clone(),
            validators.clone(),
            sender_tip,
            receiver_tip,
            prev_votes.clone(),
        );
        if let Some(l) = self.instances.get_mut(&tx).and_then(|i| i.lead.as_mut()) {
            l.proposed = true;
        }
        if self.behavior == Behavior::Byzantine(Strategy::Equivocate) {
            let mut alt_votes = prev_votes.unwrap_or_default();
            alt_votes.push(env.auth().sign(&self.id, &Digest::of(b"equivocation")));
            let twin = Block::new(
                t,
                validators.clone(),
                sender_tip,
                receiver_tip,
                Some(alt_votes),
            );
            let view = self.instances[&tx].view;
            let a = self.sign_proposal(env, tx, view, block, None);
            let b = self.sign_proposal(env, tx, view, twin, None);
            self.phase(env, tx, view, Phase::Proposed);
            let half = validators.len() / 2;
            for (i, n) in validators.iter().enumerate() {
                let p = if i < half { a.clone() } else { b.clone() };
                env.send(self.id, *n, Message::Propose { proposal: p });
            }
            return;
        }
        self.propose(env, tx, block, None);
    }

    fn sign_proposal(
        &self,
        env: &mut dyn Env,
        tx: Digest,
        view: u64,
        block: Block,
        justify: Option<QuorumCertificate>,
    ) -> Proposal {
        let signature = env
            .auth()
            .sign(&self.id, &Proposal::digest(&tx, view, &block.hash));
        Proposal {
            block,
            view,
            justify,
            signature,
        }
    }

    fn propose(
        &mut self,
        env: &mut dyn Env,
        tx: Digest,
        block: Block,
        justify: Option<QuorumCertificate>,
    ) {
        let inst = &self.instances[&tx];
        let view = inst.view;
        let group = inst.group.clone();
        let proposal = self.sign_proposal(env, tx, view, block, justify);
        self.phase(env, tx, view, Phase::Proposed);
        self.broadcast(env, &group, Message::Propose { proposal }, true);
    }

    fn abandon(&mut self, env: &mut dyn Env, tx: Digest, reason: String) {
        let Some(inst) = self.instances.get_mut(&tx) else {
            return;
        };
        if inst.settled() {
            return;
        }
        inst.abandoned = true;
        let view = inst.view;
        let lead = inst.lead.take();
        let (sender, receiver) = (inst.tx.sender, inst.tx.receiver);
        let target = lead
            .as_ref()
            .map(|l| inst.group.r_r[l.receiver_index % inst.group.r_r.len()]);
        env.trace(TraceEvent::Abandon {
            node: self.id,
            tx,
            reason,
        });
        self.phase(env, tx, view, Phase::Aborted);
        self.release_lock(env, sender, tx, None);
        if let (Some(l), Some(target)) = (lead, target) {
            env.send(
                self.id,
                target,
                Message::TipRelease {
                    tx_id: tx,
                    account: receiver,
                    attempt: l.attempt,
                },
            );
        }
    }

    // ---- receiver-side locking ---------------------------------------------

    fn on_tip_request(
        &mut self,
        env: &mut dyn Env,
        from: Identifier,
        tx: Transaction,
        attempt: u32,
    ) {
        let account = tx.receiver;
        let tx_id = tx.id();
        if !self.chains.contains_key(&account) {
            let k = self.cfg.k.max(self.cfg.r);
            if !env.closest(&account, k).contains(&self.id) {
                return;
            }
            self.ensure_chain(account);
        }
        if !self.behavior.is_honest() {
            let mut tip = self.chains[&account].tip();
            if self.behavior == Behavior::Byzantine(Strategy::StaleTip) {
                tip = stale(tip, self.chains.get(&account));
            }
            env.send(
                self.id,
                from,
                Message::TipReply {
                    tx_id,
                    account,
                    tip,
                    attempt,
                },
            );
            return;
        }
        let claim = LockClaim::Remote {
            tx: tx_id,
            attempt,
            requester: from,
        };
        match self.locks.acquire(account, claim) {
            Acquire::Granted { generation } | Acquire::AlreadyHeld { generation } => {
                self.on_granted(env, account, claim, generation)
            }
            Acquire::Queued => {
                env.trace(TraceEvent::Lock {
                    node: self.id,
                    account,
                    tx: tx_id,
                    event: "queued".into(),
                });
                env.send(self.id, from, Message::TipBusy { tx_id, attempt });
            }
        }
    }

    fn on_granted(
        &mut self,
        env: &mut dyn Env,
        account: Identifier,
        claim: LockClaim,
        generation: u64,
    ) {
        env.trace(TraceEvent::Lock {
            node: self.id,
            account,
            tx: claim.tx(),
            event: "acquired".into(),
        });
        match claim {
            LockClaim::Local { tx, attempt } => self.on_local_grant(env, tx, attempt),
            LockClaim::Remote {
                tx,
                attempt,
                requester,
            } => {
                let tip = self
                    .chains
                    .get(&account)
                    .map(AccountChain::tip)
                    .unwrap_or(ParentRef::GENESIS);
                env.send(
                    self.id,
                    requester,
                    Message::TipReply {
                        tx_id: tx,
                        account,
                        tip,
                        attempt,
                    },
                );
                env.set_timer(
                    self.id,
                    self.cfg.lock_expiry,
                    Timer::LockExpiry {
                        account,
                        generation,
                        extensions: 0,
                    },
                );
            }
        }
    }

    fn release_lock(
        &mut self,
        env: &mut dyn Env,
        account: Identifier,
        tx: Digest,
        attempt: Option<u32>,
    ) {
        let held = self
            .locks
            .holder(&account)
            .is_some_and(|h| h.tx() == tx && attempt.map_or(true, |a| h.attempt() <= a));
        let next = self.locks.release(&account, &tx, attempt);
        if held {
            env.trace(TraceEvent::Lock {
                node: self.id,
                account,
                tx,
                event: "released".into(),
            });
        }
        if let Some((claim, generation)) = next {
            self.on_granted(env, account, claim, generation);
        }
    }

    fn on_lock_expiry(
        &mut self,
        env: &mut dyn Env,
        account: Identifier,
        generation: u64,
        extensions: u32,
    ) {
        if self.locks.generation(&account) != generation {
            return;
        }
        let Some(holder) = self.locks.holder(&account) else {
            return;
        };
        let in_progress = self
            .instances
            .get(&holder.tx())
            .is_some_and(|i| !i.settled() && !i.blocks.is_empty());
        if in_progress && extensions < 3 {
            env.set_timer(
                self.id,
                self.cfg.lock_expiry,
                Timer::LockExpiry {
                    account,
                    generation,
                    extensions: extensions + 1,
                },
            );
            return;
        }
        self.locks.expire(&account, generation);
        env.trace(TraceEvent::Lock {
            node: self.id,
            account,
            tx: holder.tx(),
            event: "expired".into(),
        });
        if let Some((claim, generation)) = self.locks.grant_next(&account) {
            self.on_granted(env, account, claim, generation);
        }
    }

    // ---- voting ------------------------------------------------------------

    fn on_proposal(&mut self, env: &mut dyn Env, from: Identifier, p: Proposal) {
        let tx = p.tx_id();
        if !self.ensure_instance(env, &p.block.tx) {
            return;
        }
        let inst = self.instances.get_mut(&tx).expect("ensured");
        if inst.settled() {
            if inst.commit_without_block == Some(p.block.hash) && p.block.hash_valid() {
                inst.blocks.insert(p.block.hash, p.block.clone());
                inst.commit_without_block = None;
                inst.committed = None;
                self.check_progress(env, tx);
            }
            return;
        }
        let leader = inst.group.leader_for_view(p.view);
        let digest = Proposal::digest(&tx, p.view, &p.block.hash);
        if p.signature.signer != leader
            || !env.auth().verify(&p.signature, &digest)
            || !p.block.hash_valid()
        {
            env.trace(TraceEvent::Reject {
                node: self.id,
                tx,
                view: p.view,
                reason: "bad-proposal-signature".into(),
            });
            return;
        }
        if p.view > inst.view {
            self.defer(from, p);
            return;
        }
        if p.view < inst.view {
            return;
        }
        let view = p.view;
        let hash = p.block.hash;
        inst.blocks.insert(hash, p.block.clone());
        for pos in positions(&p.block) {
            self.seen_positions
                .entry(pos)
                .or_default()
                .insert(hash, (tx, view));
        }
        let inst = self.instances.get_mut(&tx).expect("exists");
        inst.forwards.entry((view, hash)).or_default().insert(from);
        if let Some(first) = inst.leader_props.get(&view) {
            if first.block.hash != hash {
                let proof = (first.clone(), p.clone());
                self.on_equivocation(env, tx, view, proof);
                if self.behavior.votes_everything() {
                    self.byzantine_vote(env, tx, &p);
                }
                return;
            }
        } else {
            inst.leader_props.insert(view, p.clone());
        }
        if inst.forwarded.insert((view, hash)) {
            inst.forwards
                .entry((view, hash))
                .or_default()
                .insert(self.id);
            let group = inst.group.clone();
            self.broadcast(
                env,
                &group,
                Message::Forward {
                    proposal: p.clone(),
                },
                false,
            );
        }
        if self.behavior.votes_everything() {
            self.byzantine_vote(env, tx, &p);
        } else {
            self.maybe_vote(env, from, tx, &p);
        }
        self.check_progress(env, tx);
    }

    fn defer(&mut self, from: Identifier, p: Proposal) {
        const MAX_DEFERRED: usize = 1024;
        if self.deferred.len() >= MAX_DEFERRED {
            self.deferred.remove(0);
        }
        if !self.deferred.iter().any(|(f, q)| *f == from && *q == p) {
            self.deferred.push((from, p));
        }
    }

    fn retry_deferred(&mut self, env: &mut dyn Env) {
        let pending = std::mem::take(&mut self.deferred);
        for (from, p) in pending {
            self.on_proposal(env, from, p);
        }
    }

    /// Another transaction's block at one of `block`'s positions that could
    /// still commit: certified, or (when `voting`) carrying this node's vote.
    fn conflict_seen(&self, block: &Block, voting: bool) -> bool {
        let tx = block.tx.id();
        positions(block).iter().any(|pos| {
            self.seen_positions.get(pos).is_some_and(|m| {
                m.iter().any(|(h, (t, view))| {
                    *t != tx && *h != block.hash && self.contends(t, *view, h, voting)
                })
            })
        })
    }

    fn contends(&self, tx: &Digest, view: u64, hash: &Digest, voting: bool) -> bool {
        let Some(inst) = self.instances.get(tx) else {
            return false;
        };
        if let Some(c) = inst.committed {
            return c == *hash;
        }
        let locked = inst.lock.as_ref().is_some_and(|l| l.block_hash == *hash);
        let live = inst.view <= view || locked;
        live && (inst.certified.contains(hash) || (voting && inst.voted.get(&view) == Some(hash)))
    }

    fn check_proposal(&self, env: &dyn Env, inst: &Instance, p: &Proposal) -> Check {
        let b = &p.block;
        let tx = inst.tx.id();
        if b.validators != inst.group.union_v {
            return Check::Reject("validator-list".into());
        }
        if !b.tx.is_well_formed() || !b.tx.signature_valid(env.auth()) {
            return Check::Reject("bad-transaction".into());
        }
        let sides = [
            (
                inst.group.in_sender_group(&self.id),
                b.tx.sender,
                b.sender_parent,
            ),
            (
                inst.group.in_receiver_group(&self.id),
                b.tx.receiver,
                b.receiver_parent,
            ),
        ];
        for (member, account, parent) in sides {
            if !member {
                continue;
            }
            let Some(chain) = self.chains.get(&account) else {
                return Check::Reject("missing-chain".into());
            };
            let tip = chain.tip();
            if parent.height > tip.height {
                return Check::Defer;
            }
            if parent != tip {
                return Check::Reject("stale-parent".into());
            }
            if account == b.tx.sender {
                if let Verdict::Reject(reason) = chain.validate_transaction(&b.tx, env.auth()) {
                    return Check::Reject(format!("{reason:?}"));
                }
            }
        }
        if self.conflict_seen(b, true) {
            return Check::Reject("position-conflict".into());
        }
        if let Some(j) = &p.justify {
            let ok = j.tx_id == tx
                && j.block_hash == b.hash
                && j.verify(
                    &inst.group,
                    self.cfg.quorum_rule,
                    VoteKind::Vote,
                    env.auth(),
                );
            if !ok {
                return Check::Reject("bad-justify".into());
            }
        }
        if let Some(lock) = &inst.lock {
            if lock.block_hash != b.hash && !p.justify.as_ref().is_some_and(|j| j.view >= lock.view)
            {
                return Check::Reject("locked-on-other-block".into());
            }
        }
        Check::Ok
    }

    fn maybe_vote(&mut self, env: &mut dyn Env, from: Identifier, tx: Digest, p: &Proposal) {
        let inst = &self.instances[&tx];
        if inst.voted.contains_key(&p.view) {
            return;
        }
        match self.check_proposal(env, inst, p) {
            Check::Ok => self.cast_vote(env, tx, p.view, p.block.hash),
            Check::Defer => self.defer(from, p.clone()),
            Check::Reject(reason) => env.trace(TraceEvent::Reject {
                node: self.id,
                tx,
                view: p.view,
                reason,
            }),
        }
    }

    fn cast_vote(&mut self, env: &mut dyn Env, tx: Digest, view: u64, block: Digest) {
        let signature = env
            .auth()
            .sign(&self.id, &vote_digest(VoteKind::Vote, &tx, view, &block));
        let inst = self.instances.get_mut(&tx).expect("exists");
        inst.voted.entry(view).or_insert(block);
        let group = inst.group.clone();
        self.phase(env, tx, view, Phase::Voted);
        self.broadcast(
            env,
            &group,
            Message::Vote {
                tx_id: tx,
                view,
                block,
                signature,
            },
            true,
        );
    }

    /// Votes and commits without checking anything.
    fn byzantine_vote(&mut self, env: &mut dyn Env, tx: Digest, p: &Proposal) {
        let hash = p.block.hash;
        let inst = self.instances.get_mut(&tx).expect("exists");
        if !inst.sent_commit.insert(hash) {
            return;
        }
        self.cast_vote(env, tx, p.view, hash);
        self.send_commit(env, tx, p.view, hash);
    }

    fn send_commit(&mut self, env: &mut dyn Env, tx: Digest, view: u64, block: Digest) {
        let signature = env
            .auth()
            .sign(&self.id, &vote_digest(VoteKind::Commit, &tx, 0, &block));
        let group = self.instances[&tx].group.clone();
        self.broadcast(
            env,
            &group,
            Message::Commit {
                tx_id: tx,
                view,
                block,
                signature,
            },
            true,
        );
    }

    fn on_vote(&mut self, env: &mut dyn Env, tx: Digest, view: u64, block: Digest, sig: Signature) {
        let Some(inst) = self.instances.get_mut(&tx) else {
            return;
        };
        if !inst.group.contains(&sig.signer)
            || !env
                .auth()
                .verify(&sig, &vote_digest(VoteKind::Vote, &tx, view, &block))
        {
            return;
        }
        inst.votes
            .entry((view, block))
            .or_default()
            .insert(sig.signer, sig);
        self.check_progress(env, tx);
    }

    fn on_certified(&mut self, env: &mut dyn Env, qc: QuorumCertificate) {
        let rule = self.cfg.quorum_rule;
        let Some(inst) = self.instances.get_mut(&qc.tx_id) else {
            return;
        };
        if !qc.verify(&inst.group, rule, VoteKind::Vote, env.auth()) {
            return;
        }
        inst.certified.insert(qc.block_hash);
        if inst.lock.as_ref().map_or(true, |l| qc.view > l.view) {
            inst.lock = Some(qc);
        }
    }

    fn on_commit_msg(&mut self, env: &mut dyn Env, tx: Digest, block: Digest, sig: Signature) {
        let Some(inst) = self.instances.get_mut(&tx) else {
            return;
        };
        if !inst.group.contains(&sig.signer)
            || !env
                .auth()
                .verify(&sig, &vote_digest(VoteKind::Commit, &tx, 0, &block))
        {
            return;
        }
        inst.commits
            .entry(block)
            .or_default()
            .insert(sig.signer, sig);
        self.check_progress(env, tx);
    }

    /// Arms the pre-commit timer on a vote quorum and commits on a commit
    /// quorum.
    fn check_progress(&mut self, env: &mut dyn Env, tx: Digest) {
        let Some(inst) = self.instances.get(&tx) else {
            return;
        };
        if inst.committed.is_some() {
            return;
        }
        let committable = inst
            .commits
            .iter()
            .find(|(_, sigs)| self.q_reached(&inst.group, &sigs.keys().copied().collect()))
            .map(|(h, _)| *h);
        if let Some(h) = committable {
            self.commit(env, tx, h);
            return;
        }
        if inst.abandoned || !self.behavior.is_honest() {
            return;
        }
        let view = inst.view;
        let Some(&hash) = inst.voted.get(&view) else {
            return;
        };
        if inst.armed.contains(&(view, hash)) || inst.equivocation.contains(&view) {
            return;
        }
        let votes = inst.votes.get(&(view, hash));
        let voters: BTreeSet<Identifier> = votes
            .map(|v| v.keys().copied().collect())
            .unwrap_or_default();
        let forwarders = inst
            .forwards
            .get(&(view, hash))
            .cloned()
            .unwrap_or_default();
        if !self.q_reached(&inst.group, &voters) || !self.q_reached(&inst.group, &forwarders) {
            return;
        }
        let Some(block) = inst.blocks.get(&hash) else {
            return;
        };
        if self.conflict_seen(block, false) {
            return;
        }
        let qc = QuorumCertificate {
            tx_id: tx,
            block_hash: hash,
            view,
            votes: votes
                .map(|v| v.values().copied().collect())
                .unwrap_or_default(),
        };
        let inst = self.instances.get_mut(&tx).expect("exists");
        inst.armed.insert((view, hash));
        inst.certified.insert(hash);
        if inst.lock.as_ref().map_or(true, |l| view > l.view) {
            inst.lock = Some(qc.clone());
        }
        let group = inst.group.clone();
        self.broadcast(env, &group, Message::Certified { qc }, false);
        self.phase(env, tx, view, Phase::PreCommitPending);
        env.set_timer(
            self.id,
            2 * self.cfg.delta,
            Timer::PreCommit {
                tx,
                view,
                block: hash,
            },
        );
    }

    fn on_precommit_timer(&mut self, env: &mut dyn Env, tx: Digest, view: u64, hash: Digest) {
        let Some(inst) = self.instances.get(&tx) else {
            return;
        };
        if inst.settled() || inst.view != view || inst.equivocation.contains(&view) {
            return;
        }
        let conflict = inst
            .blocks
            .get(&hash)
            .map_or(true, |b| self.conflict_seen(b, false));
        if conflict {
            env.trace(TraceEvent::Reject {
                node: self.id,
                tx,
                view,
                reason: "pre-commit-cancelled".into(),
            });
            return;
        }
        let inst = self.instances.get_mut(&tx).expect("exists");
        if inst.sent_commit.insert(hash) {
            self.send_commit(env, tx, view, hash);
        }
    }

    // ---- commit and chain application ----------------------------------

    fn commit(&mut self, env: &mut dyn Env, tx: Digest, hash: Digest) {
        let inst = self.instances.get_mut(&tx).expect("exists");
        let Some(block) = inst.blocks.get(&hash).cloned() else {
            inst.commit_without_block = Some(hash);
            return;
        };
        inst.committed = Some(hash);
        inst.abandoned = false;
        let view = inst.view;
        let lead = inst.lead.take();
        let signers: Vec<Identifier> = inst.commits[&hash].keys().copied().collect();
        let evidence = QuorumCertificate {
            tx_id: tx,
            block_hash: hash,
            view: 0,
            votes: inst.commits[&hash].values().copied().collect(),
        };
        env.trace(TraceEvent::Commit {
            node: self.id,
            tx,
            view,
            block: hash,
            sender: block.tx.sender,
            sender_height: block.sender_height(),
            receiver: block.tx.receiver,
            receiver_height: block.receiver_height(),
        });
        self.phase(env, tx, view, Phase::Committed);
        let peers: Vec<Identifier> = signers.into_iter().filter(|n| *n != self.id).collect();
        for account in [block.tx.sender, block.tx.receiver] {
            if self.chains.contains_key(&account) || self.instances[&tx].group.contains(&self.id) {
                self.ensure_chain(account);
                self.apply_committed(
                    env,
                    account,
                    block.clone(),
                    Some(evidence.clone()),
                    peers.clone(),
                );
            } else {
                self.release_lock(env, account, tx, None);
            }
        }
        if let Some(l) = lead {
            if !l.proposed {
                let target = self.instances[&tx].group.r_r[l.receiver_index % self.cfg.r.max(1)];
                let receiver = block.tx.receiver;
                env.send(
                    self.id,
                    target,
                    Message::TipRelease {
                        tx_id: tx,
                        account: receiver,
                        attempt: l.attempt,
                    },
                );
            }
        }
    }

    fn apply_committed(
        &mut self,
        env: &mut dyn Env,
        account: Identifier,
        block: Block,
        evidence: Option<QuorumCertificate>,
        peers: Vec<Identifier>,
    ) {
        let Some(parent) = block.parent_for(&account) else {
            return;
        };
        let chain = self.chains.get_mut(&account).expect("ensured");
        let tip = chain.tip();
        if parent == tip {
            let hash = block.hash;
            let tx = block.tx.id();
            chain.append_block(block).expect("linkage checked");
            let height = chain.height();
            if let Some(ev) = evidence {
                self.evidence.insert(account, ev);
            }
            env.trace(TraceEvent::Append {
                node: self.id,
                account,
                height,
                block: hash,
            });
            self.after_append(env, account, tx);
        } else if parent.height > tip.height {
            if peers.is_empty() {
                return;
            }
            let lo = tip.height + 1;
            let hi = parent.height;
            env.trace(TraceEvent::GapFill {
                node: self.id,
                account,
                from: lo,
                to: hi,
            });
            env.send(
                self.id,
                peers[0],
                Message::GetBlocks {
                    account,
                    from: lo,
                    to: hi,
                },
            );
            env.set_timer(
                self.id,
                4 * self.cfg.delta,
                Timer::GapRetry { account, tries: 1 },
            );
            self.pending_fill.insert(
                account,
                PendingFill {
                    block,
                    evidence,
                    peers,
                },
            );
        } else {
            let height = parent.height + 1;
            let same = chain.block_at(height).is_some_and(|b| b.hash == block.hash);
            if !same {
                env.trace(TraceEvent::Reject {
                    node: self.id,
                    tx: block.tx.id(),
                    view: 0,
                    reason: "fork-at-commit".into(),
                });
            }
        }
    }

    fn after_append(&mut self, env: &mut dyn Env, account: Identifier, tx: Digest) {
        self.release_lock(env, account, tx, None);
        if let Some(fill) = self.pending_fill.get(&account) {
            let tip = self.chains[&account].tip();
            if fill.block.parent_for(&account) == Some(tip) {
                let fill = self.pending_fill.remove(&account).expect("present");
                self.apply_committed(env, account, fill.block, fill.evidence, fill.peers);
            }
        }
        self.retry_deferred(env);
    }

    fn on_blocks(&mut self, env: &mut dyn Env, account: Identifier, blocks: Vec<Block>) {
        let Some(fill) = self.pending_fill.get(&account) else {
            return;
        };
        let Some(chain) = self.chains.get(&account) else {
            return;
        };
        let mut running = chain.tip();
        for b in &blocks {
            if !b.hash_valid() || b.parent_for(&account) != Some(running) {
                return;
            }
            running = b.as_parent(&account).expect("involves account");
        }
        if fill.block.parent_for(&account) != Some(running) {
            return;
        }
        let fill = self.pending_fill.remove(&account).expect("present");
        for b in blocks {
            self.apply_committed(env, account, b, None, Vec::new());
        }
        self.apply_committed(env, account, fill.block, fill.evidence, fill.peers);
    }

    fn on_gap_retry(&mut self, env: &mut dyn Env, account: Identifier, tries: u32) {
        let Some(fill) = self.pending_fill.get(&account) else {
            return;
        };
        if tries as usize >= 2 * fill.peers.len() {
            return;
        }
        let peer = fill.peers[tries as usize % fill.peers.len()];
        let hi = fill.block.parent_for(&account).map_or(0, |p| p.height);
        let lo = self.chains.get(&account).map_or(1, |c| c.height() + 1);
        env.send(
            self.id,
            peer,
            Message::GetBlocks {
                account,
                from: lo,
                to: hi,
            },
        );
        env.set_timer(
            self.id,
            4 * self.cfg.delta,
            Timer::GapRetry {
                account,
                tries: tries + 1,
            },
        );
    }

    // ---- view change -----------------------------------------------------

    fn on_view_timeout(&mut self, env: &mut dyn Env, tx: Digest, view: u64) {
        let Some(inst) = self.instances.get(&tx) else {
            return;
        };
        if inst.settled() || inst.view != view || !self.behavior.is_honest() {
            return;
        }
        if inst.group.in_sender_group(&self.id) {
            if let Some(chain) = self.chains.get(&inst.tx.sender) {
                if let Verdict::Reject(reason) = chain.validate_transaction(&inst.tx, env.auth()) {
                    self.abandon(env, tx, format!("{reason:?}"));
                    return;
                }
            }
        }
        self.send_blame(env, tx, view, None);
    }

    fn send_blame(
        &mut self,
        env: &mut dyn Env,
        tx: Digest,
        view: u64,
        proof: Option<(Proposal, Proposal)>,
    ) {
        let inst = self.instances.get_mut(&tx).expect("exists");
        if !inst.blamed.insert(view) {
            return;
        }
        let group = inst.group.clone();
        let signature = env.auth().sign(
            &self.id,
            &vote_digest(VoteKind::Blame, &tx, view, &Digest::ZERO),
        );
        env.trace(TraceEvent::Blame {
            node: self.id,
            tx,
            view,
            proof: proof.is_some(),
        });
        self.broadcast(
            env,
            &group,
            Message::Blame {
                tx_id: tx,
                view,
                signature,
                proof: proof.map(Box::new),
            },
            true,
        );
    }

    fn valid_equivocation(
        &self,
        env: &dyn Env,
        inst: &Instance,
        view: u64,
        proof: &(Proposal, Proposal),
    ) -> bool {
        let (a, b) = proof;
        let tx = inst.tx.id();
        let leader = inst.group.leader_for_view(view);
        a.view == view
            && b.view == view
            && a.block.hash != b.block.hash
            && [a, b].iter().all(|p| {
                p.tx_id() == tx
                    && p.signature.signer == leader
                    && env
                        .auth()
                        .verify(&p.signature, &Proposal::digest(&tx, view, &p.block.hash))
            })
    }

    fn on_equivocation(
        &mut self,
        env: &mut dyn Env,
        tx: Digest,
        view: u64,
        proof: (Proposal, Proposal),
    ) {
        let inst = self.instances.get_mut(&tx).expect("exists");
        if !inst.equivocation.insert(view) {
            return;
        }
        env.trace(TraceEvent::Equivocation {
            node: self.id,
            tx,
            view,
        });
        if self.behavior.is_honest() {
            self.send_blame(env, tx, view, Some(proof));
            self.enter_view(env, tx, view + 1);
        }
    }

    fn on_blame(
        &mut self,
        env: &mut dyn Env,
        tx: Digest,
        view: u64,
        sig: Signature,
        proof: Option<(Proposal, Proposal)>,
    ) {
        let Some(inst) = self.instances.get(&tx) else {
            return;
        };
        if inst.settled()
            || !inst.group.contains(&sig.signer)
            || !env.auth().verify(
                &sig,
                &vote_digest(VoteKind::Blame, &tx, view, &Digest::ZERO),
            )
        {
            return;
        }
        if let Some(proof) = proof {
            if view >= inst.view && self.valid_equivocation(env, inst, view, &proof) {
                self.on_equivocation(env, tx, view, proof);
                return;
            }
        }
        let rule = self.cfg.quorum_rule;
        let inst = self.instances.get_mut(&tx).expect("exists");
        inst.blames.entry(view).or_default().insert(sig.signer, sig);
        let blamers: BTreeSet<Identifier> = inst.blames[&view].keys().copied().collect();
        if view >= inst.view && inst.group.has_quorum(&blamers, rule) {
            self.enter_view(env, tx, view + 1);
        }
    }

    fn enter_view(&mut self, env: &mut dyn Env, tx: Digest, view: u64) {
        let inst = self.instances.get_mut(&tx).expect("exists");
        if view <= inst.view || inst.settled() {
            return;
        }
        inst.view = view;
        let lead = inst.lead.take();
        let (sender, receiver) = (inst.tx.sender, inst.tx.receiver);
        let old_target = lead
            .as_ref()
            .map(|l| inst.group.r_r[l.receiver_index % inst.group.r_r.len()]);
        let highest = inst.lock.as_ref().and_then(|qc| {
            inst.blocks
                .get(&qc.block_hash)
                .map(|b| Box::new((b.clone(), qc.clone())))
        });
        let leader = inst.group.leader_for_view(view);
        env.trace(TraceEvent::ViewChange {
            node: self.id,
            tx,
            view,
        });
        if let Some(l) = lead {
            self.release_lock(env, sender, tx, None);
            if let Some(target) = old_target {
                env.send(
                    self.id,
                    target,
                    Message::TipRelease {
                        tx_id: tx,
                        account: receiver,
                        attempt: l.attempt,
                    },
                );
            }
        }
        env.send(
            self.id,
            leader,
            Message::Status {
                tx_id: tx,
                view,
                highest,
            },
        );
        env.set_timer(self.id, self.cfg.view_timeout, Timer::View { tx, view });
        if leader == self.id {
            env.set_timer(self.id, 2 * self.cfg.delta, Timer::StatusWait { tx, view });
        }
        self.retry_deferred(env);
    }

    fn on_status(
        &mut self,
        env: &mut dyn Env,
        tx: Digest,
        view: u64,
        highest: Option<(Block, QuorumCertificate)>,
    ) {
        let rule = self.cfg.quorum_rule;
        let Some(inst) = self.instances.get_mut(&tx) else {
            return;
        };
        if inst.group.leader_for_view(view) != self.id {
            return;
        }
        if let Some((block, qc)) = highest {
            let ok = block.hash_valid()
                && block.tx.id() == tx
                && qc.tx_id == tx
                && qc.block_hash == block.hash
                && qc.verify(&inst.group, rule, VoteKind::Vote, env.auth());
            if ok {
                inst.blocks
                    .entry(block.hash)
                    .or_insert_with(|| block.clone());
                inst.statuses.entry(view).or_default().push((block, qc));
            }
        }
    }

    // ---- replication -----------------------------------------------------

    /// Arms the periodic replication timer, first firing after `offset`.
    pub fn start_replication(&self, env: &mut dyn Env, offset: Time) {
        if self.cfg.replication_period.is_some() {
            env.set_timer(self.id, offset, Timer::Replication);
        }
    }

    fn on_replication_tick(&mut self, env: &mut dyn Env) {
        let Some(period) = self.cfg.replication_period else {
            return;
        };
        let k = self.cfg.k.max(self.cfg.r);
        let accounts: Vec<Identifier> = self.chains.keys().copied().collect();
        for account in accounts {
            let closest = env.closest(&account, k);
            let policy = self.cfg.replication;
            let state = self
                .replication
                .entry(account)
                .or_insert_with(|| ReplicationState::new(&policy));
            let action = replication_tick(state, closest.contains(&self.id), &policy);
            match action {
                ReplicationAction::ReplicateAndReschedule | ReplicationAction::Replicate { .. } => {
                    if let (Some(block), Some(evidence)) = (
                        self.chains[&account].tip_block().cloned(),
                        self.evidence.get(&account).cloned(),
                    ) {
                        for n in closest.iter().filter(|n| **n != self.id) {
                            env.send(
                                self.id,
                                *n,
                                Message::ReplicateTip {
                                    account,
                                    block: block.clone(),
                                    evidence: evidence.clone(),
                                },
                            );
                        }
                    }
                }
                ReplicationAction::StartDropTimer => {
                    let delay = period * self.cfg.replication.drop_periods as Time;
                    env.set_timer(self.id, delay, Timer::DropChain { account });
                }
                ReplicationAction::SkipAndReschedule | ReplicationAction::Idle => {}
            }
            if !matches!(action, ReplicationAction::Idle) {
                env.trace(TraceEvent::Replicate {
                    node: self.id,
                    account,
                    action: serde_json::to_value(action)
                        .ok()
                        .and_then(|v| match v {
                            serde_json::Value::String(s) => Some(s),
                            serde_json::Value::Object(m) => m.keys().next().cloned(),
                            _ => None,
                        })
                        .unwrap_or_default(),
                });
            }
        }
        env.set_timer(self.id, period, Timer::Replication);
    }

    fn on_replicate_tip(
        &mut self,
        env: &mut dyn Env,
        from: Identifier,
        account: Identifier,
        block: Block,
        evidence: QuorumCertificate,
    ) {
        let k = self.cfg.k.max(self.cfg.r);
        if !env.closest(&account, k).contains(&self.id) {
            return;
        }
        self.ensure_chain(account);
        if let Some(st) = self.replication.get_mut(&account) {
            st.on_tip_received();
        }
        let Some(height) = block.height_for(&account) else {
            return;
        };
        if height <= self.chains[&account].height() || self.pending_fill.contains_key(&account) {
            return;
        }
        let group = ValidatorGroup::from_union(
            &block.validators,
            &block.tx.sender,
            &block.tx.receiver,
            self.cfg.r,
        );
        let valid = block.hash_valid()
            && evidence.block_hash == block.hash
            && evidence.tx_id == block.tx.id()
            && evidence.verify(&group, self.cfg.quorum_rule, VoteKind::Commit, env.auth());
        if valid {
            self.apply_committed(env, account, block, Some(evidence), vec![from]);
        }
    }

    // ---- message-level lookups ---------------------------------------------

    /// Runs an iterative lookup for this node's own identifier over
    /// find-node messages, refreshing the routing table with the answers.
    pub fn start_self_lookup(&mut self, env: &mut dyn Env) {
        let seeds = env.table_closest(&self.id, &self.id, self.cfg.lookup_size);
        if seeds.is_empty() {
            return;
        }
        let id = self.next_lookup;
        self.next_lookup += 1;
        let pool = LookupPool::new(self.id, self.cfg.lookup_size, self.cfg.alpha, seeds);
        self.lookups.insert(
            id,
            ActiveLookup {
                pool,
                outstanding: BTreeSet::new(),
            },
        );
        self.lookup_next_round(env, id);
    }

    fn lookup_next_round(&mut self, env: &mut dyn Env, id: u64) {
        let Some(active) = self.lookups.get_mut(&id) else {
            return;
        };
        let queries = active.pool.next_round();
        if queries.is_empty() {
            let active = self.lookups.remove(&id).expect("present");
            let found = active.pool.result();
            for n in &found {
                env.observe(&self.id, *n);
            }
            env.trace(TraceEvent::LookupDone {
                node: self.id,
                target: active.pool.target(),
                rounds: active.pool.rounds(),
                found: found.len(),
            });
            return;
        }
        active.outstanding = queries.iter().copied().collect();
        let round = active.pool.rounds();
        let target = active.pool.target();
        for q in queries {
            env.send(
                self.id,
                q,
                Message::FindNode {
                    lookup: id,
                    target,
                    count: self.cfg.lookup_size,
                },
            );
        }
        env.set_timer(
            self.id,
            2 * self.cfg.delta,
            Timer::LookupRound { lookup: id, round },
        );
    }

    fn on_find_node_reply(
        &mut self,
        env: &mut dyn Env,
        from: Identifier,
        id: u64,
        nodes: Vec<Identifier>,
    ) {
        let Some(active) = self.lookups.get_mut(&id) else {
            return;
        };
        if !active.outstanding.remove(&from) {
            return;
        }
        active.pool.on_response(&from, &nodes);
        env.observe(&self.id, from);
        if active.outstanding.is_empty() {
            active.pool.finish_round();
            self.lookup_next_round(env, id);
        }
    }

    fn on_lookup_round_timeout(&mut self, env: &mut dyn Env, id: u64, round: u32) {
        let Some(active) = self.lookups.get_mut(&id) else {
            return;
        };
        if active.pool.rounds() != round || active.outstanding.is_empty() {
            return;
        }
        for n in std::mem::take(&mut active.outstanding) {
            active.pool.on_failure(&n);
        }
        active.pool.finish_round();
        self.lookup_next_round(env, id);
    }
}
