use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checks::{evaluate, CheckResult};
use super::fault::{FaultKind, SluggishWindows};
use super::latency::{sluggish_delay, Latency};
use super::message::Message;
use super::scenario::{ChurnKind, NodeRef, NodeSpec, Scenario, ScenarioError};
use super::trace::{Time, TraceEvent, TraceRecord};
use crate::auth::{Authenticator, Digest, SimAuthenticator};
use crate::consensus::{Behavior, Env, Replica, ReplicaConfig, Timer};
use crate::ident::{IdSpace, Identifier};
use crate::ledger::{GrantBook, Transaction};
use crate::routing::{oracle_closest, TableNetwork, DEFAULT_ALPHA, DEFAULT_K_BUCKET};

/// Safety valve against runaway runs.
pub const DEFAULT_EVENT_LIMIT: u64 = 20_000_000;

#[derive(Debug, Clone)]
enum EventKind {
    Deliver {
        from: Identifier,
        to: Identifier,
        msg: Box<Message>,
        sent_at: Time,
    },
    Timer {
        owner: Identifier,
        timer: Timer,
    },
    Inject {
        label: String,
        tx: Transaction,
        entry: Identifier,
    },
    Crash(Identifier),
    Join(Identifier),
    Leave(Option<Identifier>),
}

impl EventKind {
    fn periodic(&self) -> bool {
        matches!(self, EventKind::Timer { timer, .. } if timer.is_periodic())
    }
}

#[derive(Debug, Clone)]
struct Event {
    time: Time,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    /// Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// Everything except the replicas, so a replica can borrow it as its [`Env`].
struct World {
    now: Time,
    seq: u64,
    queue: BinaryHeap<Event>,
    pending_work: usize,
    net: TableNetwork,
    closest_cache: HashMap<(Identifier, usize), Vec<Identifier>>,
    latency: Latency,
    delta: Time,
    sluggish: BTreeMap<Identifier, SluggishWindows>,
    crashed: BTreeSet<Identifier>,
    auth: SimAuthenticator,
    rng: ChaCha8Rng,
    trace: Vec<TraceRecord>,
    trace_seq: u64,
}

impl World {
    fn push(&mut self, time: Time, kind: EventKind) {
        if !kind.periodic() {
            self.pending_work += 1;
        }
        self.seq += 1;
        self.queue.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn record(&mut self, event: TraceEvent) {
        self.trace_seq += 1;
        self.trace.push(TraceRecord {
            t: self.now,
            seq: self.trace_seq,
            event,
        });
    }

    fn invalidate(&mut self) {
        self.closest_cache.clear();
    }
}

impl Env for World {
    fn now(&self) -> Time {
        self.now
    }

    fn send(&mut self, from: Identifier, to: Identifier, msg: Message) {
        let delay = if from == to {
            0
        } else {
            match self.sluggish.get(&from) {
                Some(w) if w.active(self.now) => sluggish_delay(self.delta, w.max, &mut self.rng),
                _ => self.latency.sample(&mut self.rng),
            }
        };
        let deliver_at = self.now + delay;
        self.record(TraceEvent::Send {
            from,
            to,
            msg: msg.label().to_string(),
            tx: msg.tx_id(),
            deliver_at,
        });
        let sent_at = self.now;
        self.push(
            deliver_at,
            EventKind::Deliver {
                from,
                to,
                msg: Box::new(msg),
                sent_at,
            },
        );
    }

    fn set_timer(&mut self, owner: Identifier, delay: Time, timer: Timer) {
        let at = self.now + delay;
        self.push(at, EventKind::Timer { owner, timer });
    }

    fn closest(&mut self, target: &Identifier, count: usize) -> Vec<Identifier> {
        if let Some(hit) = self.closest_cache.get(&(*target, count)) {
            return hit.clone();
        }
        let start = self.net.live_nodes().next().copied();
        let found = start
            .and_then(|s| self.net.lookup(&s, target, count, true).ok())
            .map(|o| o.nodes)
            .unwrap_or_else(|| {
                let live: Vec<_> = self.net.live_nodes().copied().collect();
                oracle_closest(&live, target, count)
            });
        self.closest_cache.insert((*target, count), found.clone());
        found
    }

    fn table_closest(
        &self,
        owner: &Identifier,
        target: &Identifier,
        count: usize,
    ) -> Vec<Identifier> {
        self.net
            .table(owner)
            .map(|t| t.local_closest(target, count))
            .unwrap_or_default()
    }

    fn observe(&mut self, owner: &Identifier, node: Identifier) {
        self.net.observe(owner, node);
    }

    fn auth(&self) -> &dyn Authenticator {
        &self.auth
    }

    fn trace(&mut self, event: TraceEvent) {
        self.record(event);
    }
}

/// One injected transaction as the run saw it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxOutcome {
    pub label: String,
    pub tx: Digest,
    pub sender: Identifier,
    pub receiver: Identifier,
    pub injected_at: Time,
    /// First commit by an honest node.
    pub committed_at: Option<Time>,
    pub latency: Option<Time>,
    pub honest_commits: usize,
    /// Highest view any honest validator entered.
    pub max_view: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub name: String,
    pub seed: u64,
    pub end_reason: String,
    pub end_time: Time,
    pub events: u64,
    pub transactions: Vec<TxOutcome>,
    pub checks: Vec<CheckResult>,
}

impl SimReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn outcome(&self, label: &str) -> Option<&TxOutcome> {
        self.transactions.iter().find(|t| t.label == label)
    }
}

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A seeded discrete-event run of one [`Scenario`].
pub struct Sim {
    scenario: Scenario,
    space: IdSpace,
    cfg: Arc<ReplicaConfig>,
    world: World,
    replicas: BTreeMap<Identifier, Replica>,
    behaviors: BTreeMap<Identifier, Behavior>,
    accounts: BTreeMap<String, Identifier>,
    injected: Vec<(String, Transaction, Time)>,
    horizon: Option<Time>,
    event_limit: u64,
    events: u64,
    end_reason: Option<String>,
}

impl Sim {
    pub fn new(scenario: &Scenario) -> Result<Sim, ScenarioError> {
        scenario.validate()?;
        let space = IdSpace::new(scenario.id_bits)?;
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        let mut taken = HashSet::new();
        let nodes: Vec<Identifier> = match &scenario.nodes {
            NodeSpec::Count(n) => space.random_distinct(&mut rng, *n, &mut taken),
            NodeSpec::Ids(ids) => {
                let mut out = Vec::new();
                for v in ids {
                    let id = v.resolve(&space)?;
                    if !taken.insert(id) {
                        return Err(ScenarioError::Invalid(format!("duplicate node {id}")));
                    }
                    out.push(id);
                }
                out
            }
        };
        let mut accounts = BTreeMap::new();
        let mut grants = GrantBook {
            default: scenario.default_grant,
            overrides: BTreeMap::new(),
        };
        for a in &scenario.accounts {
            let id = match &a.id {
                Some(v) => v.resolve(&space)?,
                None => space.random_distinct(&mut rng, 1, &mut taken)[0],
            };
            if let Some(g) = a.grant {
                grants.overrides.insert(id, g);
            }
            accounts.insert(a.name.clone(), id);
        }

        let mut cfg = ReplicaConfig::new(scenario.r, scenario.delta);
        cfg.k = scenario.k.unwrap_or(scenario.r);
        if let Some(v) = scenario.view_timeout {
            cfg.view_timeout = v;
        }
        cfg.deadlock_policy = scenario.deadlock_policy;
        cfg.quorum_rule = scenario.quorum_rule;
        cfg.replication_period = scenario.replication_period;
        cfg.include_prev_votes = scenario.include_prev_votes;
        cfg.grants = grants;
        let cfg = Arc::new(cfg);

        let resolve = |node: &NodeRef| -> Result<Identifier, ScenarioError> {
            match node {
                NodeRef::Id { id } => Ok(id.resolve(&space)?),
                NodeRef::ClosestTo { closest_to, rank } => {
                    let acct = accounts
                        .get(closest_to)
                        .ok_or_else(|| ScenarioError::UnknownAccount(closest_to.clone()))?;
                    oracle_closest(&nodes, acct, rank + 1)
                        .get(*rank)
                        .copied()
                        .ok_or_else(|| {
                            ScenarioError::Invalid(format!("rank {rank} beyond population"))
                        })
                }
            }
        };

        let mut behaviors = BTreeMap::new();
        let mut sluggish = BTreeMap::new();
        let mut crashes = Vec::new();
        for f in &scenario.faults {
            let node = resolve(&f.node)?;
            match &f.behavior {
                FaultKind::Crash { at } => crashes.push((node, *at)),
                FaultKind::Sluggish { intervals, max } => {
                    sluggish.insert(
                        node,
                        SluggishWindows {
                            intervals: intervals.clone(),
                            max: max.unwrap_or(3 * scenario.delta),
                        },
                    );
                }
                FaultKind::Byzantine { strategy } => {
                    behaviors.insert(node, Behavior::Byzantine(*strategy));
                }
            }
        }
        let faulty: BTreeSet<Identifier> = behaviors
            .keys()
            .chain(crashes.iter().map(|(n, _)| n))
            .copied()
            .collect();

        let net = TableNetwork::fully_populated(&nodes, DEFAULT_K_BUCKET, DEFAULT_ALPHA, &mut rng);
        let world = World {
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            pending_work: 0,
            net,
            closest_cache: HashMap::new(),
            latency: scenario.latency,
            delta: scenario.delta,
            sluggish,
            crashed: BTreeSet::new(),
            auth: SimAuthenticator::new(scenario.seed),
            rng: ChaCha8Rng::seed_from_u64(mix(scenario.seed, 1)),
            trace: Vec::new(),
            trace_seq: 0,
        };

        let mut sim = Sim {
            scenario: scenario.clone(),
            space,
            cfg: cfg.clone(),
            world,
            replicas: BTreeMap::new(),
            behaviors,
            accounts: accounts.clone(),
            injected: Vec::new(),
            horizon: scenario.horizon,
            event_limit: DEFAULT_EVENT_LIMIT,
            events: 0,
            end_reason: None,
        };
        for n in &nodes {
            sim.add_replica(*n);
            sim.world.record(TraceEvent::Bootstrap { node: *n });
        }
        let k = cfg.k.max(cfg.r);
        for acct in accounts.values() {
            for n in sim.world.closest(acct, k) {
                if let Some(rep) = sim.replicas.get_mut(&n) {
                    rep.ensure_chain(*acct);
                }
            }
        }
        if let Some(period) = cfg.replication_period {
            for n in &nodes {
                let offset = sim.world.rng.gen_range(0..period.max(1));
                let rep = &sim.replicas[n];
                rep.start_replication(&mut sim.world, offset);
            }
        }
        for (node, at) in crashes {
            sim.world.push(at, EventKind::Crash(node));
        }

        let honest: Vec<Identifier> = nodes
            .iter()
            .copied()
            .filter(|n| !faulty.contains(n))
            .collect();
        let mut nonces: BTreeMap<Identifier, u64> = BTreeMap::new();
        for t in &scenario.transactions {
            let from = accounts[&t.from];
            let to = accounts[&t.to];
            let last = nonces.entry(from).or_insert(0);
            let nonce = t.nonce.unwrap_or(*last + 1);
            *last = (*last).max(nonce);
            let tx = Transaction::signed(&sim.world.auth, from, to, t.amount, nonce);
            let entry = match &t.entry {
                Some(r) => resolve(r)?,
                None => *honest
                    .choose(&mut rng)
                    .ok_or_else(|| ScenarioError::Invalid("no honest node to submit to".into()))?,
            };
            sim.injected.push((t.label.clone(), tx.clone(), t.at));
            sim.world.push(
                t.at,
                EventKind::Inject {
                    label: t.label.clone(),
                    tx,
                    entry,
                },
            );
        }

        if let Some(churn) = &scenario.churn {
            for e in &churn.events {
                let node = e.node.as_ref().map(|v| v.resolve(&space)).transpose()?;
                let kind = match e.kind {
                    ChurnKind::Join => {
                        let id = match node {
                            Some(id) => id,
                            None => space.random_distinct(&mut rng, 1, &mut taken)[0],
                        };
                        EventKind::Join(id)
                    }
                    ChurnKind::Leave => EventKind::Leave(node),
                };
                sim.world.push(e.at, kind);
            }
            if let Some(p) = &churn.poisson {
                let rate = p.rate_per_delta / scenario.delta as f64;
                if rate > 0.0 {
                    let mut t = 0.0f64;
                    loop {
                        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                        t += -u.ln() / rate;
                        if t > p.until as f64 {
                            break;
                        }
                        let kind = if rng.gen_bool(p.join_fraction.clamp(0.0, 1.0)) {
                            EventKind::Join(space.random_distinct(&mut rng, 1, &mut taken)[0])
                        } else {
                            EventKind::Leave(None)
                        };
                        sim.world.push(t as Time, kind);
                    }
                }
            }
        }
        Ok(sim)
    }

    pub fn from_json(json: &str) -> Result<Sim, ScenarioError> {
        Sim::new(&Scenario::from_json(json)?)
    }

    pub fn with_event_limit(mut self, limit: u64) -> Self {
        self.event_limit = limit;
        self
    }

    fn add_replica(&mut self, node: Identifier) {
        let behavior = self.behaviors.get(&node).copied().unwrap_or_default();
        let seed = mix(self.scenario.seed, node.low_u64() ^ 0x5EED);
        self.replicas
            .insert(node, Replica::new(node, behavior, self.cfg.clone(), seed));
    }

    pub fn space(&self) -> IdSpace {
        self.space
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn now(&self) -> Time {
        self.world.now
    }

    pub fn account(&self, name: &str) -> Option<Identifier> {
        self.accounts.get(name).copied()
    }

    pub fn accounts(&self) -> &BTreeMap<String, Identifier> {
        &self.accounts
    }

    pub fn replicas(&self) -> &BTreeMap<Identifier, Replica> {
        &self.replicas
    }

    pub fn replica(&self, id: &Identifier) -> Option<&Replica> {
        self.replicas.get(id)
    }

    pub fn is_honest(&self, id: &Identifier) -> bool {
        !self.behaviors.contains_key(id)
    }

    pub fn is_crashed(&self, id: &Identifier) -> bool {
        self.world.crashed.contains(id)
    }

    /// Nodes that are honest, not crashed and still present.
    pub fn correct_nodes(&self) -> Vec<Identifier> {
        self.replicas
            .keys()
            .filter(|n| self.is_honest(n) && !self.is_crashed(n))
            .copied()
            .collect()
    }

    pub fn sluggish_nodes(&self) -> BTreeSet<Identifier> {
        self.world.sluggish.keys().copied().collect()
    }

    pub fn delta(&self) -> Time {
        self.world.delta
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.world.trace
    }

    pub fn injected(&self) -> &[(String, Transaction, Time)] {
        &self.injected
    }

    /// The `count` live nodes closest to `target`, as replicas see them.
    pub fn closest(&mut self, target: &Identifier, count: usize) -> Vec<Identifier> {
        self.world.closest(target, count)
    }

    /// Processes one event. Returns false once the run has ended.
    pub fn step(&mut self) -> bool {
        if self.end_reason.is_some() {
            return false;
        }
        if self.world.pending_work == 0 {
            self.finish("quiescent");
            return false;
        }
        if self.events >= self.event_limit {
            self.finish("event-limit");
            return false;
        }
        let Some(ev) = self.world.queue.pop() else {
            self.finish("quiescent");
            return false;
        };
        if self.horizon.is_some_and(|h| ev.time > h) {
            self.world.queue.push(ev);
            if let Some(h) = self.horizon {
                self.world.now = h;
            }
            self.finish("horizon");
            return false;
        }
        if !ev.kind.periodic() {
            self.world.pending_work -= 1;
        }
        self.events += 1;
        self.world.now = ev.time;
        self.dispatch(ev.kind);
        true
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::Deliver {
                from,
                to,
                msg,
                sent_at,
            } => {
                let reason = if self.world.crashed.contains(&to) {
                    Some("crashed")
                } else if !self.replicas.contains_key(&to) {
                    Some("departed")
                } else {
                    None
                };
                if let Some(reason) = reason {
                    self.world.record(TraceEvent::Drop {
                        from,
                        to,
                        msg: msg.label().to_string(),
                        reason: reason.into(),
                    });
                    return;
                }
                self.world.record(TraceEvent::Deliver {
                    from,
                    to,
                    msg: msg.label().to_string(),
                    tx: msg.tx_id(),
                    sent_at,
                });
                let rep = self.replicas.get_mut(&to).expect("present");
                rep.on_message(&mut self.world, from, *msg);
            }
            EventKind::Timer { owner, timer } => {
                if self.world.crashed.contains(&owner) {
                    return;
                }
                if let Some(rep) = self.replicas.get_mut(&owner) {
                    rep.on_timer(&mut self.world, timer);
                }
            }
            EventKind::Inject { label, tx, entry } => {
                self.world.record(TraceEvent::Inject {
                    label,
                    tx: tx.id(),
                    entry,
                });
                if self.world.crashed.contains(&entry) {
                    return;
                }
                if let Some(rep) = self.replicas.get_mut(&entry) {
                    rep.on_message(&mut self.world, entry, Message::ClientTx { tx });
                }
            }
            EventKind::Crash(node) => {
                self.world.crashed.insert(node);
                self.world.record(TraceEvent::Crash { node });
            }
            EventKind::Join(node) => {
                if self.replicas.contains_key(&node) {
                    return;
                }
                let bootstrap = self.world.net.live_nodes().next().copied();
                self.world.net.join(node, bootstrap, DEFAULT_K_BUCKET);
                self.world.invalidate();
                self.add_replica(node);
                self.world.record(TraceEvent::Join { node });
                let rep = self.replicas.get_mut(&node).expect("just added");
                rep.start_self_lookup(&mut self.world);
                if let Some(period) = self.cfg.replication_period {
                    let offset = self.world.rng.gen_range(0..period.max(1));
                    rep.start_replication(&mut self.world, offset);
                }
            }
            EventKind::Leave(node) => {
                let node = match node {
                    Some(n) => n,
                    None => {
                        let candidates: Vec<Identifier> = self.replicas.keys().copied().collect();
                        if candidates.len() <= 1 {
                            return;
                        }
                        candidates[self.world.rng.gen_range(0..candidates.len())]
                    }
                };
                if self.replicas.remove(&node).is_some() {
                    self.world.net.remove(&node);
                    self.world.invalidate();
                    self.world.record(TraceEvent::Leave { node });
                }
            }
        }
    }

    fn finish(&mut self, reason: &str) {
        let mut pending = Vec::new();
        for (label, tx, _) in &self.injected {
            let id = tx.id();
            let done = self.replicas.values().any(|r| {
                r.instances()
                    .iter()
                    .any(|i| i.tx == id && (i.committed.is_some() || i.abandoned))
            });
            if !done {
                pending.push(label.clone());
            }
        }
        self.world.record(TraceEvent::End {
            reason: reason.into(),
            pending,
        });
        self.end_reason = Some(reason.to_string());
    }

    /// Runs until the horizon, quiescence or the event limit.
    pub fn run(&mut self) -> SimReport {
        while self.step() {}
        self.report()
    }

    pub fn end_reason(&self) -> Option<&str> {
        self.end_reason.as_deref()
    }

    pub fn outcomes(&self) -> Vec<TxOutcome> {
        let mut first_commit: HashMap<Digest, (Time, usize)> = HashMap::new();
        let mut max_view: HashMap<Digest, u64> = HashMap::new();
        for rec in &self.world.trace {
            match &rec.event {
                TraceEvent::Commit { node, tx, .. } if self.is_honest(node) => {
                    let e = first_commit.entry(*tx).or_insert((rec.t, 0));
                    e.1 += 1;
                }
                TraceEvent::ViewChange { node, tx, view } if self.is_honest(node) => {
                    let v = max_view.entry(*tx).or_insert(0);
                    *v = (*v).max(*view);
                }
                _ => {}
            }
        }
        self.injected
            .iter()
            .map(|(label, tx, at)| {
                let id = tx.id();
                let c = first_commit.get(&id);
                TxOutcome {
                    label: label.clone(),
                    tx: id,
                    sender: tx.sender,
                    receiver: tx.receiver,
                    injected_at: *at,
                    committed_at: c.map(|c| c.0),
                    latency: c.map(|c| c.0 - at),
                    honest_commits: c.map_or(0, |c| c.1),
                    max_view: max_view.get(&id).copied().unwrap_or(0),
                }
            })
            .collect()
    }

    pub fn report(&self) -> SimReport {
        let transactions = self.outcomes();
        let checks = evaluate(self, &transactions);
        SimReport {
            name: self.scenario.name.clone(),
            seed: self.scenario.seed,
            end_reason: self.end_reason.clone().unwrap_or_else(|| "running".into()),
            end_time: self.world.now,
            events: self.events,
            transactions,
            checks,
        }
    }
}
