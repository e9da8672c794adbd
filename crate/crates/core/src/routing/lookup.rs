use std::collections::BTreeMap;

use thiserror::Error;

use super::table::RoutingTable;
use crate::ident::{distance, Distance, Identifier};

/// Classic Kademlia lookup parallelism.
pub const DEFAULT_ALPHA: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LookupError {
    #[error("request to {0} timed out")]
    Timeout(Identifier),
    #[error("no contacts to start the lookup from")]
    NoContacts,
}

/// Anything that can answer a find-node request on behalf of a peer.
pub trait FindNodeEndpoint {
    /// Asks `to` for the `count` nodes it knows closest to `target`.
    fn find_node(
        &mut self,
        to: &Identifier,
        target: &Identifier,
        count: usize,
    ) -> Result<Vec<Identifier>, LookupError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CandidateState {
    Fresh,
    InFlight,
    Responded,
    Failed,
}

/// What one finished round changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundOutcome {
    /// A node not previously among the best `r` entered that set.
    pub improved: bool,
    /// Every request issued in the round failed.
    pub all_failed: bool,
}

/// Distance-ordered candidate pool that an iterative lookup refines round
/// by round. The pool is transport-agnostic: callers issue the queries that
/// [`LookupPool::next_round`] hands out and report replies back.
#[derive(Debug, Clone)]
pub struct LookupPool {
    target: Identifier,
    result_size: usize,
    alpha: usize,
    candidates: BTreeMap<Distance, (Identifier, CandidateState)>,
    rounds: u32,
    sweep: bool,
    round_issued: usize,
    round_failed: usize,
    best_at_round_start: Vec<Identifier>,
}

impl LookupPool {
    pub fn new(
        target: Identifier,
        result_size: usize,
        alpha: usize,
        seeds: impl IntoIterator<Item = Identifier>,
    ) -> Self {
        let mut pool = LookupPool {
            target,
            result_size: result_size.max(1),
            alpha: alpha.max(1),
            candidates: BTreeMap::new(),
            rounds: 0,
            sweep: false,
            round_issued: 0,
            round_failed: 0,
            best_at_round_start: Vec::new(),
        };
        pool.add_candidates(seeds);
        pool
    }

    pub fn target(&self) -> Identifier {
        self.target
    }

    pub fn rounds(&self) -> u32 {
        self.rounds
    }

    /// Registers a node that needs no query (typically the initiator itself).
    pub fn add_known(&mut self, id: Identifier) {
        self.candidates
            .insert(distance(&id, &self.target), (id, CandidateState::Responded));
    }

    fn add_candidates(&mut self, ids: impl IntoIterator<Item = Identifier>) {
        for id in ids {
            self.candidates
                .entry(distance(&id, &self.target))
                .or_insert((id, CandidateState::Fresh));
        }
    }

    fn best_live(&self) -> impl Iterator<Item = (&Distance, &(Identifier, CandidateState))> {
        self.candidates
            .iter()
            .filter(|(_, (_, s))| *s != CandidateState::Failed)
            .take(self.result_size)
    }

    fn best_ids(&self) -> Vec<Identifier> {
        self.best_live().map(|(_, (id, _))| *id).collect()
    }

    /// Distance of the current `r`-th best live candidate.
    pub fn kth_best_distance(&self) -> Option<Distance> {
        let best: Vec<_> = self.best_live().collect();
        if best.len() < self.result_size {
            None
        } else {
            best.last().map(|(d, _)| **d)
        }
    }

    fn in_flight(&self) -> usize {
        self.candidates
            .values()
            .filter(|(_, s)| *s == CandidateState::InFlight)
            .count()
    }

    /// True once every one of the best `r` live candidates has answered.
    pub fn is_done(&self) -> bool {
        self.in_flight() == 0
            && self
                .best_live()
                .all(|(_, (_, s))| *s == CandidateState::Responded)
    }

    /// Starts a round and returns the nodes to query: the `alpha` closest
    /// unqueried candidates, or every unqueried one among the best `r` when
    /// the previous round brought nothing closer. Empty when done.
    pub fn next_round(&mut self) -> Vec<Identifier> {
        if self.is_done() {
            return Vec::new();
        }
        let limit = if self.sweep {
            self.result_size
        } else {
            self.alpha
        };
        let picks: Vec<Distance> = self
            .best_live()
            .filter(|(_, (_, s))| *s == CandidateState::Fresh)
            .map(|(d, _)| *d)
            .take(limit)
            .collect();
        let mut out = Vec::with_capacity(picks.len());
        for d in picks {
            if let Some(entry) = self.candidates.get_mut(&d) {
                entry.1 = CandidateState::InFlight;
                out.push(entry.0);
            }
        }
        if !out.is_empty() {
            self.rounds += 1;
            self.round_issued = out.len();
            self.round_failed = 0;
            self.best_at_round_start = self.best_ids();
        }
        out
    }

    fn set_state(&mut self, id: &Identifier, state: CandidateState) -> bool {
        match self.candidates.get_mut(&distance(id, &self.target)) {
            Some(entry) if entry.1 == CandidateState::InFlight => {
                entry.1 = state;
                true
            }
            _ => false,
        }
    }

    pub fn on_response(&mut self, from: &Identifier, nodes: &[Identifier]) {
        if self.set_state(from, CandidateState::Responded) {
            self.add_candidates(nodes.iter().copied());
        }
    }

    pub fn on_failure(&mut self, from: &Identifier) {
        if self.set_state(from, CandidateState::Failed) {
            self.round_failed += 1;
        }
    }

    /// Closes the current round once all its requests are settled.
    pub fn finish_round(&mut self) -> RoundOutcome {
        let best = self.best_ids();
        let improved = best.iter().any(|id| !self.best_at_round_start.contains(id));
        self.sweep = !improved;
        RoundOutcome {
            improved,
            all_failed: self.round_issued > 0 && self.round_failed == self.round_issued,
        }
    }

    /// The best `r` live candidates, ascending by distance.
    pub fn result(&self) -> Vec<Identifier> {
        self.best_ids()
    }
}

/// Result of a complete iterative lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupOutcome {
    pub nodes: Vec<Identifier>,
    pub rounds: u32,
    /// Set when a round ended with every request timed out.
    pub partial: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LookupOptions {
    pub alpha: usize,
    /// Count the table owner as a candidate (needed for "am I in the group").
    pub include_owner: bool,
}

impl Default for LookupOptions {
    fn default() -> Self {
        LookupOptions {
            alpha: DEFAULT_ALPHA,
            include_owner: false,
        }
    }
}

/// Iterative find-node lookup for the `r` nodes closest to `target`,
/// starting from `start_table`.
pub fn iterative_find_nodes<E: FindNodeEndpoint + ?Sized>(
    endpoint: &mut E,
    start_table: &RoutingTable,
    target: &Identifier,
    r: usize,
    options: LookupOptions,
) -> Result<LookupOutcome, LookupError> {
    let seeds = start_table.local_closest(target, r.max(options.alpha));
    if seeds.is_empty() && !options.include_owner {
        return Err(LookupError::NoContacts);
    }
    let mut pool = LookupPool::new(*target, r, options.alpha, seeds);
    if options.include_owner {
        pool.add_known(start_table.owner());
    }
    loop {
        let queries = pool.next_round();
        if queries.is_empty() {
            break;
        }
        for peer in &queries {
            match endpoint.find_node(peer, target, r) {
                Ok(nodes) => pool.on_response(peer, &nodes),
                Err(_) => pool.on_failure(peer),
            }
        }
        if pool.finish_round().all_failed {
            return Ok(LookupOutcome {
                nodes: pool.result(),
                rounds: pool.rounds(),
                partial: true,
            });
        }
    }
    Ok(LookupOutcome {
        nodes: pool.result(),
        rounds: pool.rounds(),
        partial: false,
    })
}

/// Global-knowledge answer: the `r` closest of `all_nodes` by full sort.
pub fn oracle_closest(all_nodes: &[Identifier], target: &Identifier, r: usize) -> Vec<Identifier> {
    let mut sorted = crate::ident::sort_by_distance(all_nodes, target);
    sorted.truncate(r);
    sorted
}
