use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use super::lookup::{
    iterative_find_nodes, FindNodeEndpoint, LookupError, LookupOptions, LookupOutcome,
};
use super::table::RoutingTable;
use crate::ident::Identifier;

/// A set of routing tables that can answer each other's find-node requests
/// directly. Nodes outside `live` time out.
#[derive(Debug, Clone, Default)]
pub struct TableNetwork {
    tables: BTreeMap<Identifier, RoutingTable>,
    live: BTreeSet<Identifier>,
    alpha: usize,
}

/// Replies carry at least `k_bucket` contacts, as in Kademlia's FIND_NODE.
struct Endpoint<'a> {
    net: &'a mut TableNetwork,
    requester: Identifier,
    learn: bool,
}

impl FindNodeEndpoint for Endpoint<'_> {
    fn find_node(
        &mut self,
        to: &Identifier,
        target: &Identifier,
        count: usize,
    ) -> Result<Vec<Identifier>, LookupError> {
        if !self.net.live.contains(to) {
            if self.learn {
                if let Some(own) = self.net.tables.get_mut(&self.requester) {
                    own.remove(to);
                }
            }
            return Err(LookupError::Timeout(*to));
        }
        let live = &self.net.live;
        let Some(table) = self.net.tables.get_mut(to) else {
            return Err(LookupError::Timeout(*to));
        };
        if self.learn {
            table.update(self.requester, |n| live.contains(n));
        }
        let nodes = table.local_closest(target, count.max(table.k_bucket()));
        if self.learn {
            if let Some(own) = self.net.tables.get_mut(&self.requester) {
                own.update(*to, |n| live.contains(n));
            }
        }
        Ok(nodes)
    }
}

impl TableNetwork {
    pub fn new(alpha: usize) -> Self {
        TableNetwork {
            tables: BTreeMap::new(),
            live: BTreeSet::new(),
            alpha,
        }
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn table(&self, id: &Identifier) -> Option<&RoutingTable> {
        self.tables.get(id)
    }

    pub fn table_mut(&mut self, id: &Identifier) -> Option<&mut RoutingTable> {
        self.tables.get_mut(id)
    }

    pub fn is_live(&self, id: &Identifier) -> bool {
        self.live.contains(id)
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = &Identifier> {
        self.live.iter()
    }

    pub fn insert_table(&mut self, table: RoutingTable) {
        let owner = table.owner();
        self.live.insert(owner);
        self.tables.insert(owner, table);
    }

    /// Marks a node as gone; its table is dropped.
    pub fn remove(&mut self, id: &Identifier) {
        self.live.remove(id);
        self.tables.remove(id);
    }

    /// Notes that `node` was heard from by `owner`.
    pub fn observe(&mut self, owner: &Identifier, node: Identifier) {
        let live = &self.live;
        if let Some(t) = self.tables.get_mut(owner) {
            t.update(node, |n| live.contains(n));
        }
    }

    /// Runs an iterative lookup from `from`'s table without changing any table.
    pub fn lookup(
        &mut self,
        from: &Identifier,
        target: &Identifier,
        r: usize,
        include_owner: bool,
    ) -> Result<LookupOutcome, LookupError> {
        self.run_lookup(from, target, r, include_owner, false)
    }

    fn run_lookup(
        &mut self,
        from: &Identifier,
        target: &Identifier,
        r: usize,
        include_owner: bool,
        learn: bool,
    ) -> Result<LookupOutcome, LookupError> {
        let table = self
            .tables
            .get(from)
            .cloned()
            .ok_or(LookupError::NoContacts)?;
        let options = LookupOptions {
            alpha: self.alpha,
            include_owner,
        };
        let mut endpoint = Endpoint {
            net: self,
            requester: *from,
            learn,
        };
        iterative_find_nodes(&mut endpoint, &table, target, r, options)
    }

    /// Joins `node` through `bootstrap`: seed the table with the bootstrap
    /// contact, then look up the node's own identifier. Every contacted peer
    /// learns the newcomer.
    pub fn join(&mut self, node: Identifier, bootstrap: Option<Identifier>, k_bucket: usize) {
        let mut table = RoutingTable::new(node, k_bucket);
        if let Some(b) = bootstrap.filter(|b| *b != node && self.live.contains(b)) {
            table.insert_live(b);
        }
        let has_contacts = !table.is_empty();
        self.insert_table(table);
        if has_contacts {
            self.refresh_node(&node, k_bucket);
        }
    }

    /// Self-lookup followed by a lookup into every bucket farther than the
    /// nearest known neighbour, so distant buckets get populated.
    pub fn refresh_node(&mut self, node: &Identifier, k_bucket: usize) {
        let _ = self.run_lookup(node, node, k_bucket, false, true);
        let Some(table) = self.tables.get(node) else {
            return;
        };
        let Some(nearest) = (0..table.bucket_count()).find(|i| !table.bucket(*i).is_empty()) else {
            return;
        };
        for i in nearest + 1..table.bucket_count() {
            let target = node.with_bit_flipped(i as u16);
            let _ = self.run_lookup(node, &target, k_bucket, false, true);
        }
    }

    /// One refresh pass over every live node.
    pub fn refresh(&mut self, k_bucket: usize) {
        let nodes: Vec<_> = self.live.iter().copied().collect();
        for n in nodes {
            self.refresh_node(&n, k_bucket);
        }
    }

    /// Bootstraps `nodes` in order through the first one, followed by `passes`
    /// refresh passes.
    pub fn bootstrap(nodes: &[Identifier], k_bucket: usize, alpha: usize, passes: usize) -> Self {
        let mut net = TableNetwork::new(alpha);
        let first = nodes.first().copied();
        for n in nodes {
            net.join(*n, first, k_bucket);
        }
        for _ in 0..passes {
            net.refresh(k_bucket);
        }
        net
    }

    /// Every table learns every other node, inserted in random order so full
    /// buckets keep a uniform sample of their subtree.
    pub fn fully_populated<R: Rng + ?Sized>(
        nodes: &[Identifier],
        k_bucket: usize,
        alpha: usize,
        rng: &mut R,
    ) -> Self {
        let mut net = TableNetwork::new(alpha);
        let mut order = nodes.to_vec();
        for n in nodes {
            let mut table = RoutingTable::new(*n, k_bucket);
            order.shuffle(rng);
            for other in &order {
                table.insert_live(*other);
            }
            net.insert_table(table);
        }
        net
    }
}
