use std::collections::VecDeque;

use crate::ident::{distance, Identifier};

/// Classic Kademlia bucket capacity.
pub const DEFAULT_K_BUCKET: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    /// New contact placed in its bucket.
    Inserted,
    /// Already known; moved to the most-recently-seen end.
    Refreshed,
    /// Bucket was full and its least-recently-seen entry failed the probe.
    Replaced { evicted: Identifier },
    /// Bucket full of live contacts; the newcomer is dropped.
    BucketFull,
    /// The owner's own identifier is never stored.
    OwnerIgnored,
}

/// Per-node contact table: bucket `i` holds contacts whose distance to the
/// owner has its highest set bit at position `i`. Within a bucket the front
/// is least recently seen.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    owner: Identifier,
    k_bucket: usize,
    buckets: Vec<VecDeque<Identifier>>,
}

impl RoutingTable {
    pub fn new(owner: Identifier, k_bucket: usize) -> Self {
        let bits = owner.bits().max(1) as usize;
        RoutingTable {
            owner,
            k_bucket: k_bucket.max(1),
            buckets: vec![VecDeque::new(); bits],
        }
    }

    pub fn owner(&self) -> Identifier {
        self.owner
    }

    pub fn k_bucket(&self) -> usize {
        self.k_bucket
    }

    pub fn bucket_index(&self, node: &Identifier) -> Option<usize> {
        distance(&self.owner, node)
            .highest_bit()
            .map(|b| b as usize)
    }

    pub fn bucket(&self, index: usize) -> &VecDeque<Identifier> {
        &self.buckets[index]
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    /// Notes that `node` was seen. On overflow the least-recently-seen entry
    /// is probed with `is_alive`; it is replaced only if the probe fails.
    pub fn update<F>(&mut self, node: Identifier, mut is_alive: F) -> UpdateOutcome
    where
        F: FnMut(&Identifier) -> bool,
    {
        let Some(index) = self.bucket_index(&node) else {
            return UpdateOutcome::OwnerIgnored;
        };
        if index >= self.buckets.len() {
            // Contact from a wider identifier space; grow rather than drop it.
            self.buckets.resize(index + 1, VecDeque::new());
        }
        let bucket = &mut self.buckets[index];
        if let Some(pos) = bucket.iter().position(|n| *n == node) {
            bucket.remove(pos);
            bucket.push_back(node);
            return UpdateOutcome::Refreshed;
        }
        if bucket.len() < self.k_bucket {
            bucket.push_back(node);
            return UpdateOutcome::Inserted;
        }
        let oldest = bucket[0];
        if is_alive(&oldest) {
            bucket.pop_front();
            bucket.push_back(oldest);
            UpdateOutcome::BucketFull
        } else {
            bucket.pop_front();
            bucket.push_back(node);
            UpdateOutcome::Replaced { evicted: oldest }
        }
    }

    /// `update` for callers that know every contact is live.
    pub fn insert_live(&mut self, node: Identifier) -> UpdateOutcome {
        self.update(node, |_| true)
    }

    pub fn remove(&mut self, node: &Identifier) -> bool {
        let Some(index) = self.bucket_index(node) else {
            return false;
        };
        let Some(bucket) = self.buckets.get_mut(index) else {
            return false;
        };
        match bucket.iter().position(|n| n == node) {
            Some(pos) => {
                bucket.remove(pos);
                true
            }
            None => false,
        }
    }

    pub fn contains(&self, node: &Identifier) -> bool {
        self.bucket_index(node)
            .and_then(|i| self.buckets.get(i))
            .is_some_and(|b| b.contains(node))
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.iter().all(VecDeque::is_empty)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Identifier> {
        self.buckets.iter().flat_map(|b| b.iter())
    }

    /// Up to `count` contacts closest to `target`, ascending by distance.
    pub fn local_closest(&self, target: &Identifier, count: usize) -> Vec<Identifier> {
        let mut all: Vec<_> = self.iter().map(|id| (distance(id, target), *id)).collect();
        if count == 0 || all.is_empty() {
            return Vec::new();
        }
        if all.len() > count {
            all.select_nth_unstable_by_key(count - 1, |(d, _)| *d);
            all.truncate(count);
        }
        all.sort_unstable_by_key(|(d, _)| *d);
        all.into_iter().map(|(_, id)| id).collect()
    }

    /// Checks the structural invariants; used by tests and debug assertions.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for (i, bucket) in self.buckets.iter().enumerate() {
            if bucket.len() > self.k_bucket {
                return Err(format!(
                    "bucket {i} holds {} > {}",
                    bucket.len(),
                    self.k_bucket
                ));
            }
            for node in bucket {
                if self.bucket_index(node) != Some(i) {
                    return Err(format!("{node} misplaced in bucket {i}"));
                }
                if !seen.insert(*node) {
                    return Err(format!("{node} appears twice"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::{sort_by_distance, IdSpace};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn insert_twice_only_refreshes() {
        let s = IdSpace::new(8).unwrap();
        let mut t = RoutingTable::new(s.id(0), 4);
        assert_eq!(t.insert_live(s.id(5)), UpdateOutcome::Inserted);
        assert_eq!(t.insert_live(s.id(6)), UpdateOutcome::Inserted);
        assert_eq!(t.insert_live(s.id(5)), UpdateOutcome::Refreshed);
        assert_eq!(t.len(), 2);
        // 5 and 6 share bucket 2; 5 is now most recent.
        assert_eq!(
            t.bucket(2).iter().copied().collect::<Vec<_>>(),
            vec![s.id(6), s.id(5)]
        );
    }

    #[test]
    fn owner_is_rejected() {
        let s = IdSpace::new(8).unwrap();
        let mut t = RoutingTable::new(s.id(9), 4);
        assert_eq!(t.insert_live(s.id(9)), UpdateOutcome::OwnerIgnored);
        assert!(t.is_empty());
    }

    #[test]
    fn full_bucket_of_live_nodes_keeps_size() {
        let s = IdSpace::new(8).unwrap();
        let mut t = RoutingTable::new(s.id(0), 3);
        // Bucket 7 covers 128..=255.
        for v in [128, 129, 130, 131, 132] {
            t.insert_live(s.id(v));
        }
        assert_eq!(t.bucket(7).len(), 3);
        assert!(t.contains(&s.id(128)) && !t.contains(&s.id(131)));
        t.check_invariants().unwrap();
    }

    #[test]
    fn dead_least_recent_is_evicted() {
        let s = IdSpace::new(8).unwrap();
        let mut t = RoutingTable::new(s.id(0), 2);
        t.insert_live(s.id(200));
        t.insert_live(s.id(201));
        let out = t.update(s.id(202), |n| *n != s.id(200));
        assert_eq!(out, UpdateOutcome::Replaced { evicted: s.id(200) });
        assert!(t.contains(&s.id(202)) && !t.contains(&s.id(200)));
    }

    #[test]
    fn empty_table_has_no_closest() {
        let s = IdSpace::new(8).unwrap();
        let t = RoutingTable::new(s.id(0), 20);
        assert!(t.local_closest(&s.id(3), 5).is_empty());
    }

    #[test]
    fn target_in_table_comes_first() {
        let s = IdSpace::new(8).unwrap();
        let mut t = RoutingTable::new(s.id(0), 20);
        for v in [3, 17, 99, 240] {
            t.insert_live(s.id(v));
        }
        assert_eq!(t.local_closest(&s.id(99), 2)[0], s.id(99));
    }

    #[test]
    fn local_closest_matches_brute_force() {
        let s = IdSpace::new(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..1000 {
            let owner = s.random(&mut rng);
            let mut t = RoutingTable::new(owner, 20);
            let mut all: Vec<Identifier> = (0..200).map(|_| s.random(&mut rng)).collect();
            all.sort();
            all.dedup();
            all.retain(|n| *n != owner);
            all.shuffle(&mut rng);
            for n in &all {
                t.insert_live(*n);
            }
            let target = s.random(&mut rng);
            let count = 1 + case % 25;
            let entries: Vec<_> = t.iter().copied().collect();
            let mut expect = sort_by_distance(&entries, &target);
            expect.truncate(count);
            assert_eq!(t.local_closest(&target, count), expect);
            t.check_invariants().unwrap();
        }
    }
}
