use std::collections::HashSet;

use rand::Rng;

use crate::ident::{IdSpace, Identifier};

/// Node identifiers of at most 64 bits kept sorted, answering "the `r`
/// closest to a target" as a handful of contiguous index ranges.
#[derive(Debug, Clone)]
pub struct SortedIds {
    keys: Vec<u64>,
    bits: u16,
}

impl SortedIds {
    pub fn new(mut keys: Vec<u64>, bits: u16) -> Self {
        assert!((1..=64).contains(&bits), "fast path supports up to 64 bits");
        keys.sort_unstable();
        keys.dedup();
        SortedIds { keys, bits }
    }

    pub fn keys(&self) -> &[u64] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Index ranges `[lo, hi)` that together hold the `r` keys closest to
    /// `target` in XOR distance. Ranges are appended to `out`.
    pub fn closest_ranges(&self, target: u64, r: usize, out: &mut Vec<(u32, u32)>) {
        let mut need = r.min(self.keys.len());
        let (mut lo, mut hi) = (0usize, self.keys.len());
        let mut bit = self.bits;
        while need > 0 {
            if hi - lo <= need {
                out.push((lo as u32, hi as u32));
                return;
            }
            // hi - lo > need >= 1, so the range holds two distinct keys and
            // they differ at some bit below `bit`.
            bit -= 1;
            let mask = 1u64 << bit;
            let split = lo + self.keys[lo..hi].partition_point(|k| k & mask == 0);
            let (same, other) = if target & mask == 0 {
                ((lo, split), (split, hi))
            } else {
                ((split, hi), (lo, split))
            };
            let same_len = same.1 - same.0;
            if same_len >= need {
                (lo, hi) = same;
            } else {
                if same_len > 0 {
                    out.push((same.0 as u32, same.1 as u32));
                }
                need -= same_len;
                (lo, hi) = other;
            }
        }
    }

    /// The `r` closest keys' indices, ascending by index.
    pub fn closest_indices(&self, target: u64, r: usize) -> Vec<u32> {
        let mut ranges = Vec::new();
        self.closest_ranges(target, r, &mut ranges);
        let mut out: Vec<u32> = ranges.iter().flat_map(|(a, b)| *a..*b).collect();
        out.sort_unstable();
        out
    }
}

/// `m` shards over `n` nodes, each stored as index ranges into the sorted
/// node list.
#[derive(Debug, Clone)]
pub struct ShardSet {
    ids: SortedIds,
    r: usize,
    ranges: Vec<(u32, u32)>,
    offsets: Vec<u32>,
    accounts: Vec<u64>,
}

impl ShardSet {
    /// Random network of `n` distinct node IDs and `m` random account IDs.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, bits: u16, n: usize, m: usize, r: usize) -> Self {
        let space = IdSpace::new(bits).expect("valid width");
        let nodes = space.random_distinct(rng, n, &mut HashSet::new());
        let keys: Vec<u64> = nodes.iter().map(Identifier::low_u64).collect();
        let accounts: Vec<u64> = (0..m).map(|_| space.random(rng).low_u64()).collect();
        ShardSet::from_keys(keys, accounts, bits, r)
    }

    pub fn from_keys(nodes: Vec<u64>, accounts: Vec<u64>, bits: u16, r: usize) -> Self {
        let ids = SortedIds::new(nodes, bits);
        let mut ranges = Vec::with_capacity(accounts.len() * 4);
        let mut offsets = Vec::with_capacity(accounts.len() + 1);
        offsets.push(0);
        for a in &accounts {
            ids.closest_ranges(*a, r, &mut ranges);
            offsets.push(ranges.len() as u32);
        }
        ShardSet {
            ids,
            r,
            ranges,
            offsets,
            accounts,
        }
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn shard_count(&self) -> usize {
        self.accounts.len()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn nodes(&self) -> &[u64] {
        self.ids.keys()
    }

    pub fn accounts(&self) -> &[u64] {
        &self.accounts
    }

    pub fn shard_ranges(&self, i: usize) -> &[(u32, u32)] {
        &self.ranges[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    /// Member indices of shard `i`, ascending.
    pub fn shard(&self, i: usize) -> Vec<u32> {
        let mut v: Vec<u32> = self
            .shard_ranges(i)
            .iter()
            .flat_map(|(a, b)| *a..*b)
            .collect();
        v.sort_unstable();
        v
    }

    /// Byzantine members of every shard from a prefix count over node
    /// indices (`prefix[i]` = Byzantine nodes among indices `< i`); stops at
    /// the first shard with at least `threshold`.
    pub fn any_reaches(&self, prefix: &[u32], threshold: u32) -> bool {
        let mut start = 0usize;
        for end in &self.offsets[1..] {
            let end = *end as usize;
            let mut hits = 0;
            for (a, b) in &self.ranges[start..end] {
                hits += prefix[*b as usize] - prefix[*a as usize];
            }
            if hits >= threshold {
                return true;
            }
            start = end;
        }
        false
    }

    /// Mean size of `shard(i) ∩ shard(j)` over all pairs `i < j`.
    pub fn mean_pairwise_overlap(&self) -> f64 {
        let m = self.shard_count();
        if m < 2 {
            return 0.0;
        }
        let n = self.node_count();
        let mut count = vec![0u64; n];
        for i in 0..m {
            for (a, b) in self.shard_ranges(i) {
                for c in &mut count[*a as usize..*b as usize] {
                    *c += 1;
                }
            }
        }
        // Each node in c shards contributes c(c-1)/2 overlapping pairs.
        let pairs: u64 = count.iter().map(|c| c * c.saturating_sub(1) / 2).sum();
        pairs as f64 / (m as f64 * (m as f64 - 1.0) / 2.0)
    }
}

/// Builds `m` shards over a fresh random network: one random account ID
/// per shard, each holding its `r` closest nodes.
pub fn build_shards<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    m: usize,
    r: usize,
    bits: u16,
) -> ShardSet {
    ShardSet::random(rng, bits, n, m, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing::oracle_closest;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn oracle(keys: &[u64], bits: u16, target: u64, r: usize) -> Vec<u32> {
        let space = IdSpace::new(bits).unwrap();
        let ids: Vec<Identifier> = keys.iter().map(|k| space.id(*k)).collect();
        let found = oracle_closest(&ids, &space.id(target), r);
        let mut idx: Vec<u32> = found
            .iter()
            .map(|f| keys.iter().position(|k| *k == f.low_u64()).unwrap() as u32)
            .collect();
        idx.sort_unstable();
        idx
    }

    proptest! {
        #[test]
        fn ranges_match_oracle(
            raw in prop::collection::vec(any::<u64>(), 1..200),
            target in any::<u64>(),
            r in 1usize..40,
            bits in prop::sample::select(vec![8u16, 16, 32, 64]),
        ) {
            let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
            let ids = SortedIds::new(raw.iter().map(|v| v & mask).collect(), bits);
            let t = target & mask;
            prop_assert_eq!(ids.closest_indices(t, r), oracle(ids.keys(), bits, t, r));
        }
    }

    #[test]
    fn r_equal_n_covers_everyone() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = build_shards(&mut rng, 30, 10, 30, 32);
        for i in 0..10 {
            assert_eq!(s.shard(i), (0..30).collect::<Vec<u32>>());
        }
    }

    #[test]
    fn single_shard_is_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = build_shards(&mut rng, 500, 1, 17, 32);
        assert_eq!(s.shard(0), oracle(s.nodes(), 32, s.accounts()[0], 17));
    }

    #[test]
    fn shards_overlap_at_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = build_shards(&mut rng, 2000, 4000, 61, 32);
        assert!(s.mean_pairwise_overlap() > 0.0);
    }

    #[test]
    fn prefix_counting_matches_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = build_shards(&mut rng, 300, 50, 21, 32);
        let byz: Vec<bool> = (0..300)
            .map(|_| rand::Rng::gen_bool(&mut rng, 0.3))
            .collect();
        let mut prefix = vec![0u32; 301];
        for i in 0..300 {
            prefix[i + 1] = prefix[i] + byz[i] as u32;
        }
        for t in 1..=21u32 {
            let by_sets = (0..50)
                .any(|i| s.shard(i).iter().filter(|n| byz[**n as usize]).count() as u32 >= t);
            assert_eq!(s.any_reaches(&prefix, t), by_sets);
        }
    }
}
