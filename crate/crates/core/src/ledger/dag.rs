use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::block::Block;
use super::chain::AccountChain;
use super::LedgerError;
use crate::auth::Digest;
use crate::ident::Identifier;

/// Each committed transaction once, with arcs to the blocks it extends.
#[derive(Debug, Clone, Default)]
pub struct TransactionDag {
    vertices: BTreeMap<Digest, Block>,
    parents: BTreeMap<Digest, BTreeSet<Digest>>,
}

/// Merges chains into one dependency graph. Parents outside the given
/// chains are left out, so partial views work too.
pub fn build_dag<'a>(
    chains: impl IntoIterator<Item = &'a AccountChain>,
) -> Result<TransactionDag, LedgerError> {
    let mut vertices: BTreeMap<Digest, Block> = BTreeMap::new();
    let mut by_nonce: BTreeMap<(Identifier, u64), Digest> = BTreeMap::new();
    for chain in chains {
        for block in chain.blocks() {
            if !block.hash_valid() {
                return Err(LedgerError::BadHash);
            }
            let key = (block.tx.sender, block.tx.nonce);
            match by_nonce.get(&key) {
                Some(h) if *h != block.hash => {
                    return Err(LedgerError::Inconsistent {
                        sender: key.0,
                        nonce: key.1,
                    })
                }
                _ => {
                    by_nonce.insert(key, block.hash);
                }
            }
            vertices.entry(block.hash).or_insert_with(|| block.clone());
        }
    }
    let mut parents = BTreeMap::new();
    for (hash, block) in &vertices {
        let set: BTreeSet<Digest> = [block.sender_parent, block.receiver_parent]
            .into_iter()
            .filter(|p| !p.is_genesis() && vertices.contains_key(&p.hash))
            .map(|p| p.hash)
            .collect();
        parents.insert(*hash, set);
    }
    Ok(TransactionDag { vertices, parents })
}

impl TransactionDag {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn block(&self, hash: &Digest) -> Option<&Block> {
        self.vertices.get(hash)
    }

    pub fn parents(&self, hash: &Digest) -> impl Iterator<Item = &Digest> {
        self.parents.get(hash).into_iter().flatten()
    }

    /// All arcs as (child, parent).
    pub fn edges(&self) -> Vec<(Digest, Digest)> {
        self.parents
            .iter()
            .flat_map(|(c, ps)| ps.iter().map(move |p| (*c, *p)))
            .collect()
    }

    /// Parents before children; ties broken by hash. Fails on a cycle.
    pub fn topological_order(&self) -> Result<Vec<Digest>, LedgerError> {
        let mut pending: BTreeMap<Digest, usize> =
            self.parents.iter().map(|(h, ps)| (*h, ps.len())).collect();
        let mut children: BTreeMap<Digest, Vec<Digest>> = BTreeMap::new();
        for (c, p) in self.edges() {
            children.entry(p).or_default().push(c);
        }
        let mut ready: BTreeSet<Digest> = pending
            .iter()
            .filter(|(_, n)| **n == 0)
            .map(|(h, _)| *h)
            .collect();
        let mut out = Vec::with_capacity(self.vertices.len());
        while let Some(h) = ready.pop_first() {
            out.push(h);
            for c in children.get(&h).into_iter().flatten() {
                let n = pending.get_mut(c).expect("child is a vertex");
                *n -= 1;
                if *n == 0 {
                    ready.insert(*c);
                }
            }
        }
        if out.len() == self.vertices.len() {
            Ok(out)
        } else {
            Err(LedgerError::Cycle)
        }
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_ok()
    }

    /// True when `later` transitively depends on `earlier`.
    pub fn happens_before(&self, earlier: &Digest, later: &Digest) -> bool {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<Digest> = self.parents(later).copied().collect();
        while let Some(h) = queue.pop_front() {
            if h == *earlier {
                return true;
            }
            if seen.insert(h) {
                queue.extend(self.parents(&h).copied());
            }
        }
        false
    }

    pub fn concurrent(&self, a: &Digest, b: &Digest) -> bool {
        a != b && !self.happens_before(a, b) && !self.happens_before(b, a)
    }

    /// The account's blocks in topological order.
    pub fn project(&self, account: &Identifier) -> Result<Vec<Digest>, LedgerError> {
        Ok(self
            .topological_order()?
            .into_iter()
            .filter(|h| self.vertices[h].involves(account))
            .collect())
    }
}
