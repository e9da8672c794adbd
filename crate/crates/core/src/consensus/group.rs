use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::auth::{Authenticator, Canon, Digest, Signature};
use crate::ident::Identifier;
use crate::routing::oracle_closest;

/// Per-group quorum size.
pub fn quorum(r: usize) -> usize {
    r / 2 + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuorumRule {
    /// `quorum(r)` voters from each r-group; overlap voters count for both.
    #[default]
    PerGroup,
    /// `|V|/2 + 1` voters from the union, ignoring group membership.
    /// Unsafe; kept to show why per-group counting matters.
    NaiveUnion,
}

/// The sender-side and receiver-side r-groups of one transaction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ValidatorGroup {
    pub r_s: Vec<Identifier>,
    pub r_r: Vec<Identifier>,
    pub union_v: Vec<Identifier>,
}

impl ValidatorGroup {
    /// Builds the group from the two distance-ordered r-groups. The union
    /// lists `r_s` first, then the receiver-only members.
    pub fn from_groups(r_s: Vec<Identifier>, r_r: Vec<Identifier>) -> Self {
        let mut union_v = r_s.clone();
        for n in &r_r {
            if !union_v.contains(n) {
                union_v.push(*n);
            }
        }
        ValidatorGroup { r_s, r_r, union_v }
    }

    /// Derives the group with any "r closest to" capability; `closest`
    /// must return distance-ordered results.
    pub fn derive<E>(
        sender: &Identifier,
        receiver: &Identifier,
        r: usize,
        mut closest: impl FnMut(&Identifier, usize) -> Result<Vec<Identifier>, E>,
    ) -> Result<Self, E> {
        let r_s = closest(sender, r)?;
        let r_r = closest(receiver, r)?;
        Ok(ValidatorGroup::from_groups(r_s, r_r))
    }

    /// Recovers the r-groups from a block's validator list: the r closest
    /// members of V to each account.
    pub fn from_union(
        validators: &[Identifier],
        sender: &Identifier,
        receiver: &Identifier,
        r: usize,
    ) -> Self {
        ValidatorGroup::from_groups(
            oracle_closest(validators, sender, r),
            oracle_closest(validators, receiver, r),
        )
    }

    pub fn r(&self) -> usize {
        self.r_s.len().max(self.r_r.len())
    }

    pub fn leader_s(&self) -> Option<Identifier> {
        self.r_s.first().copied()
    }

    pub fn leader_r(&self) -> Option<Identifier> {
        self.r_r.first().copied()
    }

    /// Sender-side leader for `view`: views rotate through `r_s` in
    /// distance order.
    pub fn leader_for_view(&self, view: u64) -> Identifier {
        self.r_s[(view % self.r_s.len() as u64) as usize]
    }

    pub fn contains(&self, node: &Identifier) -> bool {
        self.union_v.contains(node)
    }

    pub fn in_sender_group(&self, node: &Identifier) -> bool {
        self.r_s.contains(node)
    }

    pub fn in_receiver_group(&self, node: &Identifier) -> bool {
        self.r_r.contains(node)
    }

    /// Whether `voters` form a quorum under `rule`. Non-members are ignored.
    pub fn has_quorum(&self, voters: &BTreeSet<Identifier>, rule: QuorumRule) -> bool {
        count_votes(voters, self, rule).reached
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoteCount {
    pub from_sender_group: usize,
    pub from_receiver_group: usize,
    pub from_union: usize,
    pub reached: bool,
}

/// Tallies deduplicated voters against a group.
pub fn count_votes(
    voters: &BTreeSet<Identifier>,
    group: &ValidatorGroup,
    rule: QuorumRule,
) -> VoteCount {
    let s = voters.iter().filter(|v| group.r_s.contains(v)).count();
    let rr = voters.iter().filter(|v| group.r_r.contains(v)).count();
    let u = voters.iter().filter(|v| group.union_v.contains(v)).count();
    let reached = match rule {
        QuorumRule::PerGroup => s >= quorum(group.r_s.len()) && rr >= quorum(group.r_r.len()),
        QuorumRule::NaiveUnion => u > group.union_v.len() / 2,
    };
    VoteCount {
        from_sender_group: s,
        from_receiver_group: rr,
        from_union: u,
        reached,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoteKind {
    Vote,
    Commit,
    Blame,
}

/// Message a validator signs for a vote, commit or blame.
pub fn vote_digest(kind: VoteKind, tx_id: &Digest, view: u64, block: &Digest) -> Digest {
    let tag = match kind {
        VoteKind::Vote => "vote",
        VoteKind::Commit => "commit",
        VoteKind::Blame => "blame",
    };
    Canon::new(tag)
        .digest(tx_id)
        .u64(view)
        .digest(block)
        .finish()
}

/// Signed votes from a quorum for one block in one view.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuorumCertificate {
    pub tx_id: Digest,
    pub block_hash: Digest,
    pub view: u64,
    pub votes: Vec<Signature>,
}

impl QuorumCertificate {
    pub fn signers(&self) -> BTreeSet<Identifier> {
        self.votes.iter().map(|s| s.signer).collect()
    }

    /// Every signature checks out and the signers form a quorum.
    pub fn verify(
        &self,
        group: &ValidatorGroup,
        rule: QuorumRule,
        kind: VoteKind,
        auth: &dyn Authenticator,
    ) -> bool {
        let digest = vote_digest(kind, &self.tx_id, self.view, &self.block_hash);
        self.votes.iter().all(|s| auth.verify(s, &digest))
            && group.has_quorum(&self.signers(), rule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::IdSpace;

    fn set(ids: &[Identifier]) -> BTreeSet<Identifier> {
        ids.iter().copied().collect()
    }

    #[test]
    fn quorum_sizes() {
        assert_eq!(quorum(4), 3);
        assert_eq!(quorum(1), 1);
        assert_eq!(quorum(5), 3);
        assert_eq!(quorum(3), 2);
    }

    #[test]
    fn exact_population_gives_total_overlap() {
        let s = IdSpace::new(8).unwrap();
        let nodes: Vec<_> = [3, 40, 77, 200].iter().map(|v| s.id(*v)).collect();
        let g = ValidatorGroup::derive(&s.id(1), &s.id(250), 4, |a, r| {
            Ok::<_, ()>(oracle_closest(&nodes, a, r))
        })
        .unwrap();
        assert_eq!(g.union_v.len(), 4);
        assert_eq!(set(&g.r_s), set(&nodes));
        assert_eq!(set(&g.r_r), set(&nodes));
    }

    #[test]
    fn separated_prefixes_give_disjoint_groups() {
        let s = IdSpace::new(8).unwrap();
        // Three nodes under prefix 000, three under 111.
        let nodes: Vec<_> = [1, 2, 3, 0xe1, 0xe2, 0xe3]
            .iter()
            .map(|v| s.id(*v))
            .collect();
        let g = ValidatorGroup::derive(&s.id(0), &s.id(0xe0), 3, |a, r| {
            Ok::<_, ()>(oracle_closest(&nodes, a, r))
        })
        .unwrap();
        assert_eq!(g.union_v.len(), 6);
        assert_eq!(g.leader_s(), Some(s.id(1)));
        assert_eq!(g.leader_r(), Some(s.id(0xe1)));
    }

    #[test]
    fn single_member_groups_reach_quorum() {
        let s = IdSpace::new(8).unwrap();
        let g = ValidatorGroup::from_groups(vec![s.id(1)], vec![s.id(2)]);
        assert!(g.has_quorum(&set(&[s.id(1), s.id(2)]), QuorumRule::PerGroup));
        assert!(!g.has_quorum(&set(&[s.id(1)]), QuorumRule::PerGroup));
    }

    #[test]
    fn lopsided_votes_fail_per_group_but_pass_naive() {
        let s = IdSpace::new(8).unwrap();
        let r_s: Vec<_> = (1..=5).map(|v| s.id(v)).collect();
        let r_r: Vec<_> = (0xf1..=0xf5).map(|v| s.id(v)).collect();
        let g = ValidatorGroup::from_groups(r_s.clone(), r_r.clone());
        let voters = set(&[&r_s[..], &r_r[..2]].concat());
        let per = count_votes(&voters, &g, QuorumRule::PerGroup);
        assert_eq!((per.from_sender_group, per.from_receiver_group), (5, 2));
        assert!(!per.reached);
        assert!(count_votes(&voters, &g, QuorumRule::NaiveUnion).reached);
    }

    #[test]
    fn overlap_voter_counts_for_both_groups() {
        let s = IdSpace::new(8).unwrap();
        let g = ValidatorGroup::from_groups(
            vec![s.id(1), s.id(2), s.id(3)],
            vec![s.id(3), s.id(4), s.id(5)],
        );
        assert_eq!(g.union_v.len(), 5);
        let c = count_votes(&set(&[s.id(2), s.id(3), s.id(4)]), &g, QuorumRule::PerGroup);
        assert_eq!((c.from_sender_group, c.from_receiver_group), (2, 2));
        assert!(c.reached);
    }

    #[test]
    fn non_members_are_ignored() {
        let s = IdSpace::new(8).unwrap();
        let g = ValidatorGroup::from_groups(vec![s.id(1)], vec![s.id(2)]);
        assert!(!g.has_quorum(&set(&[s.id(1), s.id(9)]), QuorumRule::PerGroup));
    }

    #[test]
    fn union_recovers_groups() {
        let s = IdSpace::new(8).unwrap();
        let nodes: Vec<_> = [1, 2, 3, 0x81, 0x82, 0x83, 0x40]
            .iter()
            .map(|v| s.id(*v))
            .collect();
        let (a, b) = (s.id(0), s.id(0x80));
        let g = ValidatorGroup::derive(&a, &b, 3, |x, r| Ok::<_, ()>(oracle_closest(&nodes, x, r)))
            .unwrap();
        assert_eq!(ValidatorGroup::from_union(&g.union_v, &a, &b, 3), g);
    }
}
