use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::block::{Block, ParentRef, Transaction};
use super::LedgerError;
use crate::auth::Authenticator;
use crate::ident::Identifier;

pub const DEFAULT_GRANT: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    BadSignature,
    InsufficientBalance,
    Replay,
    Malformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

/// Initial balances, known to every node out of band.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrantBook {
    pub default: u64,
    pub overrides: BTreeMap<Identifier, u64>,
}

impl Default for GrantBook {
    fn default() -> Self {
        GrantBook {
            default: DEFAULT_GRANT,
            overrides: BTreeMap::new(),
        }
    }
}

impl GrantBook {
    pub fn grant(&self, account: &Identifier) -> u64 {
        self.overrides.get(account).copied().unwrap_or(self.default)
    }
}

/// Append-only chain of every block touching one account.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccountChain {
    account: Identifier,
    grant: u64,
    blocks: Vec<Block>,
    balance: i128,
    last_nonce: Option<u64>,
}

impl AccountChain {
    pub fn new(account: Identifier, grant: u64) -> Self {
        AccountChain {
            account,
            grant,
            blocks: Vec::new(),
            balance: grant as i128,
            last_nonce: None,
        }
    }

    pub fn account(&self) -> Identifier {
        self.account
    }

    pub fn grant(&self) -> u64 {
        self.grant
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    /// Signed so that a chain built from an overdraft stays representable.
    pub fn balance(&self) -> i128 {
        self.balance
    }

    pub fn last_nonce(&self) -> Option<u64> {
        self.last_nonce
    }

    pub fn tip(&self) -> ParentRef {
        match self.blocks.last() {
            Some(b) => ParentRef {
                hash: b.hash,
                height: self.height(),
            },
            None => ParentRef::GENESIS,
        }
    }

    pub fn tip_block(&self) -> Option<&Block> {
        self.blocks.last()
    }

    /// Block at 1-based `height`.
    pub fn block_at(&self, height: u64) -> Option<&Block> {
        height
            .checked_sub(1)
            .and_then(|i| self.blocks.get(i as usize))
    }

    pub fn validate_transaction(&self, tx: &Transaction, auth: &dyn Authenticator) -> Verdict {
        if tx.sender != self.account || !tx.is_well_formed() {
            return Verdict::Reject(RejectReason::Malformed);
        }
        if !tx.signature_valid(auth) {
            return Verdict::Reject(RejectReason::BadSignature);
        }
        if self.last_nonce.is_some_and(|n| tx.nonce <= n) {
            return Verdict::Reject(RejectReason::Replay);
        }
        if tx.amount as i128 > self.balance {
            return Verdict::Reject(RejectReason::InsufficientBalance);
        }
        Verdict::Accept
    }

    /// Appends a committed block. Only linkage is checked here; spending
    /// rules are enforced before consensus.
    pub fn append_block(&mut self, block: Block) -> Result<(), LedgerError> {
        let parent = block
            .parent_for(&self.account)
            .ok_or(LedgerError::NotInvolved(self.account))?;
        let tip = self.tip();
        if parent != tip {
            return Err(LedgerError::ParentMismatch {
                expected: tip,
                got: parent,
            });
        }
        if !block.hash_valid() {
            return Err(LedgerError::BadHash);
        }
        if block.tx.sender == self.account {
            self.balance -= block.tx.amount as i128;
            self.last_nonce = Some(block.tx.nonce);
        } else {
            self.balance += block.tx.amount as i128;
        }
        self.blocks.push(block);
        Ok(())
    }

    /// Blocks `from..=to` (1-based), clipped to the tip.
    pub fn get_blocks(&self, from: u64, to: u64) -> Vec<Block> {
        let from = from.max(1);
        let to = to.min(self.height());
        if from > to {
            return Vec::new();
        }
        self.blocks[(from - 1) as usize..to as usize].to_vec()
    }

    /// Balance after each block, starting with the grant.
    pub fn prefix_balances(&self) -> Vec<i128> {
        let mut out = Vec::with_capacity(self.blocks.len() + 1);
        let mut bal = self.grant as i128;
        out.push(bal);
        for b in &self.blocks {
            if b.tx.sender == self.account {
                bal -= b.tx.amount as i128;
            } else {
                bal += b.tx.amount as i128;
            }
            out.push(bal);
        }
        out
    }

    pub fn never_overdrawn(&self) -> bool {
        self.prefix_balances().iter().all(|b| *b >= 0)
    }

    /// Drops every block above `height`.
    pub fn truncate(&mut self, height: u64) {
        let kept: Vec<Block> = self.blocks.drain(..).take(height as usize).collect();
        let mut fresh = AccountChain::new(self.account, self.grant);
        for b in kept {
            fresh
                .append_block(b)
                .expect("prefix of a valid chain stays valid");
        }
        *self = fresh;
    }
}

/// A set of chains sharing one grant book; handy for building workloads
/// and as a reference model in tests.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    grants: GrantBook,
    chains: BTreeMap<Identifier, AccountChain>,
}

impl Ledger {
    pub fn new(grants: GrantBook) -> Self {
        Ledger {
            grants,
            chains: BTreeMap::new(),
        }
    }

    pub fn grants(&self) -> &GrantBook {
        &self.grants
    }

    pub fn chain(&self, account: &Identifier) -> Option<&AccountChain> {
        self.chains.get(account)
    }

    pub fn chain_mut(&mut self, account: &Identifier) -> &mut AccountChain {
        let grant = self.grants.grant(account);
        self.chains
            .entry(*account)
            .or_insert_with(|| AccountChain::new(*account, grant))
    }

    pub fn chains(&self) -> impl Iterator<Item = &AccountChain> {
        self.chains.values()
    }

    pub fn tip(&self, account: &Identifier) -> ParentRef {
        self.chains
            .get(account)
            .map(AccountChain::tip)
            .unwrap_or(ParentRef::GENESIS)
    }

    pub fn validate(&mut self, tx: &Transaction, auth: &dyn Authenticator) -> Verdict {
        self.chain_mut(&tx.sender).validate_transaction(tx, auth)
    }

    /// A block for `tx` extending both current tips.
    pub fn build_block(&self, tx: Transaction, validators: Vec<Identifier>) -> Block {
        let sp = self.tip(&tx.sender);
        let rp = self.tip(&tx.receiver);
        Block::new(tx, validators, sp, rp, None)
    }

    /// Appends to both sides. Nothing changes if either side rejects.
    pub fn commit(&mut self, block: Block) -> Result<(), LedgerError> {
        let s = block.tx.sender;
        let r = block.tx.receiver;
        let mut sc = self.chain_mut(&s).clone();
        let mut rc = self.chain_mut(&r).clone();
        sc.append_block(block.clone())?;
        rc.append_block(block)?;
        self.chains.insert(s, sc);
        self.chains.insert(r, rc);
        Ok(())
    }
}
