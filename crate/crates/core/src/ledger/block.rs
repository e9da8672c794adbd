use serde::{Deserialize, Serialize};

use crate::auth::{Authenticator, Canon, Digest, Signature};
use crate::ident::Identifier;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub sender: Identifier,
    pub receiver: Identifier,
    pub amount: u64,
    pub nonce: u64,
    pub signature: Signature,
}

impl Transaction {
    /// The message the sender signs.
    pub fn signing_digest(
        sender: &Identifier,
        receiver: &Identifier,
        amount: u64,
        nonce: u64,
    ) -> Digest {
        Canon::new("tx")
            .id(sender)
            .id(receiver)
            .u64(amount)
            .u64(nonce)
            .finish()
    }

    pub fn signed(
        auth: &dyn Authenticator,
        sender: Identifier,
        receiver: Identifier,
        amount: u64,
        nonce: u64,
    ) -> Self {
        let digest = Transaction::signing_digest(&sender, &receiver, amount, nonce);
        Transaction {
            sender,
            receiver,
            amount,
            nonce,
            signature: auth.sign(&sender, &digest),
        }
    }

    /// Stable identifier covering every field, signature included.
    pub fn id(&self) -> Digest {
        Canon::new("tx-id")
            .digest(&Transaction::signing_digest(
                &self.sender,
                &self.receiver,
                self.amount,
                self.nonce,
            ))
            .id(&self.signature.signer)
            .digest(&self.signature.tag)
            .finish()
    }

    pub fn is_well_formed(&self) -> bool {
        self.sender != self.receiver && self.amount > 0
    }

    pub fn signature_valid(&self, auth: &dyn Authenticator) -> bool {
        self.signature.signer == self.sender
            && auth.verify(
                &self.signature,
                &Transaction::signing_digest(&self.sender, &self.receiver, self.amount, self.nonce),
            )
    }
}

/// Hash and height of the block a new block extends on one side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParentRef {
    pub hash: Digest,
    pub height: u64,
}

impl ParentRef {
    pub const GENESIS: ParentRef = ParentRef {
        hash: Digest::ZERO,
        height: 0,
    };

    pub fn is_genesis(&self) -> bool {
        self.height == 0
    }
}

/// One transaction placed on both the sender's and the receiver's chain.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    pub tx: Transaction,
    pub validators: Vec<Identifier>,
    pub sender_parent: ParentRef,
    pub receiver_parent: ParentRef,
    pub prev_votes: Option<Vec<Signature>>,
    pub hash: Digest,
}

impl Block {
    pub fn new(
        tx: Transaction,
        validators: Vec<Identifier>,
        sender_parent: ParentRef,
        receiver_parent: ParentRef,
        prev_votes: Option<Vec<Signature>>,
    ) -> Self {
        let mut block = Block {
            tx,
            validators,
            sender_parent,
            receiver_parent,
            prev_votes,
            hash: Digest::ZERO,
        };
        block.hash = block.compute_hash();
        block
    }

    pub fn compute_hash(&self) -> Digest {
        let mut c = Canon::new("block");
        c.digest(&self.tx.id()).u64(self.validators.len() as u64);
        for v in &self.validators {
            c.id(v);
        }
        c.digest(&self.sender_parent.hash)
            .u64(self.sender_parent.height)
            .digest(&self.receiver_parent.hash)
            .u64(self.receiver_parent.height);
        match &self.prev_votes {
            None => {
                c.flag(false);
            }
            Some(votes) => {
                c.flag(true).u64(votes.len() as u64);
                for s in votes {
                    c.id(&s.signer).digest(&s.tag);
                }
            }
        }
        c.finish()
    }

    pub fn hash_valid(&self) -> bool {
        self.hash == self.compute_hash()
    }

    pub fn involves(&self, account: &Identifier) -> bool {
        self.tx.sender == *account || self.tx.receiver == *account
    }

    /// The parent link relevant to `account`'s chain.
    pub fn parent_for(&self, account: &Identifier) -> Option<ParentRef> {
        if self.tx.sender == *account {
            Some(self.sender_parent)
        } else if self.tx.receiver == *account {
            Some(self.receiver_parent)
        } else {
            None
        }
    }

    pub fn height_for(&self, account: &Identifier) -> Option<u64> {
        self.parent_for(account).map(|p| p.height + 1)
    }

    pub fn sender_height(&self) -> u64 {
        self.sender_parent.height + 1
    }

    pub fn receiver_height(&self) -> u64 {
        self.receiver_parent.height + 1
    }

    /// This block as a parent reference on the `account` side.
    pub fn as_parent(&self, account: &Identifier) -> Option<ParentRef> {
        self.height_for(account).map(|height| ParentRef {
            hash: self.hash,
            height,
        })
    }
}
