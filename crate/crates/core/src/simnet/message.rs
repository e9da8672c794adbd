use serde::{Deserialize, Serialize};

use crate::auth::{Canon, Digest, Signature};
use crate::consensus::QuorumCertificate;
use crate::ident::Identifier;
use crate::ledger::{Block, ParentRef, Transaction};

/// A leader-signed block proposal for one view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub block: Block,
    pub view: u64,
    pub justify: Option<QuorumCertificate>,
    pub signature: Signature,
}

impl Proposal {
    pub fn digest(tx_id: &Digest, view: u64, block: &Digest) -> Digest {
        Canon::new("proposal")
            .digest(tx_id)
            .u64(view)
            .digest(block)
            .finish()
    }

    pub fn tx_id(&self) -> Digest {
        self.block.tx.id()
    }
}

/// Everything nodes send each other.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    /// A client hands a transaction to any node.
    ClientTx {
        tx: Transaction,
    },
    TxForward {
        tx: Transaction,
    },
    TipRequest {
        tx: Transaction,
        view: u64,
        attempt: u32,
    },
    TipReply {
        tx_id: Digest,
        account: Identifier,
        tip: ParentRef,
        attempt: u32,
    },
    /// The receiver chain is locked by another transaction; the reply
    /// follows once it frees up.
    TipBusy {
        tx_id: Digest,
        attempt: u32,
    },
    TipRelease {
        tx_id: Digest,
        account: Identifier,
        attempt: u32,
    },
    Propose {
        proposal: Proposal,
    },
    Forward {
        proposal: Proposal,
    },
    Vote {
        tx_id: Digest,
        view: u64,
        block: Digest,
        signature: Signature,
    },
    Certified {
        qc: QuorumCertificate,
    },
    Commit {
        tx_id: Digest,
        view: u64,
        block: Digest,
        signature: Signature,
    },
    Blame {
        tx_id: Digest,
        view: u64,
        signature: Signature,
        proof: Option<Box<(Proposal, Proposal)>>,
    },
    Status {
        tx_id: Digest,
        view: u64,
        highest: Option<Box<(Block, QuorumCertificate)>>,
    },
    GetBlocks {
        account: Identifier,
        from: u64,
        to: u64,
    },
    Blocks {
        account: Identifier,
        blocks: Vec<Block>,
    },
    ReplicateTip {
        account: Identifier,
        block: Block,
        evidence: QuorumCertificate,
    },
    FindNode {
        lookup: u64,
        target: Identifier,
        count: usize,
    },
    FindNodeReply {
        lookup: u64,
        nodes: Vec<Identifier>,
    },
}

impl Message {
    pub fn label(&self) -> &'static str {
        match self {
            Message::ClientTx { .. } => "client_tx",
            Message::TxForward { .. } => "tx_forward",
            Message::TipRequest { .. } => "tip_request",
            Message::TipReply { .. } => "tip_reply",
            Message::TipBusy { .. } => "tip_busy",
            Message::TipRelease { .. } => "tip_release",
            Message::Propose { .. } => "propose",
            Message::Forward { .. } => "forward",
            Message::Vote { .. } => "vote",
            Message::Certified { .. } => "certified",
            Message::Commit { .. } => "commit",
            Message::Blame { .. } => "blame",
            Message::Status { .. } => "status",
            Message::GetBlocks { .. } => "get_blocks",
            Message::Blocks { .. } => "blocks",
            Message::ReplicateTip { .. } => "replicate_tip",
            Message::FindNode { .. } => "find_node",
            Message::FindNodeReply { .. } => "find_node_reply",
        }
    }

    /// Transaction the message belongs to, if any.
    pub fn tx_id(&self) -> Option<Digest> {
        match self {
            Message::ClientTx { tx }
            | Message::TxForward { tx }
            | Message::TipRequest { tx, .. } => Some(tx.id()),
            Message::TipReply { tx_id, .. }
            | Message::TipBusy { tx_id, .. }
            | Message::TipRelease { tx_id, .. }
            | Message::Vote { tx_id, .. }
            | Message::Commit { tx_id, .. }
            | Message::Blame { tx_id, .. }
            | Message::Status { tx_id, .. } => Some(*tx_id),
            Message::Propose { proposal } | Message::Forward { proposal } => Some(proposal.tx_id()),
            Message::Certified { qc } => Some(qc.tx_id),
            Message::ReplicateTip { block, .. } => Some(block.tx.id()),
            Message::GetBlocks { .. }
            | Message::Blocks { .. }
            | Message::FindNode { .. }
            | Message::FindNodeReply { .. } => None,
        }
    }
}
