use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::auth::Digest;
use crate::ident::Identifier;

pub type Time = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    AwaitingTip,
    Proposed,
    Voted,
    PreCommitPending,
    Committed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Bootstrap {
        node: Identifier,
    },
    Inject {
        label: String,
        tx: Digest,
        entry: Identifier,
    },
    Send {
        from: Identifier,
        to: Identifier,
        msg: String,
        tx: Option<Digest>,
        deliver_at: Time,
    },
    Deliver {
        from: Identifier,
        to: Identifier,
        msg: String,
        tx: Option<Digest>,
        sent_at: Time,
    },
    Drop {
        from: Identifier,
        to: Identifier,
        msg: String,
        reason: String,
    },
    Phase {
        node: Identifier,
        tx: Digest,
        view: u64,
        phase: Phase,
    },
    Commit {
        node: Identifier,
        tx: Digest,
        view: u64,
        block: Digest,
        sender: Identifier,
        sender_height: u64,
        receiver: Identifier,
        receiver_height: u64,
    },
    ViewChange {
        node: Identifier,
        tx: Digest,
        view: u64,
    },
    Blame {
        node: Identifier,
        tx: Digest,
        view: u64,
        proof: bool,
    },
    Equivocation {
        node: Identifier,
        tx: Digest,
        view: u64,
    },
    Reject {
        node: Identifier,
        tx: Digest,
        view: u64,
        reason: String,
    },
    Abandon {
        node: Identifier,
        tx: Digest,
        reason: String,
    },
    Lock {
        node: Identifier,
        account: Identifier,
        tx: Digest,
        event: String,
    },
    Retry {
        node: Identifier,
        tx: Digest,
        attempt: u32,
        at: Time,
    },
    Append {
        node: Identifier,
        account: Identifier,
        height: u64,
        block: Digest,
    },
    GapFill {
        node: Identifier,
        account: Identifier,
        from: u64,
        to: u64,
    },
    Replicate {
        node: Identifier,
        account: Identifier,
        action: String,
    },
    DropChain {
        node: Identifier,
        account: Identifier,
    },
    Crash {
        node: Identifier,
    },
    Join {
        node: Identifier,
    },
    Leave {
        node: Identifier,
    },
    LookupDone {
        node: Identifier,
        target: Identifier,
        rounds: u32,
        found: usize,
    },
    End {
        reason: String,
        pending: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: Time,
    pub seq: u64,
    #[serde(flatten)]
    pub event: TraceEvent,
}

/// JSON-lines encoding, one record per line.
pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn trace_to_string(records: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_trace(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}
