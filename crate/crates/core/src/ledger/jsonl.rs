use std::io::{BufRead, Write};

use super::block::Block;
use super::chain::AccountChain;
use super::LedgerError;
use crate::ident::Identifier;

/// Writes one block per line.
pub fn export_chain<W: Write>(chain: &AccountChain, mut out: W) -> Result<(), LedgerError> {
    for block in chain.blocks() {
        serde_json::to_writer(&mut out, block)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Rebuilds a chain by re-appending every exported block, so broken links
/// and tampered hashes are rejected.
pub fn import_chain<R: BufRead>(
    input: R,
    account: Identifier,
    grant: u64,
) -> Result<AccountChain, LedgerError> {
    let mut chain = AccountChain::new(account, grant);
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let block: Block = serde_json::from_str(&line)?;
        chain.append_block(block)?;
    }
    Ok(chain)
}
