//! Sharded ledger over an XOR-proximity identifier space.

pub mod auth;
pub mod consensus;
pub mod ident;
pub mod ledger;
pub mod routing;
pub mod security_sim;
pub mod simnet;
