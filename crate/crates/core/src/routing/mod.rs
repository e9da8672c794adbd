//! Kademlia-style routing: k-bucket contact tables, the iterative find-node
//! lookup, and a global-knowledge oracle used as ground truth.

mod lookup;
mod network;
mod table;

pub use lookup::{
    iterative_find_nodes, oracle_closest, FindNodeEndpoint, LookupError, LookupOptions,
    LookupOutcome, LookupPool, RoundOutcome, DEFAULT_ALPHA,
};
pub use network::TableNetwork;
pub use table::{RoutingTable, UpdateOutcome, DEFAULT_K_BUCKET};
