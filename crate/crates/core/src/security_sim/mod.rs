//! Shard-compromise experiments: Monte Carlo over XOR-proximity shards on
//! random networks, the required-shard-size search, and the analytic
//! hypergeometric model.

mod analytic;
mod model;
mod montecarlo;
mod shards;

pub use analytic::{failure_probability, hypergeometric_p};
pub use model::{is_compromised, is_compromised_count, FModel, Fraction, ParseError};
pub use montecarlo::{
    analytic_row, compare_to_analytic, find_required_shard_size, repetition_seed, run_experiment,
    zero_compromise, ComparisonRow, ExperimentConfig, ExperimentError, ExperimentResult, Probe,
    SearchOutcome, GRID_ORIGIN, GRID_STEP, SEARCH_ITERATIONS, SEARCH_REPETITIONS,
};
pub use shards::{build_shards, ShardSet, SortedIds};
