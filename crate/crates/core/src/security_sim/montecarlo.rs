use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::analytic::{failure_probability, hypergeometric_p};
use super::model::{FModel, Fraction};
use super::shards::ShardSet;

/// Repetitions and iterations used for the required-shard-size search.
pub const SEARCH_REPETITIONS: u32 = 20;
pub const SEARCH_ITERATIONS: u32 = 5000;
/// Search grid: 21, 41, 61, ...
pub const GRID_ORIGIN: usize = 21;
pub const GRID_STEP: usize = 20;

const CHUNK: u32 = 512;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExperimentError {
    #[error("F*N must be a whole number of nodes ({f} of {n})")]
    NotIntegral { f: Fraction, n: usize },
    #[error("shard size {r} exceeds the {n} nodes")]
    ShardTooLarge { r: usize, n: usize },
    #[error("{0} must be positive")]
    Zero(&'static str),
    #[error("node IDs of {0} bits are not supported (1..=64)")]
    Bits(u16),
    #[error("no shard size up to {n} keeps F={f} under the {model} tolerance")]
    Infeasible {
        n: usize,
        f: Fraction,
        model: FModel,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub f: Fraction,
    pub model: FModel,
    pub repetitions: u32,
    pub iterations: u32,
    pub seed: u64,
    pub id_bits: u16,
}

impl ExperimentConfig {
    /// `m = 2N` and the 20 x 5000 schedule.
    pub fn new(n: usize, r: usize, f: Fraction, model: FModel, seed: u64) -> Self {
        ExperimentConfig {
            n,
            m: 2 * n,
            r,
            f,
            model,
            repetitions: SEARCH_REPETITIONS,
            iterations: SEARCH_ITERATIONS,
            seed,
            id_bits: crate::ident::DEFAULT_BITS,
        }
    }

    pub fn byzantine(&self) -> Result<usize, ExperimentError> {
        self.f
            .of(self.n as u64)
            .map(|b| b as usize)
            .ok_or(ExperimentError::NotIntegral {
                f: self.f,
                n: self.n,
            })
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.n == 0 {
            return Err(ExperimentError::Zero("N"));
        }
        if self.m == 0 {
            return Err(ExperimentError::Zero("m"));
        }
        if self.r == 0 {
            return Err(ExperimentError::Zero("r"));
        }
        if self.iterations == 0 {
            return Err(ExperimentError::Zero("iterations"));
        }
        if self.repetitions == 0 {
            return Err(ExperimentError::Zero("repetitions"));
        }
        if self.r > self.n {
            return Err(ExperimentError::ShardTooLarge {
                r: self.r,
                n: self.n,
            });
        }
        if !(1..=64).contains(&self.id_bits)
            || (self.id_bits < 64 && (self.n as u128) > (1u128 << self.id_bits))
        {
            return Err(ExperimentError::Bits(self.id_bits));
        }
        if self.byzantine()? > self.n {
            return Err(ExperimentError::NotIntegral {
                f: self.f,
                n: self.n,
            });
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> u64 {
        self.repetitions as u64 * self.iterations as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub compromised_iterations: u64,
    pub total_iterations: u64,
    pub failure_probability: f64,
    /// Binomial standard error of `failure_probability`.
    pub stderr: f64,
    pub per_repetition: Vec<u64>,
}

impl ExperimentResult {
    pub const CSV_HEADER: &'static str = "N,m,r,F,f,iterations,compromised,probability,stderr,seed";

    pub fn csv_row(&self) -> String {
        let c = &self.config;
        format!(
            "{},{},{},{},{},{},{},{:.6e},{:.6e},{}",
            c.n,
            c.m,
            c.r,
            c.f,
            c.model,
            self.total_iterations,
            self.compromised_iterations,
            self.failure_probability,
            self.stderr,
            c.seed
        )
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of repetition `rep` under run seed `seed`.
pub fn repetition_seed(seed: u64, rep: u32) -> u64 {
    splitmix(seed ^ splitmix(rep as u64))
}

/// Per-iteration scratch space.
struct Scratch {
    perm: Vec<u32>,
    mark: Vec<u32>,
    prefix: Vec<u32>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            perm: Vec::with_capacity(n),
            mark: vec![0; n],
            prefix: vec![0; n + 1],
        }
    }

    /// Uniform `b`-subset without replacement, as a prefix count over node
    /// indices.
    fn sample<R: Rng>(&mut self, rng: &mut R, n: usize, b: usize) -> &[u32] {
        self.perm.clear();
        self.perm.extend(0..n as u32);
        self.mark.iter_mut().for_each(|m| *m = 0);
        for i in 0..b {
            let j = rng.gen_range(i..n);
            self.perm.swap(i, j);
            self.mark[self.perm[i] as usize] = 1;
        }
        for i in 0..n {
            self.prefix[i + 1] = self.prefix[i] + self.mark[i];
        }
        &self.prefix
    }
}

/// One repetition: a fresh network and shards, then `iterations` fresh
/// Byzantine samples. Iteration `i` draws from ChaCha stream `i + 1` of the
/// repetition's key, so results do not depend on how work is split.
fn run_repetition(cfg: &ExperimentConfig, rep: u32, stop_on_first: bool) -> u64 {
    let b = cfg.byzantine().expect("validated");
    let base = ChaCha8Rng::seed_from_u64(repetition_seed(cfg.seed, rep));
    let mut net_rng = base.clone();
    let shards = ShardSet::random(&mut net_rng, cfg.id_bits, cfg.n, cfg.m, cfg.r);
    let threshold = cfg.model.threshold(cfg.r) as u32;
    if b < threshold as usize {
        return 0;
    }
    let chunks: Vec<(u32, u32)> = (0..cfg.iterations)
        .step_by(CHUNK as usize)
        .map(|s| (s, (s + CHUNK).min(cfg.iterations)))
        .collect();
    let run_chunk = |(s, e): (u32, u32)| -> u64 {
        let mut scratch = Scratch::new(cfg.n);
        let mut hits = 0;
        for it in s..e {
            let mut rng = base.clone();
            rng.set_stream(it as u64 + 1);
            rng.set_word_pos(0);
            let prefix = scratch.sample(&mut rng, cfg.n, b);
            if shards.any_reaches(prefix, threshold) {
                hits += 1;
                if stop_on_first {
                    return hits;
                }
            }
        }
        hits
    };
    if stop_on_first {
        chunks.into_par_iter().any(|c| run_chunk(c) > 0) as u64
    } else {
        chunks.into_par_iter().map(run_chunk).sum()
    }
}

/// Monte Carlo failure probability: the fraction of iterations in which at
/// least one shard is compromised.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    cfg.validate()?;
    let per_repetition: Vec<u64> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(cfg, rep, false))
        .collect();
    let compromised: u64 = per_repetition.iter().sum();
    let total = cfg.total_iterations();
    let p = compromised as f64 / total as f64;
    Ok(ExperimentResult {
        config: cfg.clone(),
        compromised_iterations: compromised,
        total_iterations: total,
        failure_probability: p,
        stderr: (p * (1.0 - p) / total as f64).sqrt(),
        per_repetition,
    })
}

/// True when no iteration of any repetition compromises a shard.
pub fn zero_compromise(cfg: &ExperimentConfig) -> Result<bool, ExperimentError> {
    cfg.validate()?;
    for rep in 0..cfg.repetitions {
        if run_repetition(cfg, rep, true) > 0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// One probe of the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub r: usize,
    pub clean: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub r: usize,
    pub probes: Vec<Probe>,
}

/// Smallest grid shard size whose every iteration is free of compromised
/// shards. `template` supplies everything except `r`.
pub fn find_required_shard_size(
    template: &ExperimentConfig,
) -> Result<SearchOutcome, ExperimentError> {
    let (num, den) = template.model.tolerance();
    if template.f.at_least(num, den) {
        return Err(ExperimentError::Infeasible {
            n: template.n,
            f: template.f,
            model: template.model,
        });
    }
    let mut probes = Vec::new();
    let mut r = GRID_ORIGIN;
    while r <= template.n {
        let cfg = ExperimentConfig {
            r,
            ..template.clone()
        };
        let clean = zero_compromise(&cfg)?;
        probes.push(Probe { r, clean });
        if clean {
            return Ok(SearchOutcome { r, probes });
        }
        r += GRID_STEP;
    }
    Err(ExperimentError::Infeasible {
        n: template.n,
        f: template.f,
        model: template.model,
    })
}

/// Observed failure probability next to three analytic curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub r: usize,
    pub observed: ExperimentResult,
    pub p_shard: f64,
    pub analytic_m: f64,
    pub analytic_n: f64,
    pub analytic_n_over_r: f64,
}

impl ComparisonRow {
    pub const CSV_HEADER: &'static str =
        "N,m,r,F,f,iterations,compromised,probability,stderr,seed,p_shard,analytic_m,analytic_N,analytic_N_over_r";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6e},{:.6e},{:.6e},{:.6e}",
            self.observed.csv_row(),
            self.p_shard,
            self.analytic_m,
            self.analytic_n,
            self.analytic_n_over_r
        )
    }
}

pub fn analytic_row(n: usize, b: usize, r: usize, m: usize, model: FModel) -> (f64, f64, f64, f64) {
    let p = hypergeometric_p(n, b, r, model);
    (
        p,
        failure_probability(p, m as f64),
        failure_probability(p, n as f64),
        failure_probability(p, n as f64 / r as f64),
    )
}

/// Runs the template at every shard size in `rs`.
pub fn compare_to_analytic(
    template: &ExperimentConfig,
    rs: &[usize],
) -> Result<Vec<ComparisonRow>, ExperimentError> {
    let b = template.byzantine()?;
    rs.iter()
        .map(|&r| {
            let cfg = ExperimentConfig {
                r,
                ..template.clone()
            };
            let observed = run_experiment(&cfg)?;
            let (p_shard, analytic_m, analytic_n, analytic_n_over_r) =
                analytic_row(cfg.n, b, r, cfg.m, cfg.model);
            Ok(ComparisonRow {
                r,
                observed,
                p_shard,
                analytic_m,
                analytic_n,
                analytic_n_over_r,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frac(s: &str) -> Fraction {
        s.parse().unwrap()
    }

    #[test]
    fn zero_byzantine_gives_zero() {
        let mut c = ExperimentConfig::new(200, 5, frac("0"), FModel::OneHalf, 1);
        c.repetitions = 2;
        c.iterations = 100;
        assert_eq!(run_experiment(&c).unwrap().failure_probability, 0.0);
    }

    #[test]
    fn r_one_with_many_shards_fails_almost_surely() {
        let mut c = ExperimentConfig::new(200, 1, frac("1/4"), FModel::OneHalf, 2);
        c.repetitions = 2;
        c.iterations = 200;
        assert!(run_experiment(&c).unwrap().failure_probability > 0.99);
    }

    #[test]
    fn deterministic_per_seed() {
        let mut c = ExperimentConfig::new(300, 9, frac("1/5"), FModel::OneHalf, 9);
        c.repetitions = 3;
        c.iterations = 700;
        let a = run_experiment(&c).unwrap();
        assert_eq!(a, run_experiment(&c).unwrap());
        c.seed = 10;
        assert_ne!(a.per_repetition, run_experiment(&c).unwrap().per_repetition);
    }

    #[test]
    fn validation() {
        let c = ExperimentConfig::new(10, 3, frac("1/3"), FModel::OneHalf, 0);
        assert!(matches!(
            run_experiment(&c),
            Err(ExperimentError::NotIntegral { .. })
        ));
        let c = ExperimentConfig::new(10, 11, frac("1/5"), FModel::OneHalf, 0);
        assert!(matches!(
            run_experiment(&c),
            Err(ExperimentError::ShardTooLarge { .. })
        ));
    }

    #[test]
    fn third_of_nodes_under_third_tolerance_is_infeasible() {
        let c = ExperimentConfig::new(300, 21, frac("1/3"), FModel::OneThird, 0);
        assert!(matches!(
            find_required_shard_size(&c),
            Err(ExperimentError::Infeasible { .. })
        ));
    }

    #[test]
    fn csv_row_shape() {
        let mut c = ExperimentConfig::new(100, 11, frac("1/4"), FModel::OneHalf, 5);
        c.repetitions = 1;
        c.iterations = 10;
        let row = run_experiment(&c).unwrap().csv_row();
        assert_eq!(
            row.split(',').count(),
            ExperimentResult::CSV_HEADER.split(',').count()
        );
        assert!(row.starts_with("100,200,11,1/4,1/2,10,"));
    }
}
