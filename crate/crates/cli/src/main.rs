use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use scalegraph::consensus::{DeadlockPolicy, QuorumRule};
use scalegraph::security_sim::{FModel, Fraction};

mod experiments;
mod manifest;
mod protocol;

use manifest::{Invocation, Params, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "scalegraph",
    version,
    about = "Shard-security experiments and protocol scenarios"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Master seed. Falls back to SCALEGRAPH_SEED, then to 0 (or the scenario seed).
    #[arg(long, global = true, env = "SCALEGRAPH_SEED")]
    seed: Option<u64>,
    /// Primary output file. The manifest is written next to it as `<out>.manifest.json`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for Monte Carlo experiments.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Iterations per repetition.
    #[arg(long, global = true)]
    iterations: Option<u32>,
    /// Independent repetitions, each on a fresh network.
    #[arg(long, global = true)]
    repetitions: Option<u32>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Smallest grid shard size with no compromised shard, per network size.
    ShardSize {
        /// Network sizes.
        #[arg(long = "n", value_delimiter = ',', required = true)]
        n: Vec<usize>,
        /// Byzantine fraction, e.g. `1/4` or `0.25`.
        #[arg(long)]
        f: Fraction,
        /// Fault tolerance of the shard consensus: `1/2` or `1/3`.
        #[arg(long, default_value = "1/2")]
        model: FModel,
        /// Shards per network as a multiple of N.
        #[arg(long, default_value_t = 2)]
        m_factor: usize,
    },
    /// Observed and analytic failure probability over a sweep of r and m.
    FailureProb {
        /// Network size.
        #[arg(long = "n")]
        n: usize,
        /// Shard counts.
        #[arg(long = "m", value_delimiter = ',', required = true)]
        m: Vec<usize>,
        /// Shard sizes.
        #[arg(long = "r", value_delimiter = ',', required = true)]
        r: Vec<usize>,
        /// Byzantine fraction.
        #[arg(long)]
        f: Fraction,
        /// Fault tolerance of the shard consensus.
        #[arg(long, default_value = "1/2")]
        model: FModel,
    },
    /// Run a scenario file through the network simulator.
    Protocol {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Write the run report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Override the scenario's vote counting rule.
        #[arg(long, value_parser = parse_kebab::<QuorumRule>)]
        quorum_rule: Option<QuorumRule>,
        /// Override the scenario's deadlock policy.
        #[arg(long, value_parser = parse_kebab::<DeadlockPolicy>)]
        deadlock_policy: Option<DeadlockPolicy>,
    },
    /// Repeat a run from its manifest.
    Rerun {
        /// A `.manifest.json` written by an earlier run.
        manifest: PathBuf,
        /// Directory for the regenerated outputs.
        #[arg(long, default_value = "rerun")]
        out_dir: PathBuf,
        /// Fail unless every output hashes to the recorded digest.
        #[arg(long)]
        verify: bool,
    },
}

fn parse_kebab<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let g = cli.global;
    if let Some(workers) = g.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let (invocation, out) = match cli.command {
        Command::ShardSize {
            n,
            f,
            model,
            m_factor,
        } => (
            Invocation {
                seed: g.seed.unwrap_or(0),
                params: Params::ShardSize {
                    n,
                    f,
                    model,
                    m_factor,
                    repetitions: g.repetitions.unwrap_or(experiments::SEARCH_REPETITIONS),
                    iterations: g.iterations.unwrap_or(experiments::SEARCH_ITERATIONS),
                },
            },
            g.out.unwrap_or_else(|| "shard_size.csv".into()),
        ),
        Command::FailureProb { n, m, r, f, model } => (
            Invocation {
                seed: g.seed.unwrap_or(0),
                params: Params::FailureProb {
                    n,
                    m,
                    r,
                    f,
                    model,
                    repetitions: g.repetitions.unwrap_or(experiments::SWEEP_REPETITIONS),
                    iterations: g.iterations.unwrap_or(experiments::SWEEP_ITERATIONS),
                },
            },
            g.out.unwrap_or_else(|| "failure_prob.csv".into()),
        ),
        Command::Protocol {
            scenario,
            report,
            quorum_rule,
            deadlock_policy,
        } => {
            let mut sc = protocol::load(&scenario)?;
            if let Some(seed) = g.seed {
                sc.seed = seed;
            }
            if let Some(rule) = quorum_rule {
                sc.quorum_rule = rule;
            }
            if let Some(policy) = deadlock_policy {
                sc.deadlock_policy = policy;
            }
            (
                Invocation {
                    seed: sc.seed,
                    params: Params::Protocol {
                        scenario: Box::new(sc),
                        report,
                    },
                },
                g.out.unwrap_or_else(|| "trace.jsonl".into()),
            )
        }
        Command::Rerun {
            manifest,
            out_dir,
            verify,
        } => return rerun(&manifest, &out_dir, verify),
    };
    execute(invocation, &out).map(|(_, ok)| ok)
}

/// Runs one invocation and writes its outputs plus manifest.
fn execute(invocation: Invocation, out: &std::path::Path) -> Result<(RunManifest, bool)> {
    let started = Instant::now();
    let (outputs, ok) = match &invocation.params {
        Params::ShardSize { .. } => experiments::shard_size(&invocation, out)?,
        Params::FailureProb { .. } => experiments::failure_prob(&invocation, out)?,
        Params::Protocol { scenario, report } => protocol::run(scenario, out, report.as_deref())?,
    };
    let manifest = RunManifest::new(invocation, outputs, started.elapsed())?;
    let path = manifest::manifest_path(out);
    manifest.write(&path)?;
    eprintln!("manifest: {}", path.display());
    Ok((manifest, ok))
}

fn rerun(path: &std::path::Path, out_dir: &std::path::Path, verify: bool) -> Result<bool> {
    let recorded = RunManifest::read(path)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut invocation = recorded.invocation.clone();
    let primary = recorded
        .outputs
        .first()
        .context("manifest lists no outputs")?;
    let out = out_dir.join(manifest::file_name(&primary.path)?);
    if let Params::Protocol { report: Some(r), .. } = &mut invocation.params {
        *r = out_dir.join(manifest::file_name(r)?);
    }
    let (fresh, ok) = execute(invocation, &out)?;
    if !verify {
        return Ok(ok);
    }
    if fresh.outputs.len() != recorded.outputs.len() {
        bail!(
            "rerun produced {} outputs, manifest records {}",
            fresh.outputs.len(),
            recorded.outputs.len()
        );
    }
    let mut identical = true;
    for (old, new) in recorded.outputs.iter().zip(&fresh.outputs) {
        let same = old.sha256 == new.sha256;
        identical &= same;
        println!(
            "{} {} {}",
            if same { "identical" } else { "DIFFERS" },
            new.path.display(),
            new.sha256
        );
    }
    Ok(ok && identical)
}
