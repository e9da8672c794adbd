use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use scalegraph::security_sim::{
    compare_to_analytic, find_required_shard_size, ComparisonRow, ExperimentConfig, ExperimentError,
};

use crate::manifest::{Invocation, Params};

pub use scalegraph::security_sim::{SEARCH_ITERATIONS, SEARCH_REPETITIONS};

pub const SWEEP_REPETITIONS: u32 = 20;
pub const SWEEP_ITERATIONS: u32 = 25_000;

pub const SHARD_SIZE_HEADER: &str = "N,m,F,f,repetitions,iterations,required_r,status,probes,seed";

fn write_csv(out: &Path, body: &str) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(out, body).with_context(|| format!("writing {}", out.display()))
}

pub fn shard_size(inv: &Invocation, out: &Path) -> Result<(Vec<PathBuf>, bool)> {
    let Params::ShardSize {
        n,
        f,
        model,
        m_factor,
        repetitions,
        iterations,
    } = &inv.params
    else {
        bail!("not a shard-size invocation");
    };
    let mut csv = String::new();
    writeln!(csv, "{SHARD_SIZE_HEADER}")?;
    for &n in n {
        let template = ExperimentConfig {
            m: m_factor * n,
            repetitions: *repetitions,
            iterations: *iterations,
            ..ExperimentConfig::new(n, 1, *f, *model, inv.seed)
        };
        let prefix = format!(
            "{},{},{},{},{},{}",
            n, template.m, f, model, repetitions, iterations
        );
        let row = match find_required_shard_size(&template) {
            Ok(found) => {
                let probes: Vec<String> = found
                    .probes
                    .iter()
                    .map(|p| format!("{}:{}", p.r, if p.clean { "clean" } else { "hit" }))
                    .collect();
                eprintln!("N={n}: r={}", found.r);
                format!("{prefix},{},ok,{},{}", found.r, probes.join(" "), inv.seed)
            }
            Err(e @ ExperimentError::Infeasible { .. }) => {
                eprintln!("N={n}: {e}");
                format!("{prefix},,infeasible,,{}", inv.seed)
            }
            Err(e) => {
                eprintln!("N={n}: {e}");
                format!("{prefix},,invalid,,{}", inv.seed)
            }
        };
        writeln!(csv, "{row}")?;
    }
    write_csv(out, &csv)?;
    Ok((vec![out.to_path_buf()], true))
}

pub fn failure_prob(inv: &Invocation, out: &Path) -> Result<(Vec<PathBuf>, bool)> {
    let Params::FailureProb {
        n,
        m,
        r,
        f,
        model,
        repetitions,
        iterations,
    } = &inv.params
    else {
        bail!("not a failure-prob invocation");
    };
    let mut csv = String::new();
    writeln!(csv, "{}", ComparisonRow::CSV_HEADER)?;
    for &m in m {
        let template = ExperimentConfig {
            m,
            repetitions: *repetitions,
            iterations: *iterations,
            ..ExperimentConfig::new(*n, 1, *f, *model, inv.seed)
        };
        for row in compare_to_analytic(&template, r)? {
            eprintln!(
                "m={m} r={}: observed {:.4e}, analytic {:.4e}",
                row.r, row.observed.failure_probability, row.analytic_m
            );
            writeln!(csv, "{}", row.csv_row())?;
        }
    }
    write_csv(out, &csv)?;
    Ok((vec![out.to_path_buf()], true))
}
