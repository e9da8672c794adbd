use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use scalegraph::simnet::{write_trace, Scenario, Sim};

pub fn load(path: &Path) -> Result<Scenario> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Scenario::from_json(&text).with_context(|| format!("scenario {}", path.display()))
}

/// Runs the scenario, writes the trace (and optional report), prints one
/// line per check. Returns whether every check passed.
pub fn run(scenario: &Scenario, out: &Path, report: Option<&Path>) -> Result<(Vec<PathBuf>, bool)> {
    let mut sim = Sim::new(scenario).context("building the simulation")?;
    let result = sim.run();
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut writer = BufWriter::new(file);
    write_trace(sim.trace(), &mut writer)?;
    writer.flush()?;
    let mut outputs = vec![out.to_path_buf()];
    if let Some(path) = report {
        let mut json = serde_json::to_string_pretty(&result)?;
        json.push('\n');
        std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
        outputs.push(path.to_path_buf());
    }
    println!(
        "scenario {} seed {}: {} events, ended by {} at t={}",
        result.name, result.seed, result.events, result.end_reason, result.end_time
    );
    for tx in &result.transactions {
        match tx.latency {
            Some(l) => println!(
                "  tx {} committed after {l} (view {})",
                tx.label, tx.max_view
            ),
            None => println!("  tx {} not committed (view {})", tx.label, tx.max_view),
        }
    }
    for check in &result.checks {
        println!(
            "{} {}: {}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.detail
        );
    }
    Ok((outputs, result.passed()))
}
