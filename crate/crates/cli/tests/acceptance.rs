//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS or FAIL line.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scalegraph::consensus::{DeadlockPolicy, QuorumRule};
use scalegraph::ident::IdSpace;
use scalegraph::routing::{oracle_closest, TableNetwork, DEFAULT_ALPHA, DEFAULT_K_BUCKET};
use scalegraph::security_sim::{
    analytic_row, find_required_shard_size, hypergeometric_p, run_experiment, ExperimentConfig,
    FModel,
};
use scalegraph::simnet::{
    adversarial_scenario, overdrafts, safety_violations, trace_to_string, Scenario, Sim,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn pascal(n: usize) -> Vec<Vec<BigUint>> {
    let mut rows: Vec<Vec<BigUint>> = vec![vec![BigUint::from(1u32)]];
    for i in 1..=n {
        let mut row = vec![BigUint::from(1u32); i + 1];
        for j in 1..i {
            row[j] = &rows[i - 1][j - 1] + &rows[i - 1][j];
        }
        rows.push(row);
    }
    rows
}

/// Counts `r`-subsets holding at least `t` of the `b` Byzantine nodes.
fn exact_p(c: &[Vec<BigUint>], n: usize, b: usize, r: usize, t: usize) -> BigRational {
    let mut hits = BigUint::zero();
    for x in t..=r.min(b) {
        if r - x <= n - b {
            hits += &c[b][x] * &c[n - b][r - x];
        }
    }
    BigRational::new(hits.into(), c[n][r].clone().into())
}

fn oracle_exactness() -> Outcome {
    let c = pascal(30);
    let mut cases = 0;
    let mut worst = 0.0f64;
    for n in 1..=30 {
        for b in 0..=n {
            for r in 1..=n {
                for model in [FModel::OneHalf, FModel::OneThird] {
                    let exact = exact_p(&c, n, b, r, model.threshold(r)).to_f64().unwrap();
                    let got = hypergeometric_p(n, b, r, model);
                    let err = if exact == 0.0 {
                        if got == 0.0 {
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    } else {
                        ((got - exact) / exact).abs()
                    };
                    worst = worst.max(err);
                    cases += 1;
                }
            }
        }
    }
    ensure(
        worst <= 1e-12,
        format!("{cases} cases, worst relative error {worst:.2e} (limit 1e-12)"),
    )
}

fn monte_carlo_vs_exact() -> Outcome {
    // Every 3-subset of 6 nodes is equally likely to be the single shard, so
    // the network-level probability equals the per-placement one.
    let c = pascal(6);
    let exact = exact_p(&c, 6, 2, 3, FModel::OneHalf.threshold(3));
    let cfg = ExperimentConfig {
        m: 1,
        repetitions: 20,
        iterations: 5000,
        ..ExperimentConfig::new(6, 3, "1/3".parse().unwrap(), FModel::OneHalf, 2024)
    };
    let res = run_experiment(&cfg).unwrap();
    let p = exact.to_f64().unwrap();
    let se = (p * (1.0 - p) / res.total_iterations as f64).sqrt();
    let z = (res.failure_probability - p) / se;
    ensure(
        exact == BigRational::new(1.into(), 5.into()) && z.abs() <= 3.0,
        format!(
            "exact {exact}, observed {:.5} over {} iterations, z = {z:.2} (limit 3)",
            res.failure_probability, res.total_iterations
        ),
    )
}

fn required(n: usize, f: &str, model: FModel, iterations: u32, seed: u64) -> usize {
    let cfg = ExperimentConfig {
        m: 2 * n,
        repetitions: 20,
        iterations,
        ..ExperimentConfig::new(n, 1, f.parse().unwrap(), model, seed)
    };
    find_required_shard_size(&cfg).unwrap().r
}

fn required_shard_sizes() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for iterations in [5000, 500] {
        let a = required(1000, "1/5", FModel::OneHalf, iterations, 1);
        let b = required(1000, "1/4", FModel::OneHalf, iterations, 1);
        ok &= a.abs_diff(61) <= 20 && b.abs_diff(101) <= 20;
        notes.push(format!("20x{iterations}: F=1/5 r={a}, F=1/4 r={b}"));
    }
    ensure(
        ok,
        format!("N=1000 {} (want 61±20 and 101±20)", notes.join("; ")),
    )
}

fn tolerance_ratio() -> Outcome {
    let half = required(2000, "1/4", FModel::OneHalf, 5000, 2);
    let third = required(2000, "1/4", FModel::OneThird, 5000, 2);
    let ratio = third as f64 / half as f64;
    ensure(
        ratio >= 4.0,
        format!("N=2000 F=1/4, 20x5000: r={third} for f<1/3, r={half} for f<1/2, ratio {ratio:.2} (limit 4)"),
    )
}

fn experiment(n: usize, m: usize, r: usize, seed: u64) -> (f64, u64) {
    let cfg = ExperimentConfig {
        m,
        repetitions: 20,
        iterations: 25_000,
        ..ExperimentConfig::new(n, r, "1/4".parse().unwrap(), FModel::OneHalf, seed)
    };
    let res = run_experiment(&cfg).unwrap();
    (res.failure_probability, res.compromised_iterations)
}

fn decreasing_trend() -> Outcome {
    let mut rows = Vec::new();
    for r in (11..=61).step_by(10) {
        let (p, hits) = experiment(2000, 4000, r, 3);
        let (_, _, _, over_r) = analytic_row(2000, 500, r, 4000, FModel::OneHalf);
        rows.push((r, p, hits, over_r));
    }
    let counted: Vec<_> = rows.iter().filter(|x| x.2 > 100).collect();
    let decreasing = counted.windows(2).all(|w| w[1].1 < w[0].1);
    let close = counted
        .iter()
        .all(|x| x.3 / x.1 <= 10.0 && x.1 / x.3 <= 10.0);
    let table: Vec<String> = rows
        .iter()
        .map(|(r, p, h, a)| format!("r={r}: {p:.3e} ({h} hits) vs {a:.3e}"))
        .collect();
    ensure(
        counted.len() >= 2 && decreasing && close,
        format!(
            "{} points over 100 hits, decreasing={decreasing}, within 10x of N/r analytic={close}; {}",
            counted.len(),
            table.join(", ")
        ),
    )
}

fn shard_count_band() -> Outcome {
    let ps: Vec<(usize, f64)> = [1000, 4000, 16000]
        .iter()
        .map(|&m| (m, experiment(4000, m, 61, 4).0))
        .collect();
    let lo = ps.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let hi = ps.iter().map(|x| x.1).fold(0.0, f64::max);
    let table: Vec<String> = ps.iter().map(|(m, p)| format!("m={m}: {p:.3e}")).collect();
    ensure(
        lo >= 0.002 && hi <= 0.006 && hi / lo <= 2.0,
        format!(
            "{}, max/min {:.2} (band [0.002, 0.006], ratio limit 2)",
            table.join(", "),
            hi / lo
        ),
    )
}

fn adversarial_safety() -> Outcome {
    let seeds = 200u64;
    let (mut unsafe_runs, mut overdrawn, mut committed, mut total) = (0, 0, 0, 0);
    for seed in 0..seeds {
        let sc = adversarial_scenario(seed);
        let mut sim = Sim::new(&sc).unwrap();
        let report = sim.run();
        unsafe_runs += usize::from(!safety_violations(&sim).is_empty());
        overdrawn += usize::from(!overdrafts(&sim).is_empty());
        committed += report
            .transactions
            .iter()
            .filter(|t| t.committed_at.is_some())
            .count();
        total += report.transactions.len();
    }
    ensure(
        unsafe_runs == 0 && overdrawn == 0,
        format!(
            "{seeds} scenarios: {unsafe_runs} with conflicting commits, {overdrawn} with overdrafts; {committed}/{total} transactions committed"
        ),
    )
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn bundled(name: &str) -> Scenario {
    let text = std::fs::read_to_string(scenarios_dir().join(format!("{name}.json"))).unwrap();
    Scenario::from_json(&text).unwrap()
}

fn committed(sc: &Scenario, label: &str) -> bool {
    let report = Sim::new(sc).unwrap().run();
    report.outcome(label).unwrap().committed_at.is_some()
}

fn vote_counting_defense() -> Outcome {
    let mut sc = bundled("vote_counting");
    sc.quorum_rule = QuorumRule::PerGroup;
    let per_group = committed(&sc, "overdraft");
    sc.quorum_rule = QuorumRule::NaiveUnion;
    let naive = committed(&sc, "overdraft");
    ensure(
        !per_group && naive,
        format!("invalid transfer committed: per-group={per_group} (want false), naive union={naive} (want true)"),
    )
}

fn liveness_and_recovery() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for policy in [
        DeadlockPolicy::ProactiveOrder,
        DeadlockPolicy::OptimisticTimeout,
    ] {
        let mut sc = bundled("three_cycle");
        sc.deadlock_policy = policy;
        let mut a = Sim::new(&sc).unwrap();
        let report = a.run();
        let mut b = Sim::new(&sc).unwrap();
        b.run();
        let all = report.transactions.iter().all(|t| t.committed_at.is_some());
        let same = trace_to_string(a.trace()) == trace_to_string(b.trace());
        ok &= all && same;
        notes.push(format!(
            "three_cycle {policy:?}: all committed={all}, deterministic={same}"
        ));
    }
    let sc = bundled("crash_leader");
    let report = Sim::new(&sc).unwrap().run();
    let pay = report.outcome("pay").unwrap();
    let views = pay.max_view;
    ok &= pay.committed_at.is_some() && views == 1;
    notes.push(format!(
        "crash_leader: committed={}, view changes={views}",
        pay.committed_at.is_some()
    ));
    ensure(ok, notes.join("; "))
}

fn lookup_correctness() -> Outcome {
    let n = 1000;
    let limit = 4.0 * (n as f64).log2() + 4.0;
    let space = IdSpace::default();
    let (mut lookups, mut mismatches, mut max_rounds) = (0, 0, 0u32);
    for net_seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(net_seed);
        let nodes = space.random_distinct(&mut rng, n, &mut HashSet::new());
        let mut net =
            TableNetwork::fully_populated(&nodes, DEFAULT_K_BUCKET, DEFAULT_ALPHA, &mut rng);
        for _ in 0..5 {
            let from = nodes[rng.gen_range(0..n)];
            let target = space.random(&mut rng);
            let out = net.lookup(&from, &target, DEFAULT_K_BUCKET, true).unwrap();
            lookups += 1;
            mismatches +=
                usize::from(out.nodes != oracle_closest(&nodes, &target, DEFAULT_K_BUCKET));
            max_rounds = max_rounds.max(out.rounds);
        }
    }
    ensure(
        mismatches == 0 && f64::from(max_rounds) <= limit,
        format!("100 networks of {n}, {lookups} lookups: {mismatches} differ from oracle, max rounds {max_rounds} (limit {limit:.1})"),
    )
}

fn cli(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_scalegraph"))
        .args(args)
        .current_dir(dir)
        .env_remove("SCALEGRAPH_SEED")
        .output()
        .unwrap()
}

fn rerun_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scenario = scenarios_dir().join("three_cycle.json");
    let runs: [(&str, Vec<String>); 3] = [
        (
            "shard.csv",
            [
                "--seed",
                "5",
                "--repetitions",
                "4",
                "--iterations",
                "200",
                "shard-size",
                "--n",
                "300",
                "--f",
                "1/5",
            ]
            .map(String::from)
            .to_vec(),
        ),
        (
            "prob.csv",
            [
                "--seed",
                "6",
                "--repetitions",
                "4",
                "--iterations",
                "500",
                "failure-prob",
                "--n",
                "500",
                "--m",
                "1000",
                "--r",
                "21,41",
                "--f",
                "1/4",
            ]
            .map(String::from)
            .to_vec(),
        ),
        (
            "trace.jsonl",
            vec!["protocol".into(), scenario.display().to_string()],
        ),
    ];
    let mut notes = Vec::new();
    let mut ok = true;
    for (out, args) in &runs {
        let mut full: Vec<&str> = vec!["--out", out];
        full.extend(args.iter().map(String::as_str));
        let first = cli(&full, d);
        let manifest = format!("{out}.manifest.json");
        let again = cli(&["rerun", &manifest, "--out-dir", "again", "--verify"], d);
        let a = std::fs::read(d.join(out)).unwrap_or_default();
        let b = std::fs::read(d.join("again").join(out)).unwrap_or_default();
        let same = first.status.success() && again.status.success() && !a.is_empty() && a == b;
        ok &= same;
        notes.push(format!("{out}: {} bytes, identical={same}", a.len()));
    }
    ensure(ok, notes.join("; "))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("1 analytic oracle exactness", oracle_exactness),
        ("2 monte carlo vs exact oracle", monte_carlo_vs_exact),
        ("3 required shard sizes", required_shard_sizes),
        ("4 tolerance model ratio", tolerance_ratio),
        ("5 failure probability trend", decreasing_trend),
        ("6 shard count band", shard_count_band),
        ("7 adversarial safety", adversarial_safety),
        ("8 vote counting defense", vote_counting_defense),
        ("9 liveness and recovery", liveness_and_recovery),
        ("10 lookup correctness", lookup_correctness),
        ("11 rerun determinism", rerun_determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{name}] {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{name}] {detail} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
