use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use proptest::prelude::*;
use scalegraph::security_sim::{
    failure_probability, hypergeometric_p, run_experiment, ExperimentConfig, FModel, Fraction,
};

/// Pascal's triangle up to `n`, exact.
fn pascal(n: usize) -> Vec<Vec<BigUint>> {
    let mut rows: Vec<Vec<BigUint>> = vec![vec![BigUint::from(1u32)]];
    for i in 1..=n {
        let prev = &rows[i - 1];
        let mut row = vec![BigUint::from(1u32); i + 1];
        for j in 1..i {
            row[j] = &prev[j - 1] + &prev[j];
        }
        rows.push(row);
    }
    rows
}

/// P(at least `threshold` Byzantine members in an `r`-subset), by summing
/// subset counts over every possible Byzantine member count.
fn exact_p(c: &[Vec<BigUint>], n: usize, b: usize, r: usize, threshold: usize) -> BigRational {
    let mut hits = BigUint::zero();
    for x in threshold..=r.min(b) {
        if r - x <= n - b {
            hits += &c[b][x] * &c[n - b][r - x];
        }
    }
    BigRational::new(hits.into(), c[n][r].clone().into())
}

/// The same probability by listing every `r`-subset of `n` nodes where the
/// first `b` are Byzantine.
fn enumerated_p(n: usize, b: usize, r: usize, threshold: usize) -> (u64, u64) {
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0u32..1 << n {
        if mask.count_ones() as usize != r {
            continue;
        }
        total += 1;
        if (mask & ((1 << b) - 1)).count_ones() as usize >= threshold {
            hits += 1;
        }
    }
    (hits, total)
}

fn agree(observed: f64, exact: &BigRational) -> bool {
    let e = exact.to_f64().unwrap();
    if e == 0.0 {
        observed == 0.0
    } else {
        ((observed - e) / e).abs() <= 1e-12
    }
}

#[test]
fn subset_counting_matches_literal_enumeration() {
    let c = pascal(12);
    for n in 1..=12 {
        for b in 0..=n {
            for r in 1..=n {
                for model in [FModel::OneHalf, FModel::OneThird] {
                    let t = model.threshold(r);
                    let (hits, total) = enumerated_p(n, b, r, t);
                    let exact = exact_p(&c, n, b, r, t);
                    assert_eq!(
                        exact,
                        BigRational::new(hits.into(), total.into()),
                        "n={n} b={b} r={r}"
                    );
                }
            }
        }
    }
}

#[test]
fn hypergeometric_matches_rational_oracle_up_to_20() {
    let c = pascal(20);
    for n in 1..=20 {
        for b in 0..=n {
            for r in 1..=n {
                for model in [FModel::OneHalf, FModel::OneThird] {
                    let exact = exact_p(&c, n, b, r, model.threshold(r));
                    let got = hypergeometric_p(n, b, r, model);
                    assert!(
                        agree(got, &exact),
                        "n={n} b={b} r={r} {model}: {got} vs {exact}"
                    );
                }
            }
        }
    }
}

#[test]
fn log_path_tracks_rational_oracle_beyond_exact_range() {
    let c = pascal(400);
    for &(n, b, r) in &[
        (200, 50, 21),
        (300, 75, 41),
        (400, 100, 61),
        (400, 80, 101),
        (250, 125, 31),
    ] {
        for model in [FModel::OneHalf, FModel::OneThird] {
            let exact = exact_p(&c, n, b, r, model.threshold(r)).to_f64().unwrap();
            let got = hypergeometric_p(n, b, r, model);
            assert!(
                ((got - exact) / exact).abs() < 1e-9,
                "n={n} b={b} r={r}: {got} vs {exact}"
            );
        }
    }
}

fn mc(n: usize, f: &str, r: usize, m: usize, iterations: u32, seed: u64) -> (f64, f64) {
    let cfg = ExperimentConfig {
        m,
        repetitions: 20,
        iterations,
        ..ExperimentConfig::new(n, r, f.parse().unwrap(), FModel::OneHalf, seed)
    };
    let res = run_experiment(&cfg).unwrap();
    (res.failure_probability, res.stderr)
}

#[test]
fn monte_carlo_matches_exhaustive_single_shard_networks() {
    // With one shard every r-subset is equally likely to be it.
    let c = pascal(8);
    for &(n, f, b, r) in &[
        (6, "1/3", 2, 3),
        (8, "3/8", 3, 3),
        (8, "1/4", 2, 3),
        (6, "1/2", 3, 5),
    ] {
        let exact = exact_p(&c, n, b, r, FModel::OneHalf.threshold(r))
            .to_f64()
            .unwrap();
        let (p, _) = mc(n, f, r, 1, 5000, 99);
        let se = (exact * (1.0 - exact) / 1e5).sqrt();
        assert!(
            (p - exact).abs() <= 3.0 * se,
            "n={n} b={b} r={r}: {p} vs {exact}"
        );
    }
}

#[test]
fn observed_probability_falls_with_r_and_rises_with_f() {
    let by_r: Vec<(f64, f64)> = [11, 21, 31]
        .iter()
        .map(|&r| mc(300, "1/4", r, 600, 1000, 5))
        .collect();
    for w in by_r.windows(2) {
        assert!(w[1].0 <= w[0].0 + 3.0 * (w[0].1 + w[1].1), "{by_r:?}");
    }
    assert!(by_r[0].0 > by_r[2].0);
    let by_f: Vec<(f64, f64)> = ["1/10", "1/5", "3/10"]
        .iter()
        .map(|f| mc(300, f, 21, 600, 1000, 6))
        .collect();
    for w in by_f.windows(2) {
        assert!(w[0].0 <= w[1].0 + 3.0 * (w[0].1 + w[1].1), "{by_f:?}");
    }
    assert!(by_f[0].0 < by_f[2].0);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = ExperimentConfig {
        repetitions: 6,
        iterations: 1500,
        ..ExperimentConfig::new(400, 21, Fraction::new(1, 4).unwrap(), FModel::OneHalf, 42)
    };
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let a = one.install(|| run_experiment(&cfg).unwrap());
    let b = four.install(|| run_experiment(&cfg).unwrap());
    assert_eq!(a, b);
    let other = run_experiment(&ExperimentConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(a.per_repetition, other.per_repetition);
}

proptest! {
    #[test]
    fn hypergeometric_is_a_probability_increasing_in_b(n in 1usize..400, r_frac in 0.0f64..1.0, b_frac in 0.0f64..1.0) {
        let r = ((n as f64 * r_frac) as usize).clamp(1, n);
        let b = (n as f64 * b_frac) as usize;
        for model in [FModel::OneHalf, FModel::OneThird] {
            let p = hypergeometric_p(n, b, r, model);
            prop_assert!((0.0..=1.0).contains(&p));
            if b < n {
                prop_assert!(hypergeometric_p(n, b + 1, r, model) >= p * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn failure_probability_grows_with_shard_count(p in 0.0f64..1.0, m in 1.0f64..1e6) {
        let a = failure_probability(p, m);
        let b = failure_probability(p, 2.0 * m);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b >= a);
        prop_assert!(a <= (m * p).min(1.0) + 1e-12);
    }
}
