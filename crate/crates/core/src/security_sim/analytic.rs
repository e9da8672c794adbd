use statrs::function::gamma::ln_gamma;

use super::model::FModel;

/// Largest population for which every binomial coefficient fits in `u128`.
const EXACT_LIMIT: usize = 120;

fn binom_u128(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

fn ln_binom(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Probability that a uniformly drawn `r`-subset of `n` nodes, `b` of them
/// Byzantine, holds at least the model's compromise threshold.
pub fn hypergeometric_p(n: usize, b: usize, r: usize, model: FModel) -> f64 {
    assert!(b <= n && r <= n, "need b <= n and r <= n");
    let lo = model.threshold(r).max(r.saturating_sub(n - b));
    let hi = r.min(b);
    if lo > hi {
        return 0.0;
    }
    if n <= EXACT_LIMIT {
        let num: u128 = (lo..=hi)
            .map(|k| binom_u128(b, k) * binom_u128(n - b, r - k))
            .sum();
        return num as f64 / binom_u128(n, r) as f64;
    }
    let total = ln_binom(n, r);
    let logs: Vec<f64> = (lo..=hi)
        .map(|k| ln_binom(b, k) + ln_binom(n - b, r - k) - total)
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    (max + sum.ln()).exp().min(1.0)
}

/// `1 - (1 - p)^m` without cancellation for tiny `p`.
pub fn failure_probability(p: f64, m: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "p out of range");
    if p == 1.0 {
        return if m > 0.0 { 1.0 } else { 0.0 };
    }
    -(m * (-p).ln_1p()).exp_m1()
}
