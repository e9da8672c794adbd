use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scalegraph::simnet::{
    adversarial_scenario, late_deliveries, overdrafts, safety_violations, sluggish_delay,
    trace_to_string, Latency, Scenario, Sim, SimReport, TraceEvent, DEFAULT_DELTA,
    DEFAULT_MAX_LATENCY, DEFAULT_MIN_LATENCY,
};

fn run(json: &str) -> (Sim, SimReport) {
    let mut sim = Sim::from_json(json).unwrap();
    let report = sim.run();
    (sim, report)
}

fn events<'a>(
    sim: &'a Sim,
    pred: impl Fn(&TraceEvent) -> bool + 'a,
) -> impl Iterator<Item = &'a TraceEvent> + 'a {
    sim.trace()
        .iter()
        .map(|r| &r.event)
        .filter(move |e| pred(e))
}

#[test]
fn latency_samples_have_the_uniform_mean_and_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lat = Latency::default();
    let n = 100_000;
    let mut sum = 0u64;
    for _ in 0..n {
        let d = lat.sample(&mut rng);
        assert!((DEFAULT_MIN_LATENCY..=DEFAULT_MAX_LATENCY).contains(&d));
        sum += d;
    }
    let mean = sum as f64 / n as f64;
    let expected = (DEFAULT_MIN_LATENCY + DEFAULT_MAX_LATENCY) as f64 / 2.0;
    assert!((mean - expected).abs() / expected < 0.05, "{mean}");
    for _ in 0..10_000 {
        let s = sluggish_delay(DEFAULT_DELTA, 3 * DEFAULT_DELTA, &mut rng);
        assert!(s > DEFAULT_DELTA && s <= 3 * DEFAULT_DELTA);
    }
}

const HONEST: &str = r#"{
  "name": "honest", "seed": 7, "nodes": 48, "r": 4,
  "accounts": [{"name": "alice"}, {"name": "bob"}],
  "transactions": [{"label": "pay", "at": 0, "from": "alice", "to": "bob", "amount": 100}],
  "assertions": {"committed": "all", "all_honest_commit": true, "prompt_delivery": true, "view_changes": {"max": 0}}
}"#;

#[test]
fn honest_commit_lands_after_the_two_delta_wait() {
    for seed in 0..10u64 {
        let mut sc = Scenario::from_json(HONEST).unwrap();
        sc.seed = seed;
        let mut sim = Sim::new(&sc).unwrap();
        let report = sim.run();
        assert!(report.passed(), "{:?}", report.checks);
        let latency = report.outcome("pay").unwrap().latency.unwrap();
        assert!(latency > 2 * DEFAULT_DELTA, "seed {seed}: {latency}");
        assert!(
            latency <= 2 * DEFAULT_DELTA + 8 * DEFAULT_MAX_LATENCY,
            "seed {seed}: {latency}"
        );
        assert_eq!(late_deliveries(&sim), 0);
    }
}

#[test]
fn same_seed_gives_identical_traces() {
    let (a, ra) = run(HONEST);
    let (b, rb) = run(HONEST);
    assert_eq!(trace_to_string(a.trace()), trace_to_string(b.trace()));
    assert_eq!(ra, rb);
    let mut sc = Scenario::from_json(HONEST).unwrap();
    sc.seed = 8;
    let mut c = Sim::new(&sc).unwrap();
    c.run();
    assert_ne!(trace_to_string(a.trace()), trace_to_string(c.trace()));
}

#[test]
fn empty_script_ends_quietly() {
    let (sim, report) = run(r#"{"nodes": 16, "accounts": [{"name": "a"}]}"#);
    assert!(report.passed());
    assert!(report.transactions.is_empty());
    assert_eq!(
        events(&sim, |e| matches!(e, TraceEvent::Commit { .. })).count(),
        0
    );
    assert!(matches!(
        sim.trace().last().unwrap().event,
        TraceEvent::End { .. }
    ));
}

#[test]
fn stale_tip_leader_is_rejected_and_replaced() {
    let (sim, report) = run(r#"{
      "seed": 4, "nodes": 48, "r": 4,
      "accounts": [{"name": "alice"}, {"name": "bob"}],
      "faults": [{"node": {"closest_to": "alice", "rank": 0}, "behavior": {"kind": "byzantine", "strategy": "stale-tip"}}],
      "transactions": [
        {"label": "first", "at": 0, "from": "alice", "to": "bob", "amount": 10},
        {"label": "second", "at": 2000000, "from": "alice", "to": "bob", "amount": 10}
      ],
      "assertions": {"committed": "all"}
    }"#);
    assert!(report.passed(), "{:?}", report.checks);
    assert!(
        events(
            &sim,
            |e| matches!(e, TraceEvent::Reject { reason, .. } if reason == "stale-parent")
        )
        .count()
            > 0
    );
    assert!(report.outcome("second").unwrap().max_view >= 1);
}

#[test]
fn disjoint_transactions_run_in_parallel() {
    let solo = |from: &str, to: &str| {
        let json = format!(
            r#"{{"seed": 9, "nodes": 64, "r": 4,
              "accounts": [{{"name": "a"}}, {{"name": "b"}}, {{"name": "c"}}, {{"name": "d"}}],
              "transactions": [{{"label": "t", "at": 0, "from": "{from}", "to": "{to}", "amount": 5}}]}}"#
        );
        let (_, r) = run(&json);
        r.outcome("t").unwrap().latency.unwrap()
    };
    let sequential = solo("a", "b") + solo("c", "d");
    let (_, both) = run(r#"{"seed": 9, "nodes": 64, "r": 4,
          "accounts": [{"name": "a"}, {"name": "b"}, {"name": "c"}, {"name": "d"}],
          "transactions": [
            {"label": "ab", "at": 0, "from": "a", "to": "b", "amount": 5},
            {"label": "cd", "at": 0, "from": "c", "to": "d", "amount": 5}
          ],
          "assertions": {"committed": "all"}}"#);
    assert!(both.passed());
    let last = both
        .transactions
        .iter()
        .filter_map(|t| t.committed_at)
        .max()
        .unwrap();
    assert!(last < sequential, "{last} vs {sequential}");
}

#[test]
fn three_cycle_commits_under_both_policies() {
    for policy in ["proactive-order", "optimistic-timeout"] {
        for seed in [11u64, 12, 13] {
            let json = format!(
                r#"{{"seed": {seed}, "nodes": 64, "r": 4, "deadlock_policy": "{policy}",
                  "accounts": [{{"name": "a"}}, {{"name": "b"}}, {{"name": "c"}}],
                  "transactions": [
                    {{"label": "ab", "at": 0, "from": "a", "to": "b", "amount": 10}},
                    {{"label": "bc", "at": 0, "from": "b", "to": "c", "amount": 20}},
                    {{"label": "ca", "at": 0, "from": "c", "to": "a", "amount": 30}}
                  ],
                  "assertions": {{"committed": "all", "all_honest_commit": true}}}}"#
            );
            let (_, report) = run(&json);
            assert!(report.passed(), "{policy} seed {seed}: {:?}", report.checks);
        }
    }
}

#[test]
fn crashed_leader_costs_exactly_one_view_change() {
    let (sim, report) = run(r#"{"seed": 5, "nodes": 64, "r": 4,
          "accounts": [{"name": "alice"}, {"name": "bob"}],
          "faults": [{"node": {"closest_to": "alice", "rank": 0}, "behavior": {"kind": "crash", "at": 0}}],
          "transactions": [{"label": "pay", "at": 1000, "from": "alice", "to": "bob", "amount": 100}],
          "assertions": {"committed": "all", "all_honest_commit": true}}"#);
    assert!(report.passed(), "{:?}", report.checks);
    assert_eq!(report.outcome("pay").unwrap().max_view, 1);
    assert!(events(&sim, |e| matches!(e, TraceEvent::Crash { .. })).count() == 1);
}

#[test]
fn equivocation_is_detected_and_survived() {
    let (sim, report) = run(r#"{"seed": 3, "nodes": 64, "r": 5,
          "accounts": [{"name": "alice"}, {"name": "bob"}],
          "faults": [{"node": {"closest_to": "alice", "rank": 0}, "behavior": {"kind": "byzantine", "strategy": "equivocate"}}],
          "transactions": [{"label": "pay", "at": 0, "from": "alice", "to": "bob", "amount": 100}],
          "assertions": {"committed": "all"}}"#);
    assert!(report.passed(), "{:?}", report.checks);
    assert!(events(&sim, |e| matches!(e, TraceEvent::Equivocation { .. })).count() > 0);
    assert!(report.outcome("pay").unwrap().max_view >= 1);
}

#[test]
fn sluggish_sender_messages_exceed_the_bound() {
    let (sim, report) = run(r#"{"seed": 2, "nodes": 32, "r": 4,
          "accounts": [{"name": "alice"}, {"name": "bob"}],
          "faults": [{"node": {"closest_to": "alice", "rank": 1}, "behavior": {"kind": "sluggish", "intervals": [[0, 100000000]]}}],
          "transactions": [{"label": "pay", "at": 0, "from": "alice", "to": "bob", "amount": 100}],
          "assertions": {"committed": "all"}}"#);
    assert!(report.passed(), "{:?}", report.checks);
    let slow = sim.sluggish_nodes();
    let mut seen = 0;
    for rec in sim.trace() {
        if let TraceEvent::Deliver {
            from, to, sent_at, ..
        } = &rec.event
        {
            if slow.contains(from) && from != to {
                seen += 1;
                assert!(
                    rec.t - sent_at > DEFAULT_DELTA && rec.t - sent_at <= 3 * DEFAULT_DELTA,
                    "{:?} at {}",
                    rec.event,
                    rec.t
                );
            }
        }
    }
    assert!(seen > 0);
}

#[test]
fn adversarial_runs_stay_safe() {
    for seed in 0..40u64 {
        let sc = adversarial_scenario(seed);
        let mut sim = Sim::new(&sc).unwrap();
        let report = sim.run();
        assert!(safety_violations(&sim).is_empty(), "seed {seed}");
        assert!(overdrafts(&sim).is_empty(), "seed {seed}");
        assert!(report.passed(), "seed {seed}: {:?}", report.checks);
    }
}

#[test]
fn adversarial_generator_is_deterministic_and_bounded() {
    for seed in 0..20u64 {
        let a = adversarial_scenario(seed);
        assert_eq!(a, adversarial_scenario(seed));
        assert!(a.faults.len() <= a.accounts.len() * (a.r / 2));
    }
}
