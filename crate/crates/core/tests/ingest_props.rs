//! Tensor construction against a brute-force scan of the raw log, and the
//! synthetic presets.

use std::collections::HashSet;

use paratuck_lstm::ingest::{
    build_tensor, read_events_from, synth_interactions, synth_with, write_events_to, Aggregation,
    BinningConfig, EventRecord, Scenario, SynthConfig,
};
use paratuck_lstm::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_log(
    rng: &mut ChaCha8Rng,
    n: usize,
    t_end: i64,
    n_src: usize,
    n_tgt: usize,
) -> Vec<EventRecord> {
    (0..n)
        .map(|_| EventRecord {
            source: format!("s{:02}", rng.random_range(0..n_src)),
            target: format!("t{:02}", rng.random_range(0..n_tgt)),
            timestamp: rng.random_range(-100..t_end + 100),
            // quarter-integers keep sums exact in any order
            value: rng.random_range(0..80) as f64 / 4.0,
        })
        .collect()
}

/// Entry `(i, j, k)` by scanning the whole log.
fn brute_force(events: &[EventRecord], cfg: &BinningConfig, src: &str, tgt: &str, k: usize) -> f64 {
    let span = (cfg.t_end - cfg.t_start) as f64;
    events
        .iter()
        .filter(|e| e.source == src && e.target == tgt)
        .filter(|e| e.timestamp >= cfg.t_start && e.timestamp < cfg.t_end)
        // the bin of t is floor((t - t_start) * K / span), checked by
        // comparing against both edges in exact integer arithmetic
        .filter(|e| {
            let off = (e.timestamp - cfg.t_start) as i128;
            let n = cfg.k_bins as i128;
            let s = span as i128;
            off * n >= k as i128 * s && off * n < (k as i128 + 1) * s
        })
        .map(|e| match cfg.aggregation {
            Aggregation::Count => 1.0,
            Aggregation::Sum => e.value,
        })
        .sum()
}

#[test]
fn five_hundred_events_match_brute_force() {
    for (seed, aggregation) in [
        (1, Aggregation::Sum),
        (2, Aggregation::Count),
        (3, Aggregation::Sum),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = BinningConfig {
            t_start: 0,
            t_end: 997,
            k_bins: 7,
            aggregation,
            top_fraction: 1.0,
        };
        let events = random_log(&mut rng, 500, cfg.t_end, 9, 13);
        let built = build_tensor(&events, &cfg).unwrap();
        let (i_n, j_n, k_n) = built.tensor.dims();
        assert_eq!(k_n, 7);
        for i in 0..i_n {
            for j in 0..j_n {
                for k in 0..k_n {
                    let want = brute_force(&events, &cfg, &built.sources[i], &built.targets[j], k);
                    assert_eq!(built.tensor.get(i, j, k), want, "({i}, {j}, {k})");
                }
            }
        }
    }
}

#[test]
fn full_fraction_keeps_every_windowed_entity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = BinningConfig {
        t_start: 0,
        t_end: 500,
        k_bins: 5,
        aggregation: Aggregation::Count,
        top_fraction: 1.0,
    };
    let events = random_log(&mut rng, 300, cfg.t_end, 15, 15);
    let built = build_tensor(&events, &cfg).unwrap();
    let in_window = |e: &&EventRecord| e.timestamp >= 0 && e.timestamp < 500;
    let sources: HashSet<&String> = events.iter().filter(in_window).map(|e| &e.source).collect();
    let targets: HashSet<&String> = events.iter().filter(in_window).map(|e| &e.target).collect();
    assert_eq!(built.sources.len(), sources.len());
    assert_eq!(built.targets.len(), targets.len());
}

#[test]
fn smaller_fractions_keep_the_most_active() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cfg = BinningConfig {
        t_start: 0,
        t_end: 500,
        k_bins: 3,
        aggregation: Aggregation::Sum,
        top_fraction: 1.0,
    };
    let events = random_log(&mut rng, 400, cfg.t_end, 20, 20);
    let all = build_tensor(&events, &cfg).unwrap();
    cfg.top_fraction = 0.25;
    let top = build_tensor(&events, &cfg).unwrap();
    assert_eq!(
        top.sources.len(),
        (0.25 * all.sources.len() as f64).ceil() as usize
    );
    // ranked lists are prefixes of each other
    assert_eq!(top.sources[..], all.sources[..top.sources.len()]);
    assert_eq!(top.targets[..], all.targets[..top.targets.len()]);
    let activity = |id: &str| {
        events
            .iter()
            .filter(|e| e.timestamp >= 0 && e.timestamp < 500 && e.source == id)
            .count()
    };
    for w in all.sources.windows(2) {
        let (a, b) = (activity(&w[0]), activity(&w[1]));
        assert!(a > b || (a == b && w[0] < w[1]), "{w:?}");
    }
}

#[test]
fn bad_logs_are_rejected() {
    let cfg = BinningConfig {
        t_start: 0,
        t_end: 10,
        k_bins: 2,
        aggregation: Aggregation::Sum,
        top_fraction: 1.0,
    };
    let ev = |t: i64, v: f64| EventRecord {
        source: "a".into(),
        target: "b".into(),
        timestamp: t,
        value: v,
    };
    assert!(matches!(
        build_tensor(&[ev(1, 1.0), ev(2, -0.5)], &cfg),
        Err(Error::NegativeValue { line: 3, .. })
    ));
    assert!(matches!(
        build_tensor(&[ev(10, 1.0), ev(-1, 1.0)], &cfg),
        Err(Error::EmptyAfterFilter)
    ));
    assert!(matches!(
        build_tensor(&[], &cfg),
        Err(Error::EmptyAfterFilter)
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn mass_is_conserved(seed in any::<u64>(), n in 1usize..400, k_bins in 1usize..12,
                         fraction in prop::sample::select(vec![1.0, 0.9, 0.5, 0.2]), sum in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = BinningConfig {
            t_start: -20,
            t_end: rng.random_range(1..2000),
            k_bins,
            aggregation: if sum { Aggregation::Sum } else { Aggregation::Count },
            top_fraction: fraction,
        };
        let events = random_log(&mut rng, n, cfg.t_end, 10, 10);
        match build_tensor(&events, &cfg) {
            Ok(built) => {
                let src: HashSet<&String> = built.sources.iter().collect();
                let tgt: HashSet<&String> = built.targets.iter().collect();
                let total: f64 = events
                    .iter()
                    .filter(|e| e.timestamp >= cfg.t_start && e.timestamp < cfg.t_end)
                    .filter(|e| src.contains(&e.source) && tgt.contains(&e.target))
                    .map(|e| if sum { e.value } else { 1.0 })
                    .sum();
                prop_assert_eq!(built.tensor.sum(), total);
                prop_assert!(built.tensor.is_nonnegative());
            }
            Err(Error::EmptyAfterFilter) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }
}

fn small_config(aggregation: Aggregation, noise: f64) -> SynthConfig {
    let mut cfg = SynthConfig::preset(Scenario::Contracts);
    cfg.senders = 12;
    cfg.receivers = 15;
    cfg.sender_groups = 3;
    cfg.receiver_groups = 4;
    cfg.links_per_group = 2;
    cfg.binning.k_bins = 8;
    cfg.binning.aggregation = aggregation;
    cfg.train_bins = 4;
    cfg.noise = noise;
    cfg
}

#[test]
fn synth_is_deterministic() {
    for aggregation in [Aggregation::Sum, Aggregation::Count] {
        let cfg = small_config(aggregation, 0.1);
        let a = synth_with(&cfg, 9).unwrap();
        let b = synth_with(&cfg, 9).unwrap();
        let c = synth_with(&cfg, 10).unwrap();
        let bytes = |events: &[EventRecord]| {
            let mut buf = Vec::new();
            write_events_to(&mut buf, events, b',').unwrap();
            buf
        };
        assert_eq!(bytes(&a.events), bytes(&b.events));
        assert_eq!(a.truth, b.truth);
        assert_ne!(bytes(&a.events), bytes(&c.events));
        assert_eq!(
            read_events_from(bytes(&a.events).as_slice(), b',').unwrap(),
            a.events
        );
    }
}

#[test]
fn noiseless_logs_have_exact_planted_structure() {
    for aggregation in [Aggregation::Sum, Aggregation::Count] {
        let data = synth_with(&small_config(aggregation, 0.0), 2).unwrap();
        let built = build_tensor(&data.events, &data.binning).unwrap();
        let truth = data.truth_for(&built).unwrap();
        let r = truth.relative_residual(&built.tensor).unwrap();
        assert!(r <= 1e-12, "{aggregation}: {r}");
    }
}

#[test]
fn preset_dimensions() {
    let vod = synth_interactions(Scenario::Vod, 0);
    let built = build_tensor(&vod.events, &vod.binning).unwrap();
    assert_eq!(built.tensor.dims(), (100, 125, 25));
    assert!(vod.events.iter().all(|e| e.value == 1.0));

    let contracts = synth_interactions(Scenario::Contracts, 0);
    let built = build_tensor(&contracts.events, &contracts.binning).unwrap();
    assert_eq!(built.tensor.dims(), (100, 200, 50));
    assert_eq!(contracts.train_bins, 25);
}
