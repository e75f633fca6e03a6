//! Randomized invariants across modules, plus the exhaustive MDS check and
//! the byte-versus-symbolic differential.

use std::collections::HashSet;

use liquidsim_core::advanced::{self, AdvancedParams, AdvancedVariant, EfiRotation, OpKind};
use liquidsim_core::erasure::{Backend, Codec, CodecParams, ObjectData};
use liquidsim_core::failure_gen::{FailureGen, IdentifierModel, SeededRng, TimingModel};
use liquidsim_core::repair::{RepairCounter, Repairer, Trace};
use liquidsim_core::sim::{self, RepairerKind, Scenario, Timing};
use proptest::prelude::*;
use rand::seq::SliceRandom;

/// Divisible by every object count up to 16.
const LCM_1_TO_16: u64 = 720_720;

fn random_object(codec: &Codec, seed: u64) -> ObjectData {
    let mut bytes = vec![0u8; codec.flen_bytes() * codec.params().k as usize];
    SeededRng::new(seed, 0).fill_bytes(&mut bytes);
    ObjectData { object: 0, content: Some(bytes.into()) }
}

fn combinations(n: u32, k: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: u32, n: u32, k: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

fn exhaustive_mds(n: u32, k: u32) {
    let codec = Codec::new(CodecParams::new(n, k, 24).unwrap(), Backend::Byte).unwrap();
    let obj = random_object(&codec, n as u64 * 100 + k as u64);
    let all: Vec<u32> = (0..n).collect();
    let frags = codec.encode(&obj, &all).unwrap();
    let subsets = combinations(n, k as usize);
    for s in &subsets {
        let pick: Vec<_> = s.iter().map(|&e| frags[e as usize].clone()).collect();
        assert_eq!(codec.decode(&pick).unwrap(), obj, "subset {s:?}");
    }
    for s in combinations(n, k as usize - 1) {
        let pick: Vec<_> = s.iter().map(|&e| frags[e as usize].clone()).collect();
        assert!(codec.decode(&pick).is_err(), "subset {s:?}");
    }
}

#[test]
fn mds_every_subset_12_8() {
    exhaustive_mds(12, 8);
}

#[test]
fn mds_every_subset_small_codes() {
    for (n, k) in [(3, 1), (5, 2), (6, 3), (9, 4), (10, 7)] {
        exhaustive_mds(n, k);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn codec_round_trip(k in 1u32..=10, r in 0u32..=6, flen_bytes in 1u64..=12, seed: u64) {
        let n = k + r;
        let codec = Codec::new(CodecParams::new(n, k, flen_bytes * 8).unwrap(), Backend::Byte).unwrap();
        let obj = random_object(&codec, seed);
        let all: Vec<u32> = (0..n).collect();
        let frags = codec.encode(&obj, &all).unwrap();
        let mut order = all.clone();
        order.shuffle(SeededRng::new(seed, 1).rng());
        let pick: Vec<_> = order[..k as usize].iter().map(|&e| frags[e as usize].clone()).collect();
        prop_assert_eq!(&codec.decode(&pick).unwrap(), &obj);
        for target in 0..n {
            prop_assert_eq!(&codec.regenerate(&pick, target).unwrap(), &frags[target as usize]);
        }
        prop_assert!(codec.decode(&pick[..k as usize - 1]).is_err());
    }

    #[test]
    fn rotation_keeps_roles_distinct(nodes in 2u32..40, r in 1u32..20, seq in prop::collection::vec(any::<u32>(), 0..200)) {
        let mut rot = EfiRotation::new(nodes, r);
        for x in seq {
            let i = x % nodes;
            let h0 = rot.helpers[0];
            let fi = rot.primary[i as usize];
            rot.rotate(i);
            prop_assert_eq!(rot.primary[i as usize], h0);
            prop_assert_eq!(*rot.helpers.back().unwrap(), fi);
            prop_assert!(rot.distinct());
            prop_assert_eq!(rot.owner(h0), Some(i));
            prop_assert_eq!(rot.owner(fi), None);
        }
        let all: HashSet<u32> = rot.primary.iter().chain(rot.helpers.iter()).copied().collect();
        prop_assert_eq!(all, (0..nodes + r).collect::<HashSet<_>>());
    }

    #[test]
    fn same_node_rotated_r_plus_one_times_restores_helpers(nodes in 2u32..20, r in 1u32..10, i in 0u32..20) {
        let i = i % nodes;
        let mut rot = EfiRotation::new(nodes, r);
        let start = rot.clone();
        for _ in 0..=r {
            rot.rotate(i);
        }
        prop_assert_eq!(rot.primary, start.primary);
        prop_assert_eq!(rot.helpers, start.helpers);
    }

    #[test]
    fn counter_tracks_cap_and_min(cap in 0i64..10, ops in prop::collection::vec(any::<bool>(), 0..200)) {
        let mut c = RepairCounter::new(cap);
        let mut min = cap;
        for fail in ops {
            let before = c.value();
            if fail {
                c.on_failure();
                prop_assert_eq!(c.value(), before - 1);
            } else {
                c.on_complete();
                prop_assert_eq!(c.value(), (before + 1).min(cap));
            }
            min = min.min(c.value());
            prop_assert!(c.value() <= cap);
            prop_assert_eq!(c.min(), min);
            prop_assert_eq!(c.busy(), c.value() < cap);
        }
    }

    #[test]
    fn failure_streams_are_ordered_and_in_range(nodes in 2u32..50, seed: u64, poisson: bool) {
        let timing = if poisson {
            TimingModel::Poisson { lambda: 0.3, nodes }
        } else {
            TimingModel::Periodic { period: 0.5 }
        };
        let gen = FailureGen::new(timing, IdentifierModel::Uniform, nodes, SeededRng::new(seed, 0)).unwrap();
        let events: Vec<_> = gen.take(300).collect();
        prop_assert!(events.windows(2).all(|w| w[1].time > w[0].time));
        prop_assert!(events.iter().all(|e| e.node < nodes));
        let again: Vec<_> =
            FailureGen::new(timing, IdentifierModel::Uniform, nodes, SeededRng::new(seed, 0)).unwrap().take(300).collect();
        prop_assert_eq!(events, again);
    }

    #[test]
    fn distinct_phase_blocks_have_no_repeats(nodes in 4u32..40, m in 1u32..40, seed: u64) {
        let m = 1 + m % (nodes / 2).max(1);
        let ids = IdentifierModel::DistinctPhase { m };
        let gen = FailureGen::new(TimingModel::Periodic { period: 1.0 }, ids, nodes, SeededRng::new(seed, 0)).unwrap();
        let events: Vec<_> = gen.take(m as usize * 10).collect();
        for block in events.chunks(m as usize) {
            let distinct: HashSet<_> = block.iter().map(|e| e.node).collect();
            prop_assert_eq!(distinct.len(), block.len());
        }
    }
}

fn liquid_periodic(nodes: u32, r: u32, clen: u64, backend: Backend, failures: u64, seed: u64) -> Scenario {
    let mut sc =
        Scenario::new(nodes, clen, r as f64 / nodes as f64, RepairerKind::Liquid, Timing::Periodic { period: 1.0 });
    sc.backend = backend;
    sc.failures = failures;
    sc.seed = seed;
    sc
}

fn liquid_poisson(nodes: u32, r: u32, eps: f64, clen: u64, backend: Backend, failures: u64, seed: u64) -> Scenario {
    let mut sc = Scenario::new(nodes, clen, r as f64 / nodes as f64, RepairerKind::Liquid, Timing::Poisson);
    sc.eps.eps = eps;
    sc.backend = backend;
    sc.failures = failures;
    sc.seed = seed;
    sc
}

fn advanced_scenario(
    nodes: u32,
    r: u32,
    timing: Timing,
    eps: f64,
    backend: Backend,
    failures: u64,
    seed: u64,
) -> Scenario {
    let clen = advanced::fragments_per_node(nodes, r) * if backend == Backend::Byte { 8 } else { 1 };
    let beta = (r + 3) as f64 / (2 * nodes + r + 1) as f64;
    let mut sc = Scenario::new(nodes, clen, beta, RepairerKind::Advanced, timing);
    sc.r = Some(r);
    sc.eps.eps = eps;
    sc.backend = backend;
    sc.failures = failures;
    sc.seed = seed;
    sc
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn liquid_periodic_reads_exactly_k_clen(nodes in 4u32..=30, r in 1u32..=15, seed: u64) {
        let r = 1 + r % (nodes / 2);
        let clen = LCM_1_TO_16;
        let sc = liquid_periodic(nodes, r, clen, Backend::Symbolic, 60, seed);
        let t = sim::run_trial(&sc, 0).unwrap();
        prop_assert!(t.recoverable);
        prop_assert_eq!(t.failures, 60);
        prop_assert_eq!(t.bits_read, 60 * (nodes - r) as u128 * (clen / r as u64) as u128);
        prop_assert!(t.bits_written <= 60 * clen as u128);
    }

    #[test]
    fn advanced_periodic_counts_and_storage(nodes in 3u32..=14, r in 1u32..=6, seed: u64) {
        let clen = advanced::fragments_per_node(nodes, r);
        let p = AdvancedParams { nodes, clen, r, variant: AdvancedVariant::Periodic, backend: Backend::Symbolic };
        let mut rep = advanced::advanced_store(p, &mut SeededRng::new(seed, 1 << 63)).unwrap();
        rep.record_ops();
        let gen = FailureGen::new(TimingModel::Periodic { period: 1.0 }, IdentifierModel::Uniform, nodes, SeededRng::new(seed, 0)).unwrap();
        let mut trace = Trace::default();
        let (n, rr) = (nodes as u64, r as u64);
        let bound = advanced::periodic_read_bound(nodes, r, clen as f64);
        for ev in gen.take(40) {
            rep.on_failure(ev, &mut trace).unwrap();
            prop_assert!(rep.check_invariants().is_ok(), "{:?}", rep.check_invariants());
            prop_assert!(rep.cluster().recoverable());
            prop_assert!(rep.efis().distinct());
            for node in 0..nodes {
                prop_assert_eq!(rep.cluster().store(node).used_bits(), clen);
            }
            prop_assert!(rep.steps().last().unwrap().bits_read as f64 <= bound + 1e-9);
        }
        for op in rep.ops() {
            let want = match op.kind {
                OpKind::Generate => ((n - 1) * rr, rr * (rr + 1) / 2),
                OpKind::Move => (rr, rr),
                OpKind::Update => (n - 1, rr),
            };
            prop_assert_eq!((op.counts.reads, op.counts.writes), want);
        }
        // Moves and updates run for every node, the repaired one included.
        prop_assert_eq!(rep.ops().len() as u64, 40 * (1 + 2 * n));
    }

    #[test]
    fn liquid_poisson_detectors_agree(nodes in 10u32..=40, r in 2u32..=16, eps in 0.05f64..0.9, seed: u64) {
        let r = r.min(nodes / 2);
        let sc = liquid_poisson(nodes, r, eps, LCM_1_TO_16, Backend::Symbolic, 400, seed);
        prop_assume!(sc.validate().is_ok());
        let t = sim::run_trial(&sc, 0).unwrap();
        // Only this direction is sound: rounding slack and repeat failures of
        // nodes already missing the front object let b(t) < 0 without loss.
        if t.counter_verdict() == Some(true) {
            prop_assert!(t.recoverable);
        }
        if t.recoverable {
            prop_assert_eq!(t.failures, 400);
        } else {
            prop_assert!(t.first_loss_time.is_some());
        }
    }

    #[test]
    fn advanced_poisson_detectors_agree(nodes in 6u32..=20, r in 1u32..=5, eps in 0.1f64..0.8, seed: u64) {
        let sc = advanced_scenario(nodes, r, Timing::Poisson, eps, Backend::Symbolic, 150, seed);
        prop_assume!(sc.validate().is_ok());
        let t = sim::run_trial(&sc, 0).unwrap();
        if t.counter_verdict() == Some(true) {
            prop_assert!(t.recoverable);
        }
        prop_assert!(t.counter_min.is_some());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn byte_and_symbolic_meter_identically(seed: u64) {
        let scenarios = [
            liquid_periodic(10, 2, 8000, Backend::Byte, 60, seed),
            liquid_poisson(20, 5, 0.4, 320, Backend::Byte, 200, seed),
            advanced_scenario(10, 3, Timing::Periodic { period: 1.0 }, 0.1, Backend::Byte, 30, seed),
            advanced_scenario(10, 3, Timing::Poisson, 0.2, Backend::Byte, 80, seed),
        ];
        for byte in scenarios {
            byte.validate().unwrap();
            let mut symbolic = byte.clone();
            symbolic.backend = Backend::Symbolic;
            for stream in 0..2 {
                let a = sim::run_trial(&byte, stream).unwrap();
                let b = sim::run_trial(&symbolic, stream).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn repair_disabled_loses_data_at_the_census_failure() {
    let mut sc = liquid_poisson(20, 5, 0.4, 320, Backend::Symbolic, 500, 8);
    sc.step_duration = Some(f64::INFINITY);
    let t = sim::run_trial(&sc, 0).unwrap();
    assert!(!t.recoverable);
    assert_eq!(t.bits_read, 0);
    assert!(t.first_loss_time.unwrap().is_finite());
    assert_eq!(t.counter_verdict(), Some(false));
}

#[test]
fn parallel_trials_match_sequential() {
    let mut sc = liquid_poisson(20, 5, 0.4, 320, Backend::Byte, 300, 21);
    sc.trials = 12;
    let one = serde_json::to_string(&sim::run_experiment(&sc, Some(1)).unwrap().trials).unwrap();
    let four = serde_json::to_string(&sim::run_experiment(&sc, Some(4)).unwrap().trials).unwrap();
    assert_eq!(one, four);
    let seq: Vec<_> = (0..12).map(|t| sim::run_trial(&sc, t).unwrap()).collect();
    assert_eq!(one, serde_json::to_string(&seq).unwrap());
}

#[test]
fn zero_failures_read_nothing() {
    for sc in [
        liquid_periodic(10, 2, 8000, Backend::Byte, 0, 1),
        advanced_scenario(10, 3, Timing::Periodic { period: 1.0 }, 0.1, Backend::Symbolic, 0, 1),
    ] {
        let t = sim::run_trial(&sc, 0).unwrap();
        assert!(t.recoverable);
        assert_eq!((t.bits_read, t.failures), (0, 0));
    }
}
