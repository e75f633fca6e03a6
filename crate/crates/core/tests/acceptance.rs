//! Acceptance criteria, one test per criterion. Each prints a single
//! `criterion <id>: PASS|FAIL` line straight to stdout so the verdicts show
//! even when libtest captures output.

use std::io::Write;
use std::time::{Duration, Instant};

use liquidsim_core::advanced::{self, AdvancedParams, AdvancedVariant, OpKind};
use liquidsim_core::bounds::{self, core_bounds, derive_phase_params, lni, EpsilonSet, SystemParams};
use liquidsim_core::erasure::{Backend, Codec, CodecError, CodecParams, ObjectData};
use liquidsim_core::failure_gen::{FailureGen, IdentifierModel, SeededRng, TimingModel};
use liquidsim_core::liquid::{self, LiquidParams, LiquidVariant};
use liquidsim_core::repair::{Repairer, Trace};
use liquidsim_core::sim::{self, report, RepairerKind, Scenario, Timing};
use rand::seq::index::sample;

const C1_EPS_C_LOW: f64 = 0.1;
const C1_EPS_C_HIGH: f64 = 0.2;
const C1_BOUND_LOW: f64 = 3e-7;
const C1_BOUND_HIGH: f64 = 2e-39;
const C1_LIMIT: Duration = Duration::from_secs(1);

const C2_FAILURES: usize = 10_000;
const C2_LIMIT: Duration = Duration::from_secs(60);

const C3_FAILURES: usize = 1_000;
const C3_LIMIT: Duration = Duration::from_secs(60);

const C4_FAILURES: usize = 10;
const C4_REL_TOL: f64 = 0.10;
const C4_LIMIT: Duration = Duration::from_secs(120);

const C5_TRIALS: u32 = 100;
const C5_FAILURES: u64 = 10_000;
/// Relative float slack on the peak-rate ceiling.
const C5_RATE_SLACK: f64 = 1e-12;

const C6_BETAS: [f64; 3] = [0.05, 0.02, 0.01];
const C6_NODES: u32 = 100_000;
const C6_MAX_RATIO: f64 = 1.25;
const C6_LIMIT: Duration = Duration::from_secs(1);

const C7_SUBSETS: usize = 10_000;
const C7_LIMIT: Duration = Duration::from_secs(30);

const C8_TRIALS: u64 = 100_000;
const C8_REL_TOL: f64 = 0.01;
const C8_TARGET: f64 = 10.0 / 9.0 + 10.0 / 8.0;
const C8_LIMIT: Duration = Duration::from_secs(30);

fn verdict(id: &str, pass: bool, detail: &str, elapsed: Duration) {
    let line =
        format!("criterion {id}: {} {detail} ({:.3} s)\n", if pass { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {id} failed: {detail}");
}

/// N = 1e5, clen = 1e16, vlen = 1e13 and xlen chosen so that F = 1e4.
fn c1_system() -> SystemParams {
    let (n, clen, vlen) = (100_000u64, 10u128.pow(16), 10u128.pow(13));
    let xlen = 90_000 * clen + vlen + 1;
    SystemParams::new(n, clen, xlen, vlen, 1.0).unwrap()
}

fn c1_delta_core(eps_c: f64) -> f64 {
    let sys = c1_system();
    let phase = derive_phase_params(&sys).unwrap();
    assert_eq!(phase.f, 10_000);
    assert_eq!(phase.beta_prime, 0.1);
    let eps = EpsilonSet { eps_c, ..EpsilonSet::default() };
    core_bounds(&phase, sys.clen, &eps).delta_core.value
}

#[test]
fn criterion_1a_core_bound_eps_c_low() {
    let start = Instant::now();
    let d = c1_delta_core(C1_EPS_C_LOW);
    let el = start.elapsed();
    verdict(
        "1a",
        d <= C1_BOUND_LOW && el < C1_LIMIT,
        &format!("delta_c(eps_c = {C1_EPS_C_LOW}) = {d:.5e}, required <= {C1_BOUND_LOW:e}"),
        el,
    );
}

#[test]
fn criterion_1b_core_bound_eps_c_high() {
    let start = Instant::now();
    let d = c1_delta_core(C1_EPS_C_HIGH);
    let el = start.elapsed();
    verdict(
        "1b",
        d <= C1_BOUND_HIGH && el < C1_LIMIT,
        &format!("delta_c(eps_c = {C1_EPS_C_HIGH}) = {d:.5e}, required <= {C1_BOUND_HIGH:e}"),
        el,
    );
}

#[test]
fn criterion_2_liquid_periodic_exactness() {
    let start = Instant::now();
    let clen = 1_000_000u64;
    let p = LiquidParams {
        nodes: 100,
        clen,
        beta: 0.1,
        variant: LiquidVariant::Periodic,
        backend: Backend::Byte,
        step_duration: None,
    };
    let mut rep = liquid::liquid_store(p, &mut SeededRng::new(2, 1 << 63)).unwrap();
    assert_eq!((rep.layout().k, rep.layout().r), (90, 10));
    let gen =
        FailureGen::new(TimingModel::Periodic { period: 1.0 }, IdentifierModel::Uniform, 100, SeededRng::new(2, 0))
            .unwrap();
    let mut trace = Trace::default();
    let mut bad = Vec::new();
    for ev in gen.take(C2_FAILURES) {
        rep.on_failure(ev, &mut trace).unwrap();
        let s = *rep.steps().last().unwrap();
        if !rep.cluster().recoverable() || s.bits_read != 9_000_000 || s.bits_written > clen as u128 {
            bad.push(ev.time);
        }
        if let Err(e) = rep.check_invariants() {
            panic!("invariant at {}: {e}", ev.time);
        }
    }
    let census = rep.census();
    let el = start.elapsed();
    let pass = bad.is_empty() && census.recoverable() && census.corrupted.is_empty() && el < C2_LIMIT;
    verdict(
        "2",
        pass,
        &format!("{} steps, {} off-target, final decode ok = {}", rep.steps().len(), bad.len(), census.recoverable()),
        el,
    );
}

#[test]
fn criterion_3_advanced_periodic_exactness() {
    let start = Instant::now();
    let (nodes, r) = (100u32, 20u32);
    let clen = advanced::fragments_per_node(nodes, r);
    let p = AdvancedParams { nodes, clen, r, variant: AdvancedVariant::Periodic, backend: Backend::Symbolic };
    let mut rep = advanced::advanced_store(p, &mut SeededRng::new(3, 1 << 63)).unwrap();
    assert!((rep.layout().beta() - 23.0 / 221.0).abs() < 1e-15);
    rep.record_ops();
    rep.check_invariants().unwrap();
    let gen =
        FailureGen::new(TimingModel::Periodic { period: 1.0 }, IdentifierModel::Uniform, nodes, SeededRng::new(3, 0))
            .unwrap();
    let mut trace = Trace::default();
    let mut census_failures = 0;
    for ev in gen.take(C3_FAILURES) {
        rep.on_failure(ev, &mut trace).unwrap();
        if rep.check_invariants().is_err() || !rep.cluster().recoverable() {
            census_failures += 1;
        }
    }
    let (n, rr) = (nodes as u64, r as u64);
    let want = |k: OpKind| match k {
        OpKind::Generate => ((n - 1) * rr, rr * (rr + 1) / 2),
        OpKind::Move => (rr, rr),
        OpKind::Update => (n - 1, rr),
    };
    let bad_ops = rep.ops().iter().filter(|o| (o.counts.reads, o.counts.writes) != want(o.kind)).count();
    let bound = advanced::periodic_read_bound(nodes, r, clen as f64);
    let over = rep.steps().iter().filter(|s| s.bits_read as f64 > bound).count();
    let el = start.elapsed();
    let pass =
        census_failures == 0 && bad_ops == 0 && over == 0 && rep.ops().len() == C3_FAILURES * 201 && el < C3_LIMIT;
    verdict(
        "3",
        pass,
        &format!(
            "{} ops ({bad_ops} off-count), {over} steps over {bound:.1} bits, {census_failures} census failures",
            rep.ops().len()
        ),
        el,
    );
}

#[test]
fn criterion_4_advanced_large_n() {
    let start = Instant::now();
    let nodes = 1000u32;
    let beta = 0.1;
    let r = advanced::default_r(nodes, beta, AdvancedVariant::Periodic);
    let clen = advanced::fragments_per_node(nodes, r);
    let p = AdvancedParams { nodes, clen, r, variant: AdvancedVariant::Periodic, backend: Backend::Symbolic };
    let mut rep = advanced::advanced_store(p, &mut SeededRng::new(4, 1 << 63)).unwrap();
    let gen =
        FailureGen::new(TimingModel::Periodic { period: 1.0 }, IdentifierModel::Uniform, nodes, SeededRng::new(4, 0))
            .unwrap();
    let mut trace = Trace::default();
    for ev in gen.take(C4_FAILURES) {
        rep.on_failure(ev, &mut trace).unwrap();
        rep.check_invariants().unwrap();
    }
    let steps = rep.steps();
    let read = steps.iter().map(|s| s.bits_read as f64).sum::<f64>() / steps.len() as f64;
    let written = steps.iter().map(|s| s.bits_written as f64).sum::<f64>() / steps.len() as f64;
    let read_ref = advanced::asymptotic_read_bits(beta, clen as f64);
    let write_ref = advanced::asymptotic_write_bits(beta, clen as f64);
    let (re, we) = ((read / read_ref - 1.0).abs(), (written / write_ref - 1.0).abs());
    let el = start.elapsed();
    verdict(
        "4",
        re <= C4_REL_TOL && we <= C4_REL_TOL && el < C4_LIMIT,
        &format!(
            "r = {r}: read {:.4} clen (ref {:.4}, off {:.2}%), write {:.4} clen (ref {:.4}, off {:.2}%)",
            read / clen as f64,
            read_ref / clen as f64,
            100.0 * re,
            written / clen as f64,
            write_ref / clen as f64,
            100.0 * we
        ),
        el,
    );
}

fn c5_scenario() -> Scenario {
    let mut sc = Scenario::new(100, 18 * 8, 0.2, RepairerKind::Liquid, Timing::Poisson);
    sc.lambda = 0.01;
    sc.eps = EpsilonSet { eps_c: 0.1, eps_d: 0.1, eps: 0.2 };
    sc.backend = Backend::Byte;
    sc.failures = C5_FAILURES;
    sc.trials = C5_TRIALS;
    sc.seed = 5;
    sc
}

#[test]
fn criterion_5_poisson_liquid_safety() {
    let start = Instant::now();
    let sc = c5_scenario();
    let rep = sim::run_experiment(&sc, None).unwrap();
    let ceiling = liquid::poisson_read_ceiling(0.2, 0.2, 0.01, 100, sc.clen as f64);
    let disagree: Vec<u64> =
        rep.trials.iter().filter(|t| t.counter_verdict() != Some(t.recoverable)).map(|t| t.trial).collect();
    let unsound = rep.trials.iter().filter(|t| !t.recoverable && t.counter_min.unwrap() >= 0).count();
    let over = rep.trials.iter().filter(|t| t.peak_read_rate > ceiling * (1.0 + C5_RATE_SLACK)).count();
    let lost = rep.trials.iter().filter(|t| !t.recoverable).count();
    let max_peak = rep.aggregate.max_peak_read_rate;
    let mut lengths: Vec<u64> = rep.trials.iter().map(|t| t.failures).collect();
    lengths.sort_unstable();
    let el = start.elapsed();
    verdict(
        "5a",
        disagree.is_empty() && unsound == 0,
        &format!(
            "{} trials, {lost} lost (median {} failures processed), detectors disagree on {} (trials {:?}), \
             {unsound} losses with b(t) >= 0",
            rep.trials.len(),
            lengths[lengths.len() / 2],
            disagree.len(),
            &disagree[..disagree.len().min(8)]
        ),
        el,
    );
    verdict(
        "5b",
        over == 0,
        &format!("max peak {max_peak:.2} <= ceiling {ceiling:.2} bits/time on all trials ({over} over)"),
        el,
    );
}

#[test]
fn criterion_6_upper_lower_sandwich() {
    let start = Instant::now();
    let mut ratios = Vec::new();
    for beta in C6_BETAS {
        let r = (2.0 * beta * C6_NODES as f64 / (1.0 - beta)).round() as u32;
        let upper = advanced::periodic_read_bound(C6_NODES, r, 1.0);
        let lower = (1.0 - beta) / lni(2.0 * beta).unwrap();
        ratios.push(upper / lower);
    }
    let monotone = ratios.windows(2).all(|w| w[1] < w[0]) && ratios.iter().all(|&x| x > 1.0);
    let last = *ratios.last().unwrap();
    let el = start.elapsed();
    verdict(
        "6",
        monotone && last < C6_MAX_RATIO && el < C6_LIMIT,
        &format!("ratios at beta {C6_BETAS:?}: {ratios:.4?}"),
        el,
    );
}

#[test]
fn criterion_7_mds_codec() {
    let start = Instant::now();
    let codec = Codec::new(CodecParams::new(12, 8, 64 * 8).unwrap(), Backend::Byte).unwrap();
    let mut rng = SeededRng::new(7, 0);
    let (mut ok, mut rejected) = (0, 0);
    for trial in 0..C7_SUBSETS {
        let mut content = vec![0u8; 8 * 64];
        rng.fill_bytes(&mut content);
        let obj = ObjectData { object: trial as u32, content: Some(content.into()) };
        let all = codec.encode(&obj, &(0..12).collect::<Vec<_>>()).unwrap();
        let pick = sample(rng.rng(), 12, 8).into_vec();
        let subset: Vec<_> = pick.iter().map(|&i| all[i].clone()).collect();
        if codec.decode(&subset).map(|d| d.content == obj.content).unwrap_or(false) {
            ok += 1;
        }
        if matches!(codec.decode(&subset[..7]), Err(CodecError::Insufficient { have: 7, need: 8 })) {
            rejected += 1;
        }
    }
    let el = start.elapsed();
    verdict(
        "7",
        ok == C7_SUBSETS && rejected == C7_SUBSETS && el < C7_LIMIT,
        &format!("{ok}/{C7_SUBSETS} round trips exact, {rejected}/{C7_SUBSETS} k-1 subsets rejected"),
        el,
    );
}

#[test]
fn criterion_8_geometric_sum_oracle() {
    let start = Instant::now();
    let est = sim::monte_carlo_gs(10, 2, C8_TRIALS, 8).unwrap();
    let formula = bounds::expected_distinct_failures(10, 2).unwrap();
    assert!((formula - C8_TARGET).abs() < 1e-12);
    let rel = (est.mean / C8_TARGET - 1.0).abs();
    let el = start.elapsed();
    verdict(
        "8",
        rel <= C8_REL_TOL && el < C8_LIMIT,
        &format!("mean {:.4} +- {:.4} (99%) vs {C8_TARGET:.4}, off {:.3}%", est.mean, est.half_width, 100.0 * rel),
        el,
    );
}

#[test]
fn criterion_9_determinism() {
    let start = Instant::now();
    let mut sc = c5_scenario();
    sc.trials = 8;
    sc.failures = 2_000;
    let a = sim::run_experiment(&sc, Some(1)).unwrap();
    let b = sim::run_experiment(&sc, Some(1)).unwrap();
    let c = sim::run_experiment(&sc, Some(8)).unwrap();
    let csv = |r: &sim::ExperimentReport| report::trials_csv(&r.trials);
    let json = |r: &sim::ExperimentReport| {
        let mut buf = Vec::new();
        report::write_summary_jsonl(&mut buf, r).unwrap();
        buf
    };
    let same_seed = csv(&a) == csv(&b) && json(&a) == json(&b);
    let same_jobs = a == c && json(&a) == json(&c);
    let el = start.elapsed();
    verdict(
        "9",
        same_seed && same_jobs,
        &format!("rerun identical = {same_seed}, jobs 1 vs 8 identical = {same_jobs}"),
        el,
    );
}
