//! Trial driver: one event loop per trial merging failures with the
//! repairer's own scheduled events, and a parallel multi-trial runner.
//!
//! Tie rule: a repairer event due at the same instant as a failure runs
//! first.

pub mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advanced::{self, AdvancedParams, AdvancedVariant};
use crate::bounds::{self, BoundReport, EpsilonSet, SystemParams};
use crate::cluster::peak_rate;
use crate::erasure::Backend;
use crate::failure_gen::{FailureEvent, FailureGen, FailureGenError, IdentifierModel, SeededRng, TimingModel};
use crate::liquid::{self, LiquidParams, LiquidVariant};
use crate::repair::{RepairError, Repairer, Trace};

/// Stream bit reserved for byte-mode source data, keeping it independent of
/// the failure stream with the same trial index.
const DATA_STREAM: u64 = 1 << 63;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("trial {trial}: invariant violated at time {time}: {message}")]
    Invariant { trial: u64, time: f64, message: String },
    #[error("trial {trial}: repairer failed while data was recoverable: {source}")]
    Repair { trial: u64, source: RepairError },
    #[error(transparent)]
    FailureGen(#[from] FailureGenError),
}

impl SimError {
    /// Bugs rather than bad input.
    pub fn is_violation(&self) -> bool {
        matches!(self, SimError::Invariant { .. } | SimError::Repair { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepairerKind {
    Liquid,
    Advanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timing {
    Periodic { period: f64 },
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub nodes: u32,
    pub clen: u64,
    pub beta: f64,
    pub vlen: u128,
    /// Per-node failure rate.
    pub lambda: f64,
    pub repairer: RepairerKind,
    pub timing: Timing,
    /// Advanced repairer helper count; derived from `beta` when absent.
    pub r: Option<u32>,
    /// Liquid Poisson step duration override; infinity disables repair.
    pub step_duration: Option<f64>,
    pub backend: Backend,
    pub eps: EpsilonSet,
    pub failures: u64,
    pub trials: u32,
    pub seed: u64,
    /// Peak-rate window; defaults to the mean failure interarrival time.
    pub peak_window: Option<f64>,
    pub ids: IdentifierModel,
    pub trace: bool,
    /// Above `check_threshold` nodes, invariants run every `check_every` events.
    pub check_every: u64,
    pub check_threshold: u32,
    /// Failure sequence to replay instead of generating one.
    pub replay: Option<Vec<FailureEvent>>,
    #[serde(skip)]
    pub inject_fault: bool,
}

impl Scenario {
    /// A scenario with every optional knob at its default.
    pub fn new(nodes: u32, clen: u64, beta: f64, repairer: RepairerKind, timing: Timing) -> Self {
        Self {
            nodes,
            clen,
            beta,
            vlen: 0,
            lambda: match timing {
                Timing::Periodic { period } => 1.0 / (period * nodes as f64),
                Timing::Poisson => 1.0 / nodes as f64,
            },
            repairer,
            timing,
            r: None,
            step_duration: None,
            backend: Backend::Byte,
            eps: EpsilonSet::default(),
            failures: 100,
            trials: 1,
            seed: 0,
            peak_window: None,
            ids: IdentifierModel::Uniform,
            trace: false,
            check_every: 1,
            check_threshold: u32::MAX,
            replay: None,
            inject_fault: false,
        }
    }

    /// Mean number of failures per time unit.
    pub fn failure_rate(&self) -> f64 {
        match self.timing {
            Timing::Periodic { period } => 1.0 / period,
            Timing::Poisson => self.lambda * self.nodes as f64,
        }
    }

    pub fn window(&self) -> f64 {
        self.peak_window.unwrap_or(1.0 / self.failure_rate())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.nodes < 2 {
            return bad(format!("N = {} must be at least 2", self.nodes));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta = {} must lie in (0, 1)", self.beta));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.check_every == 0 {
            return bad("check_every must be at least 1".into());
        }
        if let Some(w) = self.peak_window {
            if !(w > 0.0 && w.is_finite()) {
                return bad(format!("peak_window = {w} must be positive"));
            }
        }
        match self.timing {
            Timing::Periodic { period } if !(period > 0.0 && period.is_finite()) => {
                return bad(format!("period = {period} must be positive"));
            }
            Timing::Poisson if !(self.lambda > 0.0 && self.lambda.is_finite()) => {
                return bad(format!("lambda = {} must be positive for Poisson failures", self.lambda));
            }
            _ => {}
        }
        self.eps.validate().map_err(|e| SimError::Config(e.to_string()))?;
        let layout = match self.repairer {
            RepairerKind::Liquid => liquid::LiquidLayout::derive(&self.liquid_params()).map(|_| ()),
            RepairerKind::Advanced => advanced::validate_params(&self.advanced_params()),
        };
        layout.map_err(|e| SimError::Config(e.to_string()))
    }

    fn liquid_params(&self) -> LiquidParams {
        LiquidParams {
            nodes: self.nodes,
            clen: self.clen,
            beta: self.beta,
            variant: self.liquid_variant(),
            backend: self.backend,
            step_duration: self.step_duration,
        }
    }

    fn advanced_params(&self) -> AdvancedParams {
        AdvancedParams {
            nodes: self.nodes,
            clen: self.clen,
            r: self.advanced_r(),
            variant: self.advanced_variant(),
            backend: self.backend,
        }
    }

    fn liquid_variant(&self) -> LiquidVariant {
        match self.timing {
            Timing::Periodic { .. } => LiquidVariant::Periodic,
            Timing::Poisson => LiquidVariant::Poisson { eps: self.eps.eps, lambda: self.lambda },
        }
    }

    fn advanced_variant(&self) -> AdvancedVariant {
        match self.timing {
            Timing::Periodic { .. } => AdvancedVariant::Periodic,
            Timing::Poisson => AdvancedVariant::Poisson { eps: self.eps.eps, lambda: self.lambda },
        }
    }

    /// Helper count used by the advanced repairer.
    pub fn advanced_r(&self) -> u32 {
        self.r.unwrap_or_else(|| advanced::default_r(self.nodes, self.beta, self.advanced_variant()))
    }
}

type BoxedRepairer = Box<dyn Repairer + Send>;

fn build_repairer(sc: &Scenario, rng: &mut SeededRng) -> Result<BoxedRepairer, RepairError> {
    Ok(match sc.repairer {
        RepairerKind::Liquid => Box::new(liquid::liquid_store(sc.liquid_params(), rng)?),
        RepairerKind::Advanced => Box::new(advanced::advanced_store(sc.advanced_params(), rng)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: u64,
    pub seed: u64,
    /// No object dropped below `k` fragments and the final census decodes.
    pub recoverable: bool,
    pub first_loss_time: Option<f64>,
    pub bits_read: u128,
    pub bits_written: u128,
    pub avg_read_rate: f64,
    pub peak_read_rate: f64,
    pub counter_min: Option<i64>,
    pub failures: u64,
    pub steps: u64,
    pub elapsed: f64,
    #[serde(skip)]
    pub trace: Option<String>,
}

impl TrialResult {
    /// The counter detector's verdict: `b(t)` never went negative.
    pub fn counter_verdict(&self) -> Option<bool> {
        self.counter_min.map(|m| m >= 0)
    }
}

struct Checker {
    dense: bool,
    every: u64,
    events: u64,
}

impl Checker {
    fn due(&mut self) -> bool {
        self.events += 1;
        self.dense || self.events.is_multiple_of(self.every)
    }
}

/// Runs one trial on ChaCha stream `stream`.
pub fn run_trial(sc: &Scenario, stream: u64) -> Result<TrialResult, SimError> {
    let mut data_rng = SeededRng::new(sc.seed, stream | DATA_STREAM);
    let mut rep = build_repairer(sc, &mut data_rng).map_err(|e| SimError::Config(e.to_string()))?;
    let m = sc.failures as usize;
    let events: Box<dyn Iterator<Item = FailureEvent>> = match &sc.replay {
        Some(list) => Box::new(list.clone().into_iter().take(m)),
        None => {
            let timing = match sc.timing {
                Timing::Periodic { period } => TimingModel::Periodic { period },
                Timing::Poisson => TimingModel::Poisson { lambda: sc.lambda, nodes: sc.nodes },
            };
            Box::new(FailureGen::new(timing, sc.ids, sc.nodes, SeededRng::new(sc.seed, stream))?.take(m))
        }
    };
    let mut trace = if sc.trace { Trace::on() } else { Trace::default() };
    let mut checker = Checker { dense: sc.nodes <= sc.check_threshold, every: sc.check_every, events: 0 };
    let mut now = 0.0;
    let mut failures = 0;

    let settle = |rep: &BoxedRepairer, res: Result<(), RepairError>, time: f64, checker: &mut Checker| {
        match res {
            Err(_) if !rep.cluster().recoverable() => return Ok(false),
            Err(source) => return Err(SimError::Repair { trial: stream, source }),
            Ok(()) if !rep.cluster().recoverable() => return Ok(false),
            Ok(()) => {}
        }
        if checker.due() {
            rep.check_invariants().map_err(|message| SimError::Invariant { trial: stream, time, message })?;
        }
        Ok(true)
    };

    'events: for ev in events {
        while let Some(t) = rep.next_event_time().filter(|&t| t <= ev.time) {
            let res = rep.on_event(t, &mut trace);
            now = t;
            if !settle(&rep, res, t, &mut checker)? {
                break 'events;
            }
        }
        let res = rep.on_failure(ev, &mut trace);
        now = ev.time;
        failures += 1;
        if !settle(&rep, res, ev.time, &mut checker)? {
            break;
        }
        if sc.inject_fault {
            return Err(SimError::Invariant { trial: stream, time: now, message: "injected fault".into() });
        }
    }

    let cluster = rep.cluster();
    let first_loss_time = cluster.first_loss().map(|l| l.time);
    let census = rep.census();
    if !census.corrupted.is_empty() {
        return Err(SimError::Invariant {
            trial: stream,
            time: now,
            message: format!("objects {:?} decode to wrong content", census.corrupted),
        });
    }
    let bits_read = cluster.total_read();
    Ok(TrialResult {
        trial: stream,
        seed: sc.seed,
        recoverable: first_loss_time.is_none() && census.recoverable(),
        first_loss_time,
        bits_read,
        bits_written: cluster.total_written(),
        avg_read_rate: if now > 0.0 { bits_read as f64 / now } else { 0.0 },
        peak_read_rate: peak_rate(cluster.read_log(), sc.window()),
        counter_min: rep.counter().map(|c| c.min()),
        failures,
        steps: rep.steps().len() as u64,
        elapsed: now,
        trace: sc.trace.then(|| trace.to_csv()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub trials: u64,
    pub unrecoverable: u64,
    pub unrecoverable_fraction: f64,
    /// Trials where the counter detector and the census disagree.
    pub detector_disagreements: u64,
    pub mean_bits_read: f64,
    pub mean_bits_written: f64,
    pub mean_read_per_failure: f64,
    pub mean_avg_read_rate: f64,
    pub max_peak_read_rate: f64,
}

impl Aggregate {
    pub fn from_trials(trials: &[TrialResult]) -> Self {
        let n = trials.len() as f64;
        let mean = |f: &dyn Fn(&TrialResult) -> f64| trials.iter().map(f).sum::<f64>() / n;
        let unrecoverable = trials.iter().filter(|t| !t.recoverable).count() as u64;
        let failures: u64 = trials.iter().map(|t| t.failures).sum();
        let read: f64 = trials.iter().map(|t| t.bits_read as f64).sum();
        Self {
            trials: trials.len() as u64,
            unrecoverable,
            unrecoverable_fraction: unrecoverable as f64 / n,
            detector_disagreements: trials
                .iter()
                .filter(|t| t.counter_verdict().is_some_and(|c| c != t.recoverable))
                .count() as u64,
            mean_bits_read: mean(&|t| t.bits_read as f64),
            mean_bits_written: mean(&|t| t.bits_written as f64),
            mean_read_per_failure: if failures > 0 { read / failures as f64 } else { 0.0 },
            mean_avg_read_rate: mean(&|t| t.avg_read_rate),
            max_peak_read_rate: trials.iter().map(|t| t.peak_read_rate).fold(0.0, f64::max),
        }
    }
}

/// Measured rates against the formulas for the configured repairer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub failure_rate: f64,
    /// Lower bound on the average read rate of any repairer.
    pub lower_bound_rate: Option<f64>,
    /// The configured repairer's read-rate ceiling.
    pub ceiling_rate: f64,
    /// Advanced Poisson only: the per-step ceiling with the larger coefficient.
    pub step_ceiling_rate: Option<f64>,
    pub avg_over_lower: Option<f64>,
    pub peak_over_ceiling: f64,
    pub peak_over_step_ceiling: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub trials: Vec<TrialResult>,
    pub aggregate: Aggregate,
    pub bound_report: Option<BoundReport>,
    /// Why `bound_report` is absent.
    pub bound_error: Option<String>,
    pub comparison: Comparison,
}

/// Read-rate ceiling of the configured repairer, and the per-step ceiling for
/// the advanced Poisson variant.
pub fn repairer_ceiling(sc: &Scenario) -> Result<(f64, Option<f64>), SimError> {
    let clen = sc.clen as f64;
    let per_time = sc.failure_rate();
    let cfg = |e: RepairError| SimError::Config(e.to_string());
    Ok(match (sc.repairer, sc.timing) {
        (RepairerKind::Liquid, Timing::Periodic { .. }) => {
            (liquid::periodic_read_per_step(sc.beta, clen) * per_time, None)
        }
        (RepairerKind::Liquid, Timing::Poisson) => {
            (liquid::poisson_read_ceiling(sc.beta, sc.eps.eps, sc.lambda, sc.nodes, clen), None)
        }
        (RepairerKind::Advanced, Timing::Periodic { .. }) => {
            (advanced::periodic_read_bound(sc.nodes, sc.advanced_r(), clen) * per_time, None)
        }
        (RepairerKind::Advanced, Timing::Poisson) => {
            let r = sc.advanced_r();
            let b = advanced::poisson_b(sc.nodes, sc.eps.eps);
            let beta = (r + 1 + 2 * b) as f64 / (2 * sc.nodes + r + 1) as f64;
            let s = advanced::advanced_schedule(b, sc.lambda, sc.nodes, beta, sc.eps.eps).map_err(cfg)?;
            let base = sc.lambda * sc.nodes as f64 * clen;
            (s.ceiling_coeff * base, Some(s.step_coeff * base))
        }
    })
}

/// Runs trials `0..trials` on at most `jobs` threads (all cores when `None`).
/// The report does not depend on `jobs`.
pub fn run_experiment(sc: &Scenario, jobs: Option<usize>) -> Result<ExperimentReport, SimError> {
    sc.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| SimError::Config(e.to_string()))?;
    let trials: Vec<TrialResult> =
        pool.install(|| (0..sc.trials as u64).into_par_iter().map(|t| run_trial(sc, t)).collect::<Result<_, _>>())?;
    let aggregate = Aggregate::from_trials(&trials);
    let (bound_report, bound_error) =
        match SystemParams::from_beta(sc.nodes as u64, sc.clen as u128, sc.beta, sc.vlen, sc.lambda)
            .and_then(|sys| bounds::bound_report(&sys, &sc.eps))
        {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
    let (ceiling_rate, step_ceiling_rate) = repairer_ceiling(sc)?;
    let lower_bound_rate = bound_report.as_ref().map(|b| match sc.timing {
        Timing::Poisson => b.poisson_rate,
        Timing::Periodic { .. } => b.uniform_rate_per_failure * sc.failure_rate(),
    });
    let comparison = Comparison {
        failure_rate: sc.failure_rate(),
        lower_bound_rate,
        ceiling_rate,
        step_ceiling_rate,
        avg_over_lower: lower_bound_rate.map(|l| aggregate.mean_avg_read_rate / l),
        peak_over_ceiling: aggregate.max_peak_read_rate / ceiling_rate,
        peak_over_step_ceiling: step_ceiling_rate.map(|p| aggregate.max_peak_read_rate / p),
    };
    Ok(ExperimentReport { scenario: sc.clone(), trials, aggregate, bound_report, bound_error, comparison })
}

/// Empirical mean of `gs_i` with a 99% normal confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GsEstimate {
    pub mean: f64,
    pub half_width: f64,
    pub trials: u64,
}

/// Direct simulation of uniform failure ids: after the first failure, counts
/// failures until `i` further distinct nodes have failed.
pub fn monte_carlo_gs(nodes: u32, i: u32, trials: u64, seed: u64) -> Result<GsEstimate, SimError> {
    if i >= nodes || trials < 2 {
        return Err(SimError::Config(format!(
            "need i < N and at least 2 trials, got i = {i}, N = {nodes}, trials = {trials}"
        )));
    }
    let mut rng = SeededRng::new(seed, 0);
    let mut seen = vec![0u64; nodes as usize];
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for t in 1..=trials {
        seen[rng.below(nodes) as usize] = t;
        let (mut distinct, mut count) = (0, 0u64);
        while distinct < i {
            let id = rng.below(nodes) as usize;
            count += 1;
            if seen[id] != t {
                seen[id] = t;
                distinct += 1;
            }
        }
        let c = count as f64;
        sum += c;
        sum_sq += c * c;
    }
    let n = trials as f64;
    let mean = sum / n;
    let var = (sum_sq - n * mean * mean) / (n - 1.0);
    Ok(GsEstimate { mean, half_width: 2.5758293035489 * (var.max(0.0) / n).sqrt(), trials })
}
