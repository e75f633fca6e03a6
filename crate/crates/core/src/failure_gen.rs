//! Seeded failure sequences: a timing model crossed with an identifier model.
//!
//! Randomness comes from ChaCha20 keyed by the 64-bit seed (little-endian,
//! zero-padded to 32 bytes) with the trial index as the stream number. The
//! generator is counter based, so a `(seed, stream)` pair names the same
//! stream on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FailureGenError {
    #[error("cannot draw {wanted} distinct ids: only {available} of {nodes} remain")]
    NotEnoughIds { wanted: usize, available: usize, nodes: u32 },
    #[error("prefix id {0} repeats or is out of range")]
    BadPrefix(NodeId),
    #[error("invalid timing model: {0}")]
    InvalidTiming(String),
    #[error("phase length M = {m} exceeds N = {nodes}")]
    PhaseTooLong { m: u32, nodes: u32 },
    #[error("replay line {line}: {msg}")]
    Replay { line: usize, msg: String },
}

/// Reproducible random stream for one trial.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn below(&mut self, n: u32) -> u32 {
        self.inner.gen_range(0..n)
    }

    /// Exponential with the given rate, by inverse CDF.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        -(-self.unit()).ln_1p() / rate
    }

    pub fn fill_bytes(&mut self, buf: &mut [u8]) {
        self.inner.fill(buf);
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.inner
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub time: f64,
    pub node: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimingModel {
    Periodic {
        period: f64,
    },
    /// Aggregate interarrival rate is `lambda * nodes`.
    Poisson {
        lambda: f64,
        nodes: u32,
    },
}

impl TimingModel {
    fn validate(&self) -> Result<(), FailureGenError> {
        match *self {
            TimingModel::Periodic { period } if !(period > 0.0 && period.is_finite()) => {
                Err(FailureGenError::InvalidTiming(format!("period = {period} must be > 0")))
            }
            TimingModel::Poisson { lambda, nodes } if !(lambda > 0.0 && lambda.is_finite()) || nodes == 0 => {
                Err(FailureGenError::InvalidTiming(format!("lambda = {lambda}, N = {nodes}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdentifierModel {
    Uniform,
    /// Ids are distinct within each consecutive block of `m` failures.
    DistinctPhase {
        m: u32,
    },
    /// Uniform ids built from geometric gaps between distinct failures,
    /// restarting every `m` distinct failures.
    GseqConstruction {
        m: u32,
    },
}

/// Stateful failure source owned by one trial.
#[derive(Debug, Clone)]
pub struct FailureGen {
    timing: TimingModel,
    ids: IdState,
    nodes: u32,
    rng: SeededRng,
    index: u64,
    last_time: f64,
}

#[derive(Debug, Clone)]
enum IdState {
    Uniform,
    Distinct { m: u32, remaining: Vec<NodeId>, used: u32 },
    Gseq { m: u32, failed: Vec<NodeId>, remaining: Vec<NodeId>, gap: u64 },
}

impl FailureGen {
    pub fn new(timing: TimingModel, ids: IdentifierModel, nodes: u32, rng: SeededRng) -> Result<Self, FailureGenError> {
        timing.validate()?;
        let ids = match ids {
            IdentifierModel::Uniform => IdState::Uniform,
            IdentifierModel::DistinctPhase { m } => {
                check_phase(m, nodes)?;
                IdState::Distinct { m, remaining: (0..nodes).collect(), used: 0 }
            }
            IdentifierModel::GseqConstruction { m } => {
                check_phase(m, nodes)?;
                IdState::Gseq { m, failed: Vec::new(), remaining: (0..nodes).collect(), gap: 0 }
            }
        };
        Ok(Self { timing, ids, nodes, rng, index: 0, last_time: 0.0 })
    }

    fn next_time(&mut self) -> f64 {
        let t = match self.timing {
            TimingModel::Periodic { period } => (self.index + 1) as f64 * period,
            TimingModel::Poisson { lambda, nodes } => self.last_time + self.rng.exponential(lambda * nodes as f64),
        };
        // Failure instants must be isolated.
        if self.index > 0 && t <= self.last_time {
            self.last_time.next_up()
        } else {
            t
        }
    }

    fn next_id(&mut self) -> NodeId {
        let nodes = self.nodes;
        let rng = &mut self.rng;
        match &mut self.ids {
            IdState::Uniform => rng.below(nodes),
            IdState::Distinct { m, remaining, used } => {
                if *used == *m {
                    *remaining = (0..nodes).collect();
                    *used = 0;
                }
                *used += 1;
                let pick = rng.below(remaining.len() as u32) as usize;
                remaining.swap_remove(pick)
            }
            IdState::Gseq { m, failed, remaining, gap } => {
                if failed.len() as u32 == *m {
                    failed.clear();
                    *remaining = (0..nodes).collect();
                }
                if failed.is_empty() {
                    let pick = rng.below(nodes) as usize;
                    let id = remaining.swap_remove(pick);
                    failed.push(id);
                    *gap = 0;
                    return id;
                }
                if *gap == 0 {
                    let success = remaining.len() as f64 / nodes as f64;
                    *gap = geometric(rng, success);
                }
                *gap -= 1;
                if *gap == 0 {
                    let pick = rng.below(remaining.len() as u32) as usize;
                    let id = remaining.swap_remove(pick);
                    failed.push(id);
                    id
                } else {
                    failed[rng.below(failed.len() as u32) as usize]
                }
            }
        }
    }

    pub fn next_event(&mut self) -> FailureEvent {
        let time = self.next_time();
        let node = self.next_id();
        self.last_time = time;
        self.index += 1;
        FailureEvent { time, node }
    }

    pub fn take_events(&mut self, count: usize) -> Vec<FailureEvent> {
        (0..count).map(|_| self.next_event()).collect()
    }
}

impl Iterator for FailureGen {
    type Item = FailureEvent;

    fn next(&mut self) -> Option<FailureEvent> {
        Some(self.next_event())
    }
}

fn check_phase(m: u32, nodes: u32) -> Result<(), FailureGenError> {
    if m == 0 || m > nodes {
        return Err(FailureGenError::PhaseTooLong { m, nodes });
    }
    Ok(())
}

/// Number of Bernoulli trials up to and including the first success.
fn geometric(rng: &mut SeededRng, success: f64) -> u64 {
    let mut n = 1;
    while rng.unit() >= success {
        n += 1;
    }
    n
}

/// Events at `period, 2*period, ...`.
pub fn gen_periodic(
    period: f64,
    count: usize,
    ids: IdentifierModel,
    nodes: u32,
    rng: SeededRng,
) -> Result<Vec<FailureEvent>, FailureGenError> {
    Ok(FailureGen::new(TimingModel::Periodic { period }, ids, nodes, rng)?.take_events(count))
}

/// Events with independent exponential gaps of rate `lambda * nodes`, starting at 0.
pub fn gen_poisson(
    lambda: f64,
    nodes: u32,
    count: usize,
    ids: IdentifierModel,
    rng: SeededRng,
) -> Result<Vec<FailureEvent>, FailureGenError> {
    Ok(FailureGen::new(TimingModel::Poisson { lambda, nodes }, ids, nodes, rng)?.take_events(count))
}

/// Draws `m` ids uniformly from `{0..nodes} - prefix` without repetition.
pub fn gen_distinct_ids(
    nodes: u32,
    m: usize,
    prefix: &[NodeId],
    rng: &mut SeededRng,
) -> Result<Vec<NodeId>, FailureGenError> {
    let mut taken = vec![false; nodes as usize];
    for &id in prefix {
        if id >= nodes || taken[id as usize] {
            return Err(FailureGenError::BadPrefix(id));
        }
        taken[id as usize] = true;
    }
    let mut pool: Vec<NodeId> = (0..nodes).filter(|&id| !taken[id as usize]).collect();
    if m > pool.len() {
        return Err(FailureGenError::NotEnoughIds { wanted: m, available: pool.len(), nodes });
    }
    // Partial Fisher-Yates.
    for i in 0..m {
        let j = i + rng.below((pool.len() - i) as u32) as usize;
        pool.swap(i, j);
    }
    pool.truncate(m);
    Ok(pool)
}

/// Identifier sequence containing `m` distinct ids, built from geometric
/// gaps, together with the positions `gs_0 = 0 < gs_1 < ... < gs_{m-1}` at
/// which each new distinct id appears.
pub fn gen_useq_from_gseq(nodes: u32, m: u32, rng: &mut SeededRng) -> Result<(Vec<NodeId>, Vec<u64>), FailureGenError> {
    check_phase(m, nodes)?;
    let mut remaining: Vec<NodeId> = (0..nodes).collect();
    let first = remaining.swap_remove(rng.below(nodes) as usize);
    let mut failed = vec![first];
    let mut seq = vec![first];
    let mut gs = vec![0u64];
    for i in 1..m {
        let gap = geometric(rng, (nodes - i) as f64 / nodes as f64);
        for _ in 1..gap {
            seq.push(failed[rng.below(failed.len() as u32) as usize]);
        }
        let id = remaining.swap_remove(rng.below(remaining.len() as u32) as usize);
        failed.push(id);
        seq.push(id);
        gs.push(gs[i as usize - 1] + gap);
    }
    Ok((seq, gs))
}

/// Serializes events as `time,nodeId` lines.
pub fn to_replay(events: &[FailureEvent]) -> String {
    events.iter().map(|e| format!("{:?},{}\n", e.time, e.node)).collect()
}

/// Parses `time,nodeId` lines. Blank lines and `#` comments are skipped.
pub fn parse_replay(text: &str, nodes: u32) -> Result<Vec<FailureEvent>, FailureGenError> {
    let mut events: Vec<FailureEvent> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| FailureGenError::Replay { line: i + 1, msg };
        let (t, id) = line.split_once(',').ok_or_else(|| err("expected `time,nodeId`".into()))?;
        let time: f64 = t.trim().parse().map_err(|e| err(format!("bad time: {e}")))?;
        let node: NodeId = id.trim().parse().map_err(|e| err(format!("bad node id: {e}")))?;
        if node >= nodes {
            return Err(err(format!("node id {node} >= N = {nodes}")));
        }
        if !time.is_finite() || events.last().is_some_and(|p| time <= p.time) {
            return Err(err(format!("time {time} is not strictly increasing")));
        }
        events.push(FailureEvent { time, node });
    }
    Ok(events)
}
