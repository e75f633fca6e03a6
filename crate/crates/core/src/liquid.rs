//! Liquid repairer: staggered redundancy across a cyclic list of objects,
//! one whole-object repair step at a time.
//!
//! EFI `e` of every object lives on node `e`. Position `j` of the cyclic
//! order holds more fragments than position `j - 1`, so the object at
//! position 0 is always the one closest to loss and is the one repaired.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::cluster::{Census, Cluster, ClusterParams};
use crate::erasure::{Backend, Codec, CodecParams, Efi, Fragment, ObjectData, ObjectId};
use crate::failure_gen::{FailureEvent, SeededRng};
use crate::repair::{RepairCounter, RepairError, Repairer, StepRecord, Trace};

/// Rounding slack when a real-valued count should be an integer.
const INT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LiquidVariant {
    /// One instantaneous repair step right after every failure.
    Periodic,
    /// Timed repair steps driven by the counter `b(t)`.
    Poisson { eps: f64, lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiquidParams {
    pub nodes: u32,
    pub clen: u64,
    pub beta: f64,
    pub variant: LiquidVariant,
    pub backend: Backend,
    /// Overrides the Poisson step duration; infinity disables repair.
    pub step_duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiquidLayout {
    pub k: u32,
    pub r: u32,
    /// Number of objects: `r` (periodic) or `r'` (Poisson).
    pub objects: u32,
    /// Counter cap; 0 for the periodic variant.
    pub b: u32,
    /// `r + 1 - (r' + b)`; zero when the integral rounding is exact.
    pub slack: i64,
    pub flen: u64,
    /// Position `j` -> object currently at that position.
    pub order: VecDeque<ObjectId>,
}

fn integral(x: f64, what: &str) -> Result<u32, RepairError> {
    let r = x.round();
    if (x - r).abs() > INT_TOL * x.abs().max(1.0) || r < 0.0 {
        return Err(RepairError::Config(format!("{what} = {x} is not an integer")));
    }
    Ok(r as u32)
}

impl LiquidLayout {
    pub fn derive(p: &LiquidParams) -> Result<Self, RepairError> {
        if !(p.beta > 0.0 && p.beta < 1.0) {
            return Err(RepairError::Config(format!("beta = {} must lie in (0, 1)", p.beta)));
        }
        let r = integral(p.beta * p.nodes as f64, "beta * N")?;
        let k = p.nodes - r;
        if r == 0 || k == 0 {
            return Err(RepairError::Config(format!("need k >= 1 and r >= 1, got k = {k}, r = {r}")));
        }
        let (objects, b) = match p.variant {
            LiquidVariant::Periodic => (r, 0),
            LiquidVariant::Poisson { eps, lambda } => {
                if !(eps > 0.0 && eps < 1.0) || !(lambda > 0.0) {
                    return Err(RepairError::Config(format!("need 0 < eps < 1 and lambda > 0, got {eps}, {lambda}")));
                }
                let eps1 = eps / 2.0;
                let b = (eps1 * r as f64 + INT_TOL).floor() as u32 + 1;
                let objects = (((1.0 - eps1) * r as f64 + INT_TOL).floor() as u32).max(1);
                (objects, b)
            }
        };
        let slack = r as i64 + 1 - (objects as i64 + b as i64);
        if slack < 0 {
            return Err(RepairError::Config(format!("r' + b = {} exceeds r + 1 = {}", objects + b, r + 1)));
        }
        if !p.clen.is_multiple_of(objects as u64) {
            return Err(RepairError::Config(format!("clen = {} not divisible by the object count {objects}", p.clen)));
        }
        let flen = p.clen / objects as u64;
        if p.backend == Backend::Byte && !flen.is_multiple_of(8) {
            return Err(RepairError::Config(format!(
                "byte mode needs flen = clen / {objects} divisible by 8, got {flen}"
            )));
        }
        Ok(Self { k, r, objects, b, slack, flen, order: (0..objects).collect() })
    }

    /// Fragments placed by the storer for the object at position `j`.
    pub fn initial_fragments(&self, j: u32) -> u32 {
        if self.b == 0 {
            self.k + j + 1
        } else {
            self.k + self.b + j
        }
    }
}

/// Bits read by one periodic step, `(1 - beta) / beta * clen`.
pub fn periodic_read_per_step(beta: f64, clen: f64) -> f64 {
    (1.0 - beta) / beta * clen
}

/// Peak read-rate ceiling of the Poisson variant,
/// `(1 - beta) / ((1 - eps) * beta) * lambda * N * clen`.
pub fn poisson_read_ceiling(beta: f64, eps: f64, lambda: f64, nodes: u32, clen: f64) -> f64 {
    (1.0 - beta) / ((1.0 - eps) * beta) * lambda * nodes as f64 * clen
}

#[derive(Debug, Clone)]
struct Step {
    start: f64,
    object: ObjectId,
    read: Vec<Fragment>,
    taken: Vec<bool>,
    bits_read: u128,
}

#[derive(Debug, Clone)]
pub struct LiquidRepairer {
    cluster: Cluster,
    codec: Codec,
    layout: LiquidLayout,
    params: LiquidParams,
    counter: Option<RepairCounter>,
    duration: f64,
    step: Option<Step>,
    steps: Vec<StepRecord>,
    originals: Option<Vec<ObjectData>>,
}

/// Runs the storer: object `x_j` gets EFIs `0..initial_fragments(j)`.
/// Byte-mode source data is drawn from `rng`.
pub fn liquid_store(params: LiquidParams, rng: &mut SeededRng) -> Result<LiquidRepairer, RepairError> {
    let layout = LiquidLayout::derive(&params)?;
    let codec = Codec::new(CodecParams::new(params.nodes, layout.k, layout.flen)?, params.backend)?;
    let byte_mode = params.backend == Backend::Byte;
    let mut cluster = Cluster::new(ClusterParams {
        nodes: params.nodes,
        clen: params.clen,
        flen: layout.flen,
        objects: layout.objects,
        efis: params.nodes,
        k: layout.k,
        byte_mode,
    })?;
    let mut originals = byte_mode.then(Vec::new);
    for j in 0..layout.objects {
        let efis: Vec<Efi> = (0..layout.initial_fragments(j)).collect();
        let content = byte_mode.then(|| {
            let mut buf = vec![0u8; codec.flen_bytes() * layout.k as usize];
            rng.fill_bytes(&mut buf);
            buf.into()
        });
        let obj = ObjectData { object: j, content };
        for frag in codec.encode(&obj, &efis)? {
            cluster.put(frag.efi, frag, 0.0)?;
        }
        if let Some(o) = originals.as_mut() {
            o.push(obj);
        }
    }
    cluster.finish_preprocessing();
    let (counter, duration) = match params.variant {
        LiquidVariant::Periodic => (None, 0.0),
        LiquidVariant::Poisson { eps, lambda } => (
            Some(RepairCounter::new(layout.b as i64)),
            params.step_duration.unwrap_or((1.0 - eps / 2.0) / (lambda * params.nodes as f64)),
        ),
    };
    Ok(LiquidRepairer { cluster, codec, layout, params, counter, duration, step: None, steps: Vec::new(), originals })
}

impl LiquidRepairer {
    pub fn layout(&self) -> &LiquidLayout {
        &self.layout
    }

    pub fn step_duration(&self) -> f64 {
        self.duration
    }

    pub fn in_progress(&self) -> bool {
        self.step.is_some()
    }

    /// Instantaneous repair of position 0: read the `k` lowest stored EFIs,
    /// regenerate and write every missing EFI, rotate.
    pub fn liquid_repair_step(&mut self, time: f64) -> Result<StepRecord, RepairError> {
        let object = self.layout.order[0];
        let efis: Vec<Efi> = self.cluster.efis_of(object).take(self.layout.k as usize).collect();
        if efis.len() < self.layout.k as usize {
            return Err(RepairError::Undecodable { object, time });
        }
        let mut read = Vec::with_capacity(efis.len());
        for efi in efis {
            read.push(self.cluster.read(efi, object, efi, time)?);
        }
        let bits_read = read.len() as u128 * self.layout.flen as u128;
        let bits_written = self.finish(object, &read, time)?;
        let rec = StepRecord { bits_read, bits_written };
        self.steps.push(rec);
        Ok(rec)
    }

    /// Regenerates and writes the missing EFIs of `object`, then rotates.
    fn finish(&mut self, object: ObjectId, read: &[Fragment], time: f64) -> Result<u128, RepairError> {
        let missing: Vec<Efi> = (0..self.params.nodes).filter(|&e| !self.cluster.has(object, e)).collect();
        let frags = self.codec.regenerate_many(read, &missing)?;
        for f in frags {
            self.cluster.put(f.efi, f, time)?;
        }
        self.layout.order.rotate_left(1);
        Ok(missing.len() as u128 * self.layout.flen as u128)
    }

    fn start_step(&mut self, time: f64, trace: &mut Trace) {
        let object = self.layout.order[0];
        self.step = Some(Step {
            start: time,
            object,
            read: Vec::with_capacity(self.layout.k as usize),
            taken: vec![false; self.params.nodes as usize],
            bits_read: 0,
        });
        trace.push(time, "step_start", self.counter.map(|c| c.value()), 0, 0);
    }

    /// Time of the next paced read of `step`; `None` once all `k` are read.
    fn slot_time(&self, step: &Step) -> Option<f64> {
        let k = self.layout.k as usize;
        (step.read.len() < k && self.duration.is_finite())
            .then(|| step.start + step.read.len() as f64 * self.duration / k as f64)
    }

    /// Performs every paced read due at or before `time`, each metered at
    /// its own slot time.
    fn catch_up(&mut self, time: f64) -> Result<(), RepairError> {
        let Some(mut step) = self.step.take() else {
            return Ok(());
        };
        let res = self.read_due(&mut step, time);
        self.step = Some(step);
        res
    }

    fn read_due(&mut self, step: &mut Step, time: f64) -> Result<(), RepairError> {
        while let Some(slot) = self.slot_time(step).filter(|&s| s <= time) {
            // Lowest stored EFI of the object not read yet.
            let efi = self
                .cluster
                .efis_of(step.object)
                .find(|&e| !step.taken[e as usize])
                .ok_or(RepairError::Undecodable { object: step.object, time: slot })?;
            step.read.push(self.cluster.read(efi, step.object, efi, slot)?);
            step.taken[efi as usize] = true;
            step.bits_read += self.layout.flen as u128;
        }
        Ok(())
    }
}

impl Repairer for LiquidRepairer {
    fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    /// Step completion; paced reads are performed lazily by `catch_up`.
    fn next_event_time(&self) -> Option<f64> {
        if !self.duration.is_finite() {
            return None;
        }
        self.step.as_ref().map(|s| s.start + self.duration)
    }

    fn on_event(&mut self, time: f64, trace: &mut Trace) -> Result<(), RepairError> {
        self.catch_up(time)?;
        let Some(step) = self.step.take() else {
            return Ok(());
        };
        if step.read.len() < self.layout.k as usize || time < step.start + self.duration {
            self.step = Some(step);
            return Ok(());
        }
        let bits_written = self.finish(step.object, &step.read, time)?;
        self.steps.push(StepRecord { bits_read: step.bits_read, bits_written });
        let counter = self.counter.as_mut().expect("timed steps need a counter");
        counter.on_complete();
        trace.push(time, "step_complete", Some(counter.value()), step.bits_read, bits_written);
        if counter.busy() {
            self.start_step(time, trace);
        }
        Ok(())
    }

    fn on_failure(&mut self, ev: FailureEvent, trace: &mut Trace) -> Result<(), RepairError> {
        // Reads due at the failure instant happen before it.
        self.catch_up(ev.time)?;
        self.cluster.fail_node(ev.node, ev.time)?;
        match self.counter.as_mut() {
            None => {
                trace.push(ev.time, "failure", None, 0, 0);
                let rec = self.liquid_repair_step(ev.time)?;
                trace.push(ev.time, "repair", None, rec.bits_read, rec.bits_written);
            }
            Some(counter) => {
                counter.on_failure();
                let value = counter.value();
                trace.push(ev.time, "failure", Some(value), 0, 0);
                if self.step.is_none() {
                    self.start_step(ev.time, trace);
                }
            }
        }
        Ok(())
    }

    fn check_invariants(&self) -> Result<(), String> {
        let l = &self.layout;
        let base = match self.counter {
            None => l.k as i64 + 1,
            Some(c) => l.k as i64 + c.value(),
        };
        for (j, &object) in l.order.iter().enumerate() {
            let have = self.cluster.count(object) as i64;
            if have < base + j as i64 {
                return Err(format!("position {j} (object {object}) has {have} fragments, needs {}", base + j as i64));
            }
        }
        for node in 0..self.params.nodes {
            if let Some((efi, _)) = self.cluster.store(node).iter().find(|&(e, _)| e != node) {
                return Err(format!("node {node} holds EFI {efi}"));
            }
        }
        if self.counter.is_some_and(|c| c.busy() != self.step.is_some()) && self.duration.is_finite() {
            return Err("step in flight does not match the counter".into());
        }
        Ok(())
    }

    fn counter(&self) -> Option<RepairCounter> {
        self.counter
    }

    fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    fn census(&self) -> Census {
        self.cluster.census(Some(&self.codec), self.originals.as_deref())
    }
}
