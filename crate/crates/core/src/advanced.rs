//! Advanced liquid repairer.
//!
//! Source data is split into `N` groups of `r` objects. Node `i` stores its
//! primary EFI `f_i` for every object, plus helper EFIs `h_0..h_j` for the
//! object at position `j` of its own group. A repair step for node `i` moves
//! every node's `h_0` helpers to `i`, which then become `i`'s primaries,
//! rotates the EFI roles and regenerates the helpers of one object per
//! group.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::cluster::{Census, Cluster, ClusterParams};
use crate::erasure::{Backend, Codec, CodecParams, Efi, Fragment, ObjectData, ObjectId};
use crate::failure_gen::{FailureEvent, NodeId, SeededRng};
use crate::repair::{RepairCounter, RepairError, Repairer, StepRecord, Trace};

const INT_TOL: f64 = 1e-9;
const NO_OWNER: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AdvancedVariant {
    /// The repair step runs instantaneously after every failure.
    Periodic,
    /// Timed steps driven by the counter `b(t)`.
    Poisson { eps: f64, lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvancedParams {
    pub nodes: u32,
    pub clen: u64,
    pub r: u32,
    pub variant: AdvancedVariant,
    /// Preferred backend; `n > 256` always runs symbolic.
    pub backend: Backend,
}

/// Default helper count for a target overhead: `2 beta N / (1 - beta)`
/// (periodic) or `2 N (beta - eps') / (1 - beta)` (Poisson), rounded.
pub fn default_r(nodes: u32, beta: f64, variant: AdvancedVariant) -> u32 {
    let n = nodes as f64;
    let r = match variant {
        AdvancedVariant::Periodic => 2.0 * beta * n / (1.0 - beta),
        AdvancedVariant::Poisson { eps, .. } => 2.0 * n * (beta - eps / 2.0) / (1.0 - beta),
    };
    r.round().max(1.0) as u32
}

/// Counter cap `b = floor(eps' N) + 1` of the Poisson variant.
pub fn poisson_b(nodes: u32, eps: f64) -> u32 {
    ((eps / 2.0) * nodes as f64 + INT_TOL).floor() as u32 + 1
}

/// Fragments stored per node: `N r + r (r + 1) / 2`.
pub fn fragments_per_node(nodes: u32, r: u32) -> u64 {
    nodes as u64 * r as u64 + r as u64 * (r as u64 + 1) / 2
}

/// Periodic-variant bound on bits read per step, `N (N + 2r) flen`.
pub fn periodic_read_bound(nodes: u32, r: u32, clen: f64) -> f64 {
    let (n, r) = (nodes as f64, r as f64);
    n * (n + 2.0 * r) / (r * (n + (r + 1.0) / 2.0)) * clen
}

/// Periodic-variant bits written per step, `(2N r + r (r + 1) / 2) flen`.
pub fn periodic_write_bits(nodes: u32, r: u32, clen: f64) -> f64 {
    let (n, r) = (nodes as f64, r as f64);
    (2.0 * n + (r + 1.0) / 2.0) / (n + (r + 1.0) / 2.0) * clen
}

/// Large-N approximation of the per-failure read bits, `(1 + 2 beta) / (2 beta) clen`.
pub fn asymptotic_read_bits(beta: f64, clen: f64) -> f64 {
    (1.0 + 2.0 * beta) / (2.0 * beta) * clen
}

/// Large-N approximation of the per-failure write bits, `(2 - beta) clen`.
pub fn asymptotic_write_bits(beta: f64, clen: f64) -> f64 {
    (2.0 - beta) * clen
}

/// The `N + r` rotating EFI roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EfiRotation {
    pub primary: Vec<Efi>,
    pub helpers: VecDeque<Efi>,
    /// EFI -> node whose primary it is, or `u32::MAX` for a helper.
    #[serde(skip)]
    owner: Vec<u32>,
}

impl EfiRotation {
    pub fn new(nodes: u32, r: u32) -> Self {
        let mut owner: Vec<u32> = (0..nodes).collect();
        owner.resize((nodes + r) as usize, NO_OWNER);
        Self { primary: (0..nodes).collect(), helpers: (nodes..nodes + r).collect(), owner }
    }

    /// `h' = (h_1, .., h_{r-1}, f_i)` and `f'_i = h_0`.
    pub fn rotate(&mut self, i: NodeId) {
        let h0 = self.helpers.pop_front().expect("r >= 1");
        let fi = std::mem::replace(&mut self.primary[i as usize], h0);
        self.helpers.push_back(fi);
        self.owner[h0 as usize] = i;
        self.owner[fi as usize] = NO_OWNER;
    }

    /// Node whose primary EFI is `efi`.
    pub fn owner(&self, efi: Efi) -> Option<NodeId> {
        self.owner.get(efi as usize).copied().filter(|&o| o != NO_OWNER)
    }

    pub fn distinct(&self) -> bool {
        let mut seen = vec![false; self.owner.len()];
        self.primary.iter().chain(self.helpers.iter()).all(|&e| {
            let fresh = (e as usize) < seen.len() && !seen[e as usize];
            if fresh {
                seen[e as usize] = true;
            }
            fresh
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupLayout {
    pub nodes: u32,
    pub r: u32,
    /// `N - 1` (periodic) or `N - b` (Poisson).
    pub k: u32,
    /// Counter cap; 0 for the periodic variant.
    pub b: u32,
    pub flen: u64,
    /// Per-group rotation: position `j` of group `g` is slot `(offset + j) mod r`.
    offsets: Vec<u32>,
}

impl GroupLayout {
    pub fn n(&self) -> u32 {
        self.nodes + self.r
    }

    pub fn objects(&self) -> u32 {
        self.nodes * self.r
    }

    /// Object at position `j` of group `g`.
    pub fn object(&self, g: u32, j: u32) -> ObjectId {
        g * self.r + (self.offsets[g as usize] + j) % self.r
    }

    pub fn group_of(&self, object: ObjectId) -> u32 {
        object / self.r
    }

    pub fn position(&self, object: ObjectId) -> u32 {
        let g = self.group_of(object);
        (object % self.r + self.r - self.offsets[g as usize]) % self.r
    }

    fn rotate(&mut self, g: u32) {
        let o = &mut self.offsets[g as usize];
        *o = (*o + 1) % self.r;
    }

    /// Storage overhead: `(r + 3) / (2N + r + 1)` (periodic) or
    /// `(r + 1 + 2b) / (2N + r + 1)` (Poisson).
    pub fn beta(&self) -> f64 {
        let extra = if self.b == 0 { 3 } else { 1 + 2 * self.b };
        (self.r + extra) as f64 / (2 * self.nodes + self.r + 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Generate,
    Move,
    Update,
}

/// Fragment counts of one sub-algorithm invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct OpCounts {
    pub reads: u64,
    pub writes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OpRecord {
    pub time: f64,
    pub kind: OpKind,
    pub node: NodeId,
    pub counts: OpCounts,
    /// A failure of `node` voided the writes.
    pub voided: bool,
}

/// Step timing and read-rate ceilings of the Poisson variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdvancedSchedule {
    pub b: u32,
    pub beta: f64,
    pub eps1: f64,
    /// `(1 - eps') / (lambda N)`: N moves, N updates and one generate.
    pub step_time: f64,
    /// `step_time * 2 beta / (2 beta + 1)`.
    pub generate_time: f64,
    /// One move or one update: `step_time / ((2 beta + 1) 2N)`.
    pub op_time: f64,
    /// Coefficient of `lambda N clen` with the `2 + 1/(2(beta - eps'))` term.
    pub step_coeff: f64,
    /// Coefficient of `lambda N clen` with the `1 + 1/(2(beta - eps'))` term.
    pub ceiling_coeff: f64,
}

impl AdvancedSchedule {
    /// Upper bound on the time for `m - b` steps: `(1 - eps')/(lambda N) (m - b/(2 beta + 1))`.
    pub fn time_for_steps(&self, m: u64) -> f64 {
        self.step_time * (m as f64 - self.b as f64 / (2.0 * self.beta + 1.0))
    }
}

pub fn advanced_schedule(
    b: u32,
    lambda: f64,
    nodes: u32,
    beta: f64,
    eps: f64,
) -> Result<AdvancedSchedule, RepairError> {
    let eps1 = eps / 2.0;
    if !(lambda > 0.0) || !(0.0..1.0).contains(&eps) || !(beta > eps1 && beta < 1.0) || nodes == 0 {
        return Err(RepairError::Config(format!(
            "need lambda > 0, 0 <= eps < 1 and eps/2 < beta < 1, got {lambda}, {eps}, {beta}"
        )));
    }
    let step_time = (1.0 - eps1) / (lambda * nodes as f64);
    let scale = (1.0 - beta) / (1.0 - eps1);
    let tail = 1.0 / (2.0 * (beta - eps1));
    Ok(AdvancedSchedule {
        b,
        beta,
        eps1,
        step_time,
        generate_time: step_time * 2.0 * beta / (2.0 * beta + 1.0),
        op_time: step_time / ((2.0 * beta + 1.0) * 2.0 * nodes as f64),
        step_coeff: scale * (2.0 + tail),
        ceiling_coeff: scale * (1.0 + tail),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Move(u32),
    Update(u32),
    Idle,
}

#[derive(Debug, Clone)]
struct Pending {
    kind: OpKind,
    node: NodeId,
    end: f64,
    epoch: u64,
    reads: Vec<Vec<Fragment>>,
    counts: OpCounts,
}

#[derive(Debug, Clone)]
struct Step {
    target: Option<NodeId>,
    target_failed: bool,
    phase: Phase,
    op: Option<Pending>,
    idle_end: f64,
    bits_read: u128,
    bits_written: u128,
}

#[derive(Debug, Clone)]
pub struct AdvancedRepairer {
    cluster: Cluster,
    codec: Codec,
    layout: GroupLayout,
    efis: EfiRotation,
    params: AdvancedParams,
    schedule: Option<AdvancedSchedule>,
    counter: Option<RepairCounter>,
    /// Node set `N_p(t)`.
    np: Vec<bool>,
    np_len: u32,
    helpers_ok: Vec<bool>,
    fail_epoch: Vec<u64>,
    queue: VecDeque<NodeId>,
    queued: Vec<bool>,
    /// EFI moved by the current step: `h_0` before the rotation.
    moving: Efi,
    target: Option<NodeId>,
    step: Option<Step>,
    steps: Vec<StepRecord>,
    ops: Option<Vec<OpRecord>>,
    originals: Option<Vec<ObjectData>>,
}

/// Checks the parameters without running the storer.
pub fn validate_params(params: &AdvancedParams) -> Result<(), RepairError> {
    derive(params).map(|_| ())
}

fn derive(params: &AdvancedParams) -> Result<(GroupLayout, Codec, Option<AdvancedSchedule>), RepairError> {
    let AdvancedParams { nodes, clen, r, variant, backend } = *params;
    if nodes < 2 || r == 0 {
        return Err(RepairError::Config(format!("need N >= 2 and r >= 1, got N = {nodes}, r = {r}")));
    }
    let b = match variant {
        AdvancedVariant::Periodic => 0,
        AdvancedVariant::Poisson { eps, .. } => poisson_b(nodes, eps),
    };
    if b >= nodes {
        return Err(RepairError::Config(format!("b = {b} leaves no source fragments at N = {nodes}")));
    }
    let k = if b == 0 { nodes - 1 } else { nodes - b };
    let per_node = fragments_per_node(nodes, r);
    if clen % per_node != 0 {
        return Err(RepairError::Config(format!(
            "clen = {clen} must be a multiple of N r + r (r + 1) / 2 = {per_node}"
        )));
    }
    let flen = clen / per_node;
    let codec = Codec::auto(CodecParams::new(nodes + r, k, flen)?, backend)?;
    if codec.backend() == Backend::Byte && !flen.is_multiple_of(8) {
        return Err(RepairError::Config(format!("byte mode needs flen divisible by 8, got {flen}")));
    }
    let layout = GroupLayout { nodes, r, k, b, flen, offsets: vec![0; nodes as usize] };
    let schedule = match variant {
        AdvancedVariant::Periodic => None,
        AdvancedVariant::Poisson { eps, lambda } => Some(advanced_schedule(b, lambda, nodes, layout.beta(), eps)?),
    };
    Ok((layout, codec, schedule))
}

/// Runs the storer: primary `f_l = l` of every object on node `l`, helpers
/// `h_0..h_j` of position `j` of group `l` on node `l`.
pub fn advanced_store(params: AdvancedParams, rng: &mut SeededRng) -> Result<AdvancedRepairer, RepairError> {
    let (layout, codec, schedule) = derive(&params)?;
    let AdvancedParams { nodes, clen, r, .. } = params;
    let k = layout.k;
    let b = layout.b;
    let flen = layout.flen;
    let byte_mode = codec.backend() == Backend::Byte;
    let objects = layout.objects();
    let mut cluster = Cluster::new(ClusterParams { nodes, clen, flen, objects, efis: nodes + r, k, byte_mode })?;
    let mut originals = byte_mode.then(Vec::new);
    if byte_mode {
        for x in 0..objects {
            let (g, j) = (layout.group_of(x), layout.position(x));
            let mut buf = vec![0u8; codec.flen_bytes() * k as usize];
            rng.fill_bytes(&mut buf);
            let obj = ObjectData { object: x, content: Some(buf.into()) };
            let efis: Vec<Efi> = (0..nodes).chain(nodes..=nodes + j).collect();
            for frag in codec.encode(&obj, &efis)? {
                let node = if frag.efi < nodes { frag.efi } else { g };
                cluster.put(node, frag, 0.0)?;
            }
            originals.as_mut().expect("byte mode").push(obj);
        }
    } else {
        let all: Vec<ObjectId> = (0..objects).collect();
        for node in 0..nodes {
            cluster.put_markers(node, node, &all, 0.0)?;
            for m in 0..r {
                let group: Vec<ObjectId> = (m..r).map(|j| layout.object(node, j)).collect();
                cluster.put_markers(node, nodes + m, &group, 0.0)?;
            }
        }
    }
    cluster.finish_preprocessing();
    Ok(AdvancedRepairer {
        cluster,
        codec,
        efis: EfiRotation::new(nodes, r),
        params,
        schedule,
        counter: (b > 0).then(|| RepairCounter::new(b as i64)),
        np: vec![true; nodes as usize],
        np_len: nodes,
        helpers_ok: vec![true; nodes as usize],
        fail_epoch: vec![0; nodes as usize],
        queue: VecDeque::new(),
        queued: vec![false; nodes as usize],
        moving: nodes,
        target: None,
        step: None,
        steps: Vec::new(),
        ops: None,
        originals,
        layout,
    })
}

impl AdvancedRepairer {
    pub fn layout(&self) -> &GroupLayout {
        &self.layout
    }

    pub fn efis(&self) -> &EfiRotation {
        &self.efis
    }

    pub fn schedule(&self) -> Option<&AdvancedSchedule> {
        self.schedule.as_ref()
    }

    pub fn in_progress(&self) -> bool {
        self.step.is_some()
    }

    pub fn primary_set(&self) -> Vec<NodeId> {
        (0..self.layout.nodes).filter(|&i| self.np[i as usize]).collect()
    }

    /// Starts recording every sub-algorithm invocation.
    pub fn record_ops(&mut self) {
        self.ops.get_or_insert_with(Vec::new);
    }

    pub fn ops(&self) -> &[OpRecord] {
        self.ops.as_deref().unwrap_or(&[])
    }

    fn log_op(&mut self, time: f64, kind: OpKind, node: NodeId, counts: OpCounts, voided: bool) {
        if let Some(ops) = self.ops.as_mut() {
            ops.push(OpRecord { time, kind, node, counts, voided });
        }
    }

    /// Reads `k` fragments of `object`: primaries in node order first, then
    /// helpers from the group node or the current target.
    fn read_sources(&mut self, object: ObjectId, time: f64) -> Result<Vec<Fragment>, RepairError> {
        let k = self.layout.k as usize;
        let mut out = Vec::with_capacity(k);
        for m in 0..self.layout.nodes {
            let e = self.efis.primary[m as usize];
            if self.cluster.store(m).contains(object, e) {
                out.push(self.cluster.read(m, object, e, time)?);
                if out.len() == k {
                    return Ok(out);
                }
            }
        }
        let rest: Vec<Efi> = self.cluster.efis_of(object).filter(|&e| self.efis.owner(e).is_none()).collect();
        let g = self.layout.group_of(object);
        for e in rest {
            let node =
                [Some(g), self.target].into_iter().flatten().find(|&n| self.cluster.store(n).contains(object, e));
            if let Some(n) = node {
                out.push(self.cluster.read(n, object, e, time)?);
                if out.len() == k {
                    return Ok(out);
                }
            }
        }
        Err(RepairError::Undecodable { object, time })
    }

    fn regenerate_into(
        &mut self,
        node: NodeId,
        read: &[Fragment],
        targets: &[Efi],
        time: f64,
    ) -> Result<u64, RepairError> {
        if targets.is_empty() {
            return Ok(0);
        }
        for f in self.codec.regenerate_many(read, targets)? {
            self.cluster.put(node, f, time)?;
        }
        Ok(targets.len() as u64)
    }

    fn generate_read(&mut self, g: NodeId, time: f64) -> Result<(Vec<Vec<Fragment>>, OpCounts), RepairError> {
        let mut reads = Vec::with_capacity(self.layout.r as usize);
        let mut counts = OpCounts::default();
        for j in 0..self.layout.r {
            let x = self.layout.object(g, j);
            let frags = self.read_sources(x, time)?;
            counts.reads += frags.len() as u64;
            reads.push(frags);
        }
        Ok((reads, counts))
    }

    /// Writes the missing helpers `h_0..h_j` of every position `j` of group `g`.
    fn generate_write(&mut self, g: NodeId, reads: &[Vec<Fragment>], time: f64) -> Result<u64, RepairError> {
        let mut writes = 0;
        for (j, read) in reads.iter().enumerate() {
            let x = self.layout.object(g, j as u32);
            let targets: Vec<Efi> = self
                .efis
                .helpers
                .iter()
                .take(j + 1)
                .copied()
                .filter(|&e| !self.cluster.store(g).contains(x, e))
                .collect();
            writes += self.regenerate_into(g, read, &targets, time)?;
        }
        self.helpers_ok[g as usize] = true;
        Ok(writes)
    }

    fn move_read(&mut self, from: NodeId, time: f64) -> Result<Vec<Fragment>, RepairError> {
        let e = self.moving;
        let objects: Vec<ObjectId> = (0..self.layout.r).map(|j| self.layout.object(from, j)).collect();
        if let Some(&x) = objects.iter().find(|&&x| !self.cluster.store(from).contains(x, e)) {
            return Err(RepairError::MissingHelper { node: from, object: x, efi: e });
        }
        let mut out = Vec::with_capacity(objects.len());
        for x in objects {
            out.push(self.cluster.read(from, x, e, time)?);
        }
        Ok(out)
    }

    fn move_write(&mut self, from: NodeId, to: NodeId, frags: Vec<Fragment>, time: f64) -> Result<u64, RepairError> {
        let n = frags.len() as u64;
        for f in frags {
            self.cluster.delete(from, f.object, f.efi)?;
            self.cluster.put(to, f, time)?;
        }
        Ok(n)
    }

    fn update_read(&mut self, g: NodeId, time: f64) -> Result<Vec<Fragment>, RepairError> {
        let x = self.layout.object(g, 0);
        self.read_sources(x, time)
    }

    /// Rotates group `g` and writes all `r` helpers of its new last object.
    fn update_write(&mut self, g: NodeId, read: &[Fragment], time: f64) -> Result<u64, RepairError> {
        let targets: Vec<Efi> = self.efis.helpers.iter().copied().collect();
        let writes = self.regenerate_into(g, read, &targets, time)?;
        self.layout.rotate(g);
        Ok(writes)
    }

    /// Regenerates helpers `h_0..h_j` of every object `x_{g,j}` onto node `g`.
    pub fn generate_helpers(&mut self, g: NodeId, time: f64) -> Result<OpCounts, RepairError> {
        let (reads, mut counts) = self.generate_read(g, time)?;
        counts.writes = self.generate_write(g, &reads, time)?;
        self.log_op(time, OpKind::Generate, g, counts, false);
        Ok(counts)
    }

    /// Moves the `h_0` helper of every object of group `from` to node `to`.
    pub fn move_helpers(&mut self, from: NodeId, to: NodeId, time: f64) -> Result<OpCounts, RepairError> {
        let frags = self.move_read(from, time)?;
        let reads = frags.len() as u64;
        let writes = self.move_write(from, to, frags, time)?;
        let counts = OpCounts { reads, writes };
        self.log_op(time, OpKind::Move, from, counts, false);
        Ok(counts)
    }

    /// Rotates group `g`; the old position 0 gets all `r` current helpers.
    pub fn update_helpers(&mut self, g: NodeId, time: f64) -> Result<OpCounts, RepairError> {
        let read = self.update_read(g, time)?;
        let writes = self.update_write(g, &read, time)?;
        let counts = OpCounts { reads: read.len() as u64, writes };
        self.log_op(time, OpKind::Update, g, counts, false);
        Ok(counts)
    }

    /// Deletes partial primaries left on `i` by an interrupted step. Their
    /// EFI becomes a helper EFI at this step's rotation.
    fn purge_stale(&mut self, i: NodeId) -> Result<(), RepairError> {
        let e = self.efis.primary[i as usize];
        let stale: Vec<ObjectId> =
            self.cluster.store(i).objects_with(e).map(|b| b.iter().collect()).unwrap_or_default();
        for x in stale {
            self.cluster.delete(i, x, e)?;
        }
        Ok(())
    }

    /// One whole repair step for `failed`, executed instantaneously.
    /// One whole repair step; the Poisson variant runs it without timing.
    pub fn advanced_repair_step(&mut self, failed: NodeId, time: f64) -> Result<StepRecord, RepairError> {
        let (r0, w0) = (self.cluster.total_read(), self.cluster.total_written());
        self.target = Some(failed);
        self.moving = self.efis.helpers[0];
        let nodes = self.layout.nodes;
        if self.counter.is_none() {
            self.generate_helpers(failed, time)?;
            self.efis.rotate(failed);
            for l in 0..nodes {
                self.move_helpers(l, failed, time)?;
                self.update_helpers(l, time)?;
            }
        } else {
            self.purge_stale(failed)?;
            for l in 0..nodes {
                loop {
                    if !self.helpers_ok[l as usize] {
                        self.generate_helpers(l, time)?;
                    }
                    match self.move_helpers(l, failed, time) {
                        Ok(_) => break,
                        Err(RepairError::MissingHelper { .. }) => self.helpers_ok[l as usize] = false,
                        Err(e) => return Err(e),
                    }
                }
            }
            self.efis.rotate(failed);
            for l in 0..nodes {
                self.update_helpers(l, time)?;
            }
        }
        self.target = None;
        let rec =
            StepRecord { bits_read: self.cluster.total_read() - r0, bits_written: self.cluster.total_written() - w0 };
        self.steps.push(rec);
        Ok(rec)
    }

    fn start_step(&mut self, time: f64, trace: &mut Trace) -> Result<(), RepairError> {
        let target = self.queue.pop_front();
        let counter = self.counter.map(|c| c.value());
        let sched = self.schedule.expect("timed steps need a schedule");
        let mut step = Step {
            target,
            target_failed: false,
            phase: Phase::Idle,
            op: None,
            idle_end: time + sched.step_time,
            bits_read: 0,
            bits_written: 0,
        };
        trace.push(time, "step_start", counter, 0, 0);
        if let Some(i) = target {
            self.queued[i as usize] = false;
            self.purge_stale(i)?;
            self.target = Some(i);
            self.moving = self.efis.helpers[0];
            step.phase = Phase::Move(0);
            self.advance(&mut step, time, trace)?;
        }
        self.step = Some(step);
        Ok(())
    }

    fn begin_op(&mut self, step: &mut Step, kind: OpKind, node: NodeId, time: f64) -> Result<(), RepairError> {
        let sched = self.schedule.expect("timed steps need a schedule");
        let (reads, counts, dur) = match kind {
            OpKind::Generate => {
                let (reads, counts) = self.generate_read(node, time)?;
                (reads, counts, sched.generate_time)
            }
            OpKind::Move => {
                let frags = self.move_read(node, time)?;
                let counts = OpCounts { reads: frags.len() as u64, writes: 0 };
                (vec![frags], counts, sched.op_time)
            }
            OpKind::Update => {
                let read = self.update_read(node, time)?;
                let counts = OpCounts { reads: read.len() as u64, writes: 0 };
                (vec![read], counts, sched.op_time)
            }
        };
        step.bits_read += counts.reads as u128 * self.layout.flen as u128;
        let epoch = self.fail_epoch[node as usize];
        step.op = Some(Pending { kind, node, end: time + dur, epoch, reads, counts });
        Ok(())
    }

    /// Starts the next sub-algorithm of the step, or completes it.
    fn advance(&mut self, step: &mut Step, time: f64, trace: &mut Trace) -> Result<(), RepairError> {
        let nodes = self.layout.nodes;
        loop {
            match step.phase {
                Phase::Move(l) if l == nodes => {
                    self.efis.rotate(step.target.expect("move phase has a target"));
                    step.phase = Phase::Update(0);
                }
                Phase::Move(l) => {
                    if !self.helpers_ok[l as usize] {
                        return self.begin_op(step, OpKind::Generate, l, time);
                    }
                    match self.begin_op(step, OpKind::Move, l, time) {
                        Err(RepairError::MissingHelper { .. }) => self.helpers_ok[l as usize] = false,
                        other => return other,
                    }
                }
                Phase::Update(l) if l == nodes => {
                    return self.complete(step, time, trace);
                }
                Phase::Update(l) => return self.begin_op(step, OpKind::Update, l, time),
                Phase::Idle => return Ok(()),
            }
        }
    }

    fn finish_op(&mut self, step: &mut Step, op: Pending, time: f64, trace: &mut Trace) -> Result<(), RepairError> {
        let voided = op.kind != OpKind::Update && self.fail_epoch[op.node as usize] != op.epoch;
        let mut counts = op.counts;
        if !voided {
            let mut reads = op.reads;
            counts.writes = match op.kind {
                OpKind::Generate => self.generate_write(op.node, &reads, time)?,
                OpKind::Move => {
                    let to = step.target.expect("move phase has a target");
                    self.move_write(op.node, to, reads.pop().expect("one batch"), time)?
                }
                OpKind::Update => self.update_write(op.node, &reads[0], time)?,
            };
            match (op.kind, step.phase) {
                (OpKind::Move, Phase::Move(l)) => step.phase = Phase::Move(l + 1),
                (OpKind::Update, Phase::Update(l)) => step.phase = Phase::Update(l + 1),
                _ => {}
            }
        }
        let flen = self.layout.flen as u128;
        step.bits_written += counts.writes as u128 * flen;
        let event = match (op.kind, voided) {
            (_, true) => "void",
            (OpKind::Generate, _) => "generate",
            (OpKind::Move, _) => "move",
            (OpKind::Update, _) => "update",
        };
        let counter = self.counter.map(|c| c.value());
        trace.push(time, event, counter, counts.reads as u128 * flen, counts.writes as u128 * flen);
        self.log_op(time, op.kind, op.node, counts, voided);
        Ok(())
    }

    fn complete(&mut self, step: &mut Step, time: f64, trace: &mut Trace) -> Result<(), RepairError> {
        if let Some(i) = step.target {
            if step.target_failed {
                self.enqueue(i);
            } else if !self.np[i as usize] {
                self.np[i as usize] = true;
                self.np_len += 1;
            }
        }
        self.target = None;
        step.phase = Phase::Idle;
        step.op = None;
        step.idle_end = f64::NAN;
        self.steps.push(StepRecord { bits_read: step.bits_read, bits_written: step.bits_written });
        let counter = self.counter.as_mut().expect("timed steps need a counter");
        counter.on_complete();
        trace.push(time, "step_complete", Some(counter.value()), step.bits_read, step.bits_written);
        Ok(())
    }

    fn enqueue(&mut self, node: NodeId) {
        if !self.queued[node as usize] {
            self.queued[node as usize] = true;
            self.queue.push_back(node);
        }
    }

    /// Checks the helper bullet for node `i`: `h_m` is stored exactly for
    /// positions `m..r` of group `i`.
    fn helper_census(&self, i: NodeId) -> Result<(), String> {
        let store = self.cluster.store(i);
        for (m, &e) in self.efis.helpers.iter().enumerate() {
            let held = store.objects_with(e).map_or(0, |b| b.len());
            let want = (self.layout.r as usize - m) as u64;
            if held != want {
                return Err(format!("node {i} holds helper h_{m} for {held} objects, expected {want}"));
            }
            for j in m as u32..self.layout.r {
                let x = self.layout.object(i, j);
                if !store.contains(x, e) {
                    return Err(format!("node {i} lacks helper h_{m} of position {j} (object {x})"));
                }
            }
        }
        Ok(())
    }

    fn primary_census(&self, i: NodeId) -> Result<(), String> {
        let e = self.efis.primary[i as usize];
        let held = self.cluster.store(i).objects_with(e).map_or(0, |b| b.len());
        if held != self.layout.objects() as u64 {
            return Err(format!("node {i} holds primary f_{i} for {held} of {} objects", self.layout.objects()));
        }
        Ok(())
    }
}

impl Repairer for AdvancedRepairer {
    fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    fn next_event_time(&self) -> Option<f64> {
        let step = self.step.as_ref()?;
        match &step.op {
            Some(op) => Some(op.end),
            None => Some(step.idle_end),
        }
    }

    fn on_event(&mut self, time: f64, trace: &mut Trace) -> Result<(), RepairError> {
        let Some(mut step) = self.step.take() else {
            return Ok(());
        };
        if let Some(op) = step.op.take() {
            self.finish_op(&mut step, op, time, trace)?;
            self.advance(&mut step, time, trace)?;
        } else if step.phase == Phase::Idle {
            self.complete(&mut step, time, trace)?;
        }
        if step.op.is_some() {
            self.step = Some(step);
        } else if self.counter.is_some_and(|c| c.busy()) {
            self.start_step(time, trace)?;
        }
        Ok(())
    }

    fn on_failure(&mut self, ev: FailureEvent, trace: &mut Trace) -> Result<(), RepairError> {
        let i = ev.node;
        self.cluster.fail_node(i, ev.time)?;
        let iu = i as usize;
        self.fail_epoch[iu] += 1;
        self.helpers_ok[iu] = false;
        let Some(counter) = self.counter.as_mut() else {
            trace.push(ev.time, "failure", None, 0, 0);
            let rec = self.advanced_repair_step(i, ev.time)?;
            trace.push(ev.time, "repair", None, rec.bits_read, rec.bits_written);
            return Ok(());
        };
        counter.on_failure();
        trace.push(ev.time, "failure", Some(counter.value()), 0, 0);
        if self.np[iu] {
            self.np[iu] = false;
            self.np_len -= 1;
        }
        match self.step.as_mut() {
            Some(s) if s.target == Some(i) => s.target_failed = true,
            _ => self.enqueue(i),
        }
        if self.step.is_none() {
            self.start_step(ev.time, trace)?;
        }
        Ok(())
    }

    fn check_invariants(&self) -> Result<(), String> {
        if !self.efis.distinct() {
            return Err("rotating EFIs are not distinct".into());
        }
        let nodes = self.layout.nodes;
        match self.counter {
            None => {
                for i in 0..nodes {
                    self.primary_census(i)?;
                    self.helper_census(i)?;
                    let used = self.cluster.store(i).used_bits();
                    if used != self.params.clen {
                        return Err(format!("node {i} uses {used} bits, expected {}", self.params.clen));
                    }
                }
            }
            Some(c) => {
                let need = self.layout.k as i64 + c.value();
                if c.value() >= 0 && (self.np_len as i64) < need {
                    return Err(format!("|N_p| = {} < k + b(t) = {need}", self.np_len));
                }
                let boundary = self.step.as_ref().is_none_or(|s| s.target.is_none());
                for i in (0..nodes).filter(|&i| self.np[i as usize]) {
                    self.primary_census(i)?;
                    if boundary {
                        self.helper_census(i)?;
                    }
                }
                if c.busy() != self.step.is_some() {
                    return Err("step in flight does not match the counter".into());
                }
            }
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
