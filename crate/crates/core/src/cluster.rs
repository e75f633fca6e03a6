//! Node stores, interface meters and the fragment census.
//!
//! Every fragment in a cluster has the same size `flen`. A given
//! `(object, efi)` pair lives on at most one node. Reads and writes are
//! instantaneous at the time passed in; only reads and writes of repair
//! traffic are metered, storer writes go to a separate preprocessing bucket.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use roaring::RoaringBitmap;
use serde::Serialize;
use thiserror::Error;

use crate::erasure::{Codec, CodecError, Efi, Fragment, ObjectData, ObjectId, Payload};
use crate::failure_gen::NodeId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClusterError {
    #[error("node {node}: storing {flen} bits on top of {used} exceeds clen = {clen}")]
    CapacityExceeded { node: NodeId, used: u64, flen: u64, clen: u64 },
    #[error("node {node} holds no fragment (object {object}, EFI {efi})")]
    Missing { node: NodeId, object: ObjectId, efi: Efi },
    #[error("fragment (object {object}, EFI {efi}) already stored on another node")]
    Duplicate { object: ObjectId, efi: Efi },
    #[error("{what} {value} out of range (limit {limit})")]
    OutOfRange { what: &'static str, value: u64, limit: u64 },
    #[error("byte-mode cluster needs a payload of {expected} bytes")]
    Payload { expected: usize },
    #[error("invalid cluster parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Default)]
pub struct NodeStore {
    /// EFI -> objects whose fragment with that EFI is stored here.
    index: BTreeMap<Efi, RoaringBitmap>,
    used_bits: u64,
    fragments: u64,
}

impl NodeStore {
    pub fn used_bits(&self) -> u64 {
        self.used_bits
    }

    pub fn fragment_count(&self) -> u64 {
        self.fragments
    }

    pub fn objects_with(&self, efi: Efi) -> Option<&RoaringBitmap> {
        self.index.get(&efi)
    }

    pub fn contains(&self, object: ObjectId, efi: Efi) -> bool {
        self.index.get(&efi).is_some_and(|b| b.contains(object))
    }

    /// `(efi, objects)` pairs in ascending EFI order.
    pub fn iter(&self) -> impl Iterator<Item = (Efi, &RoaringBitmap)> {
        self.index.iter().map(|(e, b)| (*e, b))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct InterfaceMeter {
    pub bits_read: u128,
    pub bits_written: u128,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MeterWindow {
    pub bits_read: u128,
    pub bits_written: u128,
    pub avg_read_rate: f64,
    pub peak_read_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loss {
    pub time: f64,
    pub object: ObjectId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Census {
    /// Objects with fewer than `k` distinct stored EFIs.
    pub lost: Vec<ObjectId>,
    /// Byte mode only: objects that decoded to something other than the source.
    pub corrupted: Vec<ObjectId>,
}

impl Census {
    pub fn recoverable(&self) -> bool {
        self.lost.is_empty() && self.corrupted.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterParams {
    pub nodes: u32,
    pub clen: u64,
    pub flen: u64,
    pub objects: u32,
    /// Number of distinct EFIs, `n`.
    pub efis: u32,
    /// Decodability threshold.
    pub k: u32,
    pub byte_mode: bool,
}

#[derive(Debug, Clone)]
pub struct Cluster {
    p: ClusterParams,
    stores: Vec<NodeStore>,
    meters: Vec<InterfaceMeter>,
    words: usize,
    presence: Vec<u64>,
    counts: Vec<u32>,
    below_k: u32,
    first_loss: Option<Loss>,
    payloads: HashMap<(ObjectId, Efi), Payload>,
    preprocessing: bool,
    preprocessing_written: u128,
    read_log: Vec<(f64, u128)>,
    write_log: Vec<(f64, u128)>,
    now: f64,
}

fn push_log(log: &mut Vec<(f64, u128)>, time: f64, bits: u128) {
    match log.last_mut() {
        Some((t, b)) if *t == time => *b += bits,
        _ => log.push((time, bits)),
    }
}

impl Cluster {
    /// Empty cluster in preprocessing mode; objects start below threshold.
    pub fn new(p: ClusterParams) -> Result<Self, ClusterError> {
        if p.nodes == 0 || p.flen == 0 || p.clen < p.flen || p.k == 0 || p.k > p.efis {
            return Err(ClusterError::Params(format!("{p:?}")));
        }
        if p.byte_mode && !p.flen.is_multiple_of(8) {
            return Err(ClusterError::Params(format!("byte mode needs flen divisible by 8, got {}", p.flen)));
        }
        let words = (p.efis as usize).div_ceil(64);
        Ok(Self {
            p,
            stores: vec![NodeStore::default(); p.nodes as usize],
            meters: vec![InterfaceMeter::default(); p.nodes as usize],
            words,
            presence: vec![0; words * p.objects as usize],
            counts: vec![0; p.objects as usize],
            below_k: p.objects,
            first_loss: None,
            payloads: HashMap::new(),
            preprocessing: true,
            preprocessing_written: 0,
            read_log: Vec::new(),
            write_log: Vec::new(),
            now: 0.0,
        })
    }

    pub fn params(&self) -> ClusterParams {
        self.p
    }

    pub fn nodes(&self) -> u32 {
        self.p.nodes
    }

    pub fn flen(&self) -> u64 {
        self.p.flen
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Ends the storer phase: later writes count as repair traffic, and an
    /// object dropping below `k` from here on is a loss.
    pub fn finish_preprocessing(&mut self) {
        self.preprocessing = false;
    }

    pub fn preprocessing_written(&self) -> u128 {
        self.preprocessing_written
    }

    pub fn store(&self, node: NodeId) -> &NodeStore {
        &self.stores[node as usize]
    }

    pub fn meter(&self, node: NodeId) -> InterfaceMeter {
        self.meters[node as usize]
    }

    pub fn total_read(&self) -> u128 {
        self.meters.iter().map(|m| m.bits_read).sum()
    }

    pub fn total_written(&self) -> u128 {
        self.meters.iter().map(|m| m.bits_written).sum()
    }

    pub fn read_log(&self) -> &[(f64, u128)] {
        &self.read_log
    }

    fn check(&self, node: NodeId, object: ObjectId, efi: Efi) -> Result<(), ClusterError> {
        if node >= self.p.nodes {
            return Err(ClusterError::OutOfRange { what: "node", value: node as u64, limit: self.p.nodes as u64 });
        }
        if object >= self.p.objects {
            return Err(ClusterError::OutOfRange {
                what: "object",
                value: object as u64,
                limit: self.p.objects as u64,
            });
        }
        if efi >= self.p.efis {
            return Err(ClusterError::OutOfRange { what: "EFI", value: efi as u64, limit: self.p.efis as u64 });
        }
        Ok(())
    }

    fn bit(&self, object: ObjectId, efi: Efi) -> (usize, u64) {
        (object as usize * self.words + efi as usize / 64, 1u64 << (efi % 64))
    }

    /// Whether `(object, efi)` is stored anywhere.
    pub fn has(&self, object: ObjectId, efi: Efi) -> bool {
        let (w, m) = self.bit(object, efi);
        self.presence[w] & m != 0
    }

    /// Distinct EFIs stored for `object`.
    pub fn count(&self, object: ObjectId) -> u32 {
        self.counts[object as usize]
    }

    /// Stored EFIs of `object`, ascending.
    pub fn efis_of(&self, object: ObjectId) -> impl Iterator<Item = Efi> + '_ {
        let base = object as usize * self.words;
        self.presence[base..base + self.words].iter().enumerate().flat_map(|(w, &bits)| {
            let mut bits = bits;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros();
                bits &= bits - 1;
                Some(w as Efi * 64 + tz)
            })
        })
    }

    pub fn put(&mut self, node: NodeId, frag: Fragment, time: f64) -> Result<(), ClusterError> {
        self.check(node, frag.object, frag.efi)?;
        let flen = self.p.flen;
        let store = &self.stores[node as usize];
        let overwrite = store.contains(frag.object, frag.efi);
        if !overwrite && self.has(frag.object, frag.efi) {
            return Err(ClusterError::Duplicate { object: frag.object, efi: frag.efi });
        }
        if !overwrite && store.used_bits + flen > self.p.clen {
            return Err(ClusterError::CapacityExceeded { node, used: store.used_bits, flen, clen: self.p.clen });
        }
        if self.p.byte_mode {
            let expected = (flen / 8) as usize;
            match frag.payload {
                Some(ref p) if p.len() == expected => {
                    self.payloads.insert((frag.object, frag.efi), p.clone());
                }
                _ => return Err(ClusterError::Payload { expected }),
            }
        }
        self.now = time;
        if self.preprocessing {
            self.preprocessing_written += flen as u128;
        } else {
            self.meters[node as usize].bits_written += flen as u128;
            push_log(&mut self.write_log, time, flen as u128);
        }
        if overwrite {
            return Ok(());
        }
        let store = &mut self.stores[node as usize];
        store.index.entry(frag.efi).or_default().insert(frag.object);
        store.used_bits += flen;
        store.fragments += 1;
        let (w, m) = self.bit(frag.object, frag.efi);
        self.presence[w] |= m;
        let c = &mut self.counts[frag.object as usize];
        *c += 1;
        if *c == self.p.k {
            self.below_k -= 1;
        }
        Ok(())
    }

    /// Symbolic-mode bulk store of one EFI for many objects on one node.
    pub fn put_markers(&mut self, node: NodeId, efi: Efi, objects: &[ObjectId], time: f64) -> Result<(), ClusterError> {
        if self.p.byte_mode {
            return Err(ClusterError::Payload { expected: (self.p.flen / 8) as usize });
        }
        for &o in objects {
            self.check(node, o, efi)?;
            if self.has(o, efi) {
                return Err(ClusterError::Duplicate { object: o, efi });
            }
        }
        let flen = self.p.flen;
        let bits = objects.len() as u64 * flen;
        let store = &mut self.stores[node as usize];
        if store.used_bits + bits > self.p.clen {
            return Err(ClusterError::CapacityExceeded { node, used: store.used_bits, flen: bits, clen: self.p.clen });
        }
        let before = store.index.get(&efi).map_or(0, |b| b.len());
        store.index.entry(efi).or_default().extend(objects.iter().copied());
        if store.index[&efi].len() - before != objects.len() as u64 {
            return Err(ClusterError::Params("put_markers needs distinct objects".into()));
        }
        store.used_bits += bits;
        store.fragments += objects.len() as u64;
        self.now = time;
        if self.preprocessing {
            self.preprocessing_written += bits as u128;
        } else {
            self.meters[node as usize].bits_written += bits as u128;
            push_log(&mut self.write_log, time, bits as u128);
        }
        for &o in objects {
            let (w, m) = self.bit(o, efi);
            self.presence[w] |= m;
            let c = &mut self.counts[o as usize];
            *c += 1;
            if *c == self.p.k {
                self.below_k -= 1;
            }
        }
        Ok(())
    }

    /// Symbolic-mode convenience for [`Cluster::put`].
    pub fn put_marker(&mut self, node: NodeId, object: ObjectId, efi: Efi, time: f64) -> Result<(), ClusterError> {
        self.put(node, Fragment { object, efi, payload: None }, time)
    }

    /// Reads a fragment over the node interface; metered.
    pub fn read(&mut self, node: NodeId, object: ObjectId, efi: Efi, time: f64) -> Result<Fragment, ClusterError> {
        self.check(node, object, efi)?;
        if !self.stores[node as usize].contains(object, efi) {
            return Err(ClusterError::Missing { node, object, efi });
        }
        let flen = self.p.flen as u128;
        self.now = time;
        self.meters[node as usize].bits_read += flen;
        push_log(&mut self.read_log, time, flen);
        let payload = if self.p.byte_mode { self.payloads.get(&(object, efi)).cloned() } else { None };
        Ok(Fragment { object, efi, payload })
    }

    /// Removes a fragment without metering.
    pub fn delete(&mut self, node: NodeId, object: ObjectId, efi: Efi) -> Result<(), ClusterError> {
        self.check(node, object, efi)?;
        let store = &mut self.stores[node as usize];
        let removed = store.index.get_mut(&efi).is_some_and(|b| b.remove(object));
        if !removed {
            return Err(ClusterError::Missing { node, object, efi });
        }
        if store.index[&efi].is_empty() {
            store.index.remove(&efi);
        }
        store.used_bits -= self.p.flen;
        store.fragments -= 1;
        self.payloads.remove(&(object, efi));
        self.unmark(object, efi, self.now);
        Ok(())
    }

    fn unmark(&mut self, object: ObjectId, efi: Efi, time: f64) {
        let (w, m) = self.bit(object, efi);
        self.presence[w] &= !m;
        let c = &mut self.counts[object as usize];
        if *c == self.p.k {
            self.below_k += 1;
            if !self.preprocessing && self.first_loss.is_none() {
                self.first_loss = Some(Loss { time, object });
            }
        }
        *c -= 1;
    }

    /// Erases every fragment on `node`. Meters are kept.
    pub fn fail_node(&mut self, node: NodeId, time: f64) -> Result<u64, ClusterError> {
        if node >= self.p.nodes {
            return Err(ClusterError::OutOfRange { what: "node", value: node as u64, limit: self.p.nodes as u64 });
        }
        self.now = time;
        let store = std::mem::take(&mut self.stores[node as usize]);
        for (&efi, objects) in &store.index {
            for object in objects {
                if self.p.byte_mode {
                    self.payloads.remove(&(object, efi));
                }
                self.unmark(object, efi, time);
            }
        }
        Ok(store.fragments)
    }

    /// True while every object has at least `k` distinct stored EFIs.
    pub fn recoverable(&self) -> bool {
        self.below_k == 0
    }

    /// First time an object dropped below `k` after preprocessing.
    pub fn first_loss(&self) -> Option<Loss> {
        self.first_loss
    }

    /// All fragments currently stored for `object`, with payloads in byte mode.
    pub fn fragments_of(&self, object: ObjectId) -> Vec<Fragment> {
        self.efis_of(object)
            .map(|efi| Fragment { object, efi, payload: self.payloads.get(&(object, efi)).cloned() })
            .collect()
    }

    /// Per-object verdict. In byte mode, when `originals` is given, every
    /// decodable object is also decoded and compared bit for bit.
    pub fn census(&self, codec: Option<&Codec>, originals: Option<&[ObjectData]>) -> Census {
        let lost: Vec<ObjectId> = (0..self.p.objects).filter(|&o| self.counts[o as usize] < self.p.k).collect();
        let mut corrupted = Vec::new();
        if let (Some(codec), Some(originals), true) = (codec, originals, self.p.byte_mode) {
            for orig in originals {
                if lost.contains(&orig.object) {
                    continue;
                }
                match codec.decode(&self.fragments_of(orig.object)) {
                    Ok(dec) if dec.content == orig.content => {}
                    _ => corrupted.push(orig.object),
                }
            }
        }
        Census { lost, corrupted }
    }

    /// Aggregates metered traffic in `[t0, t1]`. The peak is the largest read
    /// volume in any half-open window `[s, s + width)` with `s` at a read
    /// time, divided by `width`.
    pub fn meter_window(&self, t0: f64, t1: f64, width: f64) -> MeterWindow {
        let in_range = |log: &[(f64, u128)]| -> (usize, usize) {
            (log.partition_point(|e| e.0 < t0), log.partition_point(|e| e.0 <= t1))
        };
        let (r0, r1) = in_range(&self.read_log);
        let (w0, w1) = in_range(&self.write_log);
        let reads = &self.read_log[r0..r1];
        let bits_read: u128 = reads.iter().map(|e| e.1).sum();
        let bits_written: u128 = self.write_log[w0..w1].iter().map(|e| e.1).sum();
        let span = t1 - t0;
        let avg_read_rate = if span > 0.0 { bits_read as f64 / span } else { 0.0 };
        MeterWindow { bits_read, bits_written, avg_read_rate, peak_read_rate: peak_rate(reads, width) }
    }

    /// Text dump of per-node usage and per-object fragment counts.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.stores.iter().enumerate() {
            let _ = writeln!(out, "node {i}: used {} fragments {}", s.used_bits, s.fragments);
        }
        for (o, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "object {o}: {c}");
        }
        out
    }
}

/// Peak rate over half-open sliding windows starting at each log entry.
pub fn peak_rate(log: &[(f64, u128)], width: f64) -> f64 {
    if !(width > 0.0) || log.is_empty() {
        return 0.0;
    }
    let mut best: u128 = 0;
    let mut sum: u128 = 0;
    let mut hi = 0;
    for lo in 0..log.len() {
        while hi < log.len() && log[hi].0 < log[lo].0 + width {
            sum += log[hi].1;
            hi += 1;
        }
        best = best.max(sum);
        sum -= log[lo].1;
    }
    best as f64 / width
}
