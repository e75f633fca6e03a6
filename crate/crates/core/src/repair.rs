//! Interface shared by the repairers and the event loop.

use serde::Serialize;
use thiserror::Error;

use crate::cluster::{Census, Cluster, ClusterError};
use crate::erasure::{CodecError, ObjectId};
use crate::failure_gen::FailureEvent;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RepairError {
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("object {object} is not decodable at time {time}")]
    Undecodable { object: ObjectId, time: f64 },
    #[error("node {node} lacks helper EFI {efi} of object {object}")]
    MissingHelper { node: u32, object: ObjectId, efi: u32 },
    #[error("invalid repairer configuration: {0}")]
    Config(String),
}

/// One trace row: `time,event,counter,bitsRead,bitsWritten`. Bit columns are
/// the traffic of the event itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceLine {
    pub time: f64,
    pub event: &'static str,
    pub counter: Option<i64>,
    pub bits_read: u128,
    pub bits_written: u128,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub enabled: bool,
    pub lines: Vec<TraceLine>,
}

impl Trace {
    pub fn on() -> Self {
        Self { enabled: true, lines: Vec::new() }
    }

    pub fn push(&mut self, time: f64, event: &'static str, counter: Option<i64>, bits_read: u128, bits_written: u128) {
        if self.enabled {
            self.lines.push(TraceLine { time, event, counter, bits_read, bits_written });
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,event,counter,bitsRead,bitsWritten\n");
        for l in &self.lines {
            let counter = l.counter.map(|c| c.to_string()).unwrap_or_default();
            out.push_str(&format!("{:?},{},{},{},{}\n", l.time, l.event, counter, l.bits_read, l.bits_written));
        }
        out
    }
}

/// Traffic of one completed repair step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct StepRecord {
    pub bits_read: u128,
    pub bits_written: u128,
}

/// Slack counter `b(t)`: down on every failure, up (capped) on every
/// completed step. A step is in flight exactly while it is below the cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepairCounter {
    value: i64,
    cap: i64,
    min: i64,
}

impl RepairCounter {
    pub fn new(cap: i64) -> Self {
        Self { value: cap, cap, min: cap }
    }

    pub fn value(&self) -> i64 {
        self.value
    }

    pub fn cap(&self) -> i64 {
        self.cap
    }

    pub fn min(&self) -> i64 {
        self.min
    }

    pub fn busy(&self) -> bool {
        self.value < self.cap
    }

    pub fn on_failure(&mut self) {
        self.value -= 1;
        self.min = self.min.min(self.value);
    }

    pub fn on_complete(&mut self) {
        self.value = (self.value + 1).min(self.cap);
    }
}

pub trait Repairer {
    fn cluster(&self) -> &Cluster;

    /// Time of the next internally scheduled event, if any.
    fn next_event_time(&self) -> Option<f64>;

    /// Runs the internally scheduled event due at `time`.
    fn on_event(&mut self, time: f64, trace: &mut Trace) -> Result<(), RepairError>;

    /// Erases the failed node and reacts to the failure.
    fn on_failure(&mut self, ev: FailureEvent, trace: &mut Trace) -> Result<(), RepairError>;

    /// Structural invariants; an `Err` is a bug, not data loss.
    fn check_invariants(&self) -> Result<(), String>;

    fn counter(&self) -> Option<RepairCounter> {
        None
    }

    fn steps(&self) -> &[StepRecord];

    /// Full recoverability census, with a bit-exact decode in byte mode.
    fn census(&self) -> Census;
}
