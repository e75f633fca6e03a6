//! Discrete-event simulation of erasure-coded storage under node failures,
//! with liquid and advanced liquid repairers and closed-form bound evaluation.

// Parameter checks are written as `!(x > 0.0)` so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advanced;
pub mod bounds;
pub mod cluster;
pub mod erasure;
pub mod failure_gen;
pub mod liquid;
pub mod repair;
pub mod sim;

pub use advanced::{advanced_store, AdvancedParams, AdvancedRepairer, AdvancedVariant};
pub use bounds::{bound_report, BoundReport, BoundsError, EpsilonSet, SystemParams};
pub use cluster::{Census, Cluster, ClusterParams};
pub use erasure::{Backend, Codec, CodecParams, Efi, Fragment, ObjectData, ObjectId};
pub use failure_gen::{FailureEvent, IdentifierModel, NodeId, SeededRng, TimingModel};
pub use liquid::{liquid_store, LiquidParams, LiquidRepairer, LiquidVariant};
pub use repair::{RepairCounter, RepairError, Repairer, StepRecord, Trace};
pub use sim::{run_experiment, run_trial, ExperimentReport, RepairerKind, Scenario, SimError, Timing, TrialResult};
