//! Data-centre energy and thermal simulator with thermal- and DVFS-aware VM
//! consolidation.
//!
//! The crate is split the way a run flows:
//!
//! * [`domain`]: hosts, VMs, the cloneable room state (digital twin) and plans
//! * [`models`]: server power, chiller COP and inlet/CPU temperature models
//! * [`workload`]: trace ingestion and synthetic workload generation
//! * [`policies`]: overload/underload detection, best-fit-decreasing placement,
//!   DVFS and cooling-setpoint selection
//! * [`engine`]: the interval loop and migration accounting
//! * [`metrics`]: run summaries and policy comparisons
//! * [`config`]: the JSON run configuration

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod domain;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod models;
pub mod policies;
pub mod workload;

pub use domain::{
    capacity_mhz, clone_twin, validate, DataCentreState, DemandSample, HostId, HostSpec, HostState,
    Plan, RackId, VmId, VmSpec,
};
pub use engine::{run, Engine, IntervalMetrics, RunOutput, RunParams, Scenario};
pub use error::{Error, Result};
pub use metrics::{compare, summarize, ComparisonReport, RunSummary};
pub use models::ModelSet;
pub use policies::{ConfiguredPolicy, Criterion, NoOpPolicy, Policy, PolicyConfig};
pub use workload::{DemandSeries, SynthParams, VmWorkload};
