use thiserror::Error;

use crate::domain::{HostId, VmId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("frequency index {index} out of range for host {host} ({levels} levels)")]
    FrequencyIndex {
        host: HostId,
        index: usize,
        levels: usize,
    },

    #[error("utilisation {0} outside [0, 1]")]
    Utilisation(f64),

    #[error("setpoint {setpoint_k} K outside configured range [{min_k}, {max_k}] K")]
    SetpointRange {
        setpoint_k: f64,
        min_k: f64,
        max_k: f64,
    },

    #[error("negative power {0} W")]
    NegativePower(f64),

    #[error("PUE undefined: IT power is zero")]
    PueUndefined,

    #[error("unknown host {0}")]
    UnknownHost(HostId),

    #[error("unknown VM {0}")]
    UnknownVm(VmId),

    #[error("VM {vm} is not hosted on {host}")]
    NotOnHost { vm: VmId, host: HostId },

    #[error("host {host} lacks RAM for VM {vm} ({needed_mb} MB needed, {free_mb} MB free)")]
    RamInfeasible {
        vm: VmId,
        host: HostId,
        needed_mb: u64,
        free_mb: u64,
    },

    #[error("plan powers off host {0} which still holds VMs")]
    PowerOffBusyHost(HostId),

    #[error("plan migrates VM {0} more than once")]
    DuplicateMigration(VmId),

    #[error("placement infeasible for VM {0}")]
    PlacementInfeasible(VmId),

    #[error("initial placement infeasible: VM {0} fits on no host")]
    InitialPlacement(VmId),

    #[error("missing demand series for VM {0}")]
    MissingDemand(VmId),

    #[error("trace line {line}, column {column}: {message}")]
    TraceRow {
        line: u64,
        column: usize,
        message: String,
    },

    #[error("trace line {line}: timestamp {timestamp} does not increase")]
    TraceTimestamp { line: u64, timestamp: u64 },

    #[error("trace contains no samples")]
    NoSamples,

    #[error("invalid parameter `{field}`: {message}")]
    InvalidParam { field: String, message: String },

    #[error("cannot compare runs of different durations ({0} s vs {1} s)")]
    DurationMismatch(u64, u64),

    #[error("no intervals to summarise")]
    EmptyRun,

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidParam {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
