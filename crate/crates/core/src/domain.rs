//! Core data model: host and VM descriptions, the live room state that the
//! engine mutates, and the plan a policy hands back.
//!
//! [`DataCentreState`] doubles as the digital twin. It owns all of its data
//! (no `Rc`, no interior mutability), so `clone` yields a fully isolated copy
//! that planners can mutate freely.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(HostId);
string_id!(VmId);
string_id!(RackId);

/// Clock ladder of the reference server (Xeon E5620), in GHz.
pub const DEFAULT_FREQ_LEVELS_GHZ: [f64; 6] = [1.73, 1.86, 2.13, 2.26, 2.39, 2.40];

/// Static description of a physical server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostSpec {
    pub id: HostId,
    pub cores: u32,
    /// Per-core MHz at the top of the frequency ladder.
    pub mips_per_core: f64,
    pub ram_mb: u64,
    /// Ascending; the last entry is the reference maximum.
    pub freq_levels_ghz: Vec<f64>,
    pub p_idle_w: f64,
    pub p_max_w: f64,
    pub r_thermal_k_per_w: f64,
    pub rack_id: RackId,
}

impl HostSpec {
    /// Four-core 2.4 GHz server with 16 GiB, 75 W idle and 250 W peak.
    pub fn reference(id: impl Into<HostId>, rack_id: impl Into<RackId>) -> Self {
        Self {
            id: id.into(),
            cores: 4,
            mips_per_core: 2400.0,
            ram_mb: 16384,
            freq_levels_ghz: DEFAULT_FREQ_LEVELS_GHZ.to_vec(),
            p_idle_w: 75.0,
            p_max_w: 250.0,
            r_thermal_k_per_w: 0.15,
            rack_id: rack_id.into(),
        }
    }

    pub fn max_freq_idx(&self) -> usize {
        self.freq_levels_ghz.len().saturating_sub(1)
    }

    pub fn f_max_ghz(&self) -> f64 {
        *self.freq_levels_ghz.last().unwrap_or(&0.0)
    }

    /// Frequency at `freq_idx` as a fraction of the reference maximum.
    pub fn freq_ratio(&self, freq_idx: usize) -> Result<f64> {
        let f = self
            .freq_levels_ghz
            .get(freq_idx)
            .ok_or_else(|| Error::FrequencyIndex {
                host: self.id.clone(),
                index: freq_idx,
                levels: self.freq_levels_ghz.len(),
            })?;
        Ok(f / self.f_max_ghz())
    }

    fn violations(&self, out: &mut Vec<Violation>) {
        let subject = format!("host {}", self.id);
        let levels = &self.freq_levels_ghz;
        if levels.is_empty() || levels.windows(2).any(|w| w[0] >= w[1]) || levels[0] <= 0.0 {
            out.push(Violation::new(&subject, ViolationKind::FrequencyLadder));
        }
        if !(self.p_idle_w > 0.0 && self.p_idle_w < self.p_max_w) {
            out.push(Violation::new(&subject, ViolationKind::PowerRange));
        }
        if self.cores == 0 {
            out.push(Violation::new(&subject, ViolationKind::NoCores));
        }
        if !(self.r_thermal_k_per_w >= 0.0) {
            out.push(Violation::new(
                &subject,
                ViolationKind::NegativeThermalResistance,
            ));
        }
    }
}

/// CPU capacity of a host in MHz at the given ladder position.
///
/// Capacity scales linearly with clock: `cores * mips_per_core * f / f_max`.
pub fn capacity_mhz(spec: &HostSpec, freq_idx: usize) -> Result<f64> {
    let ratio = spec.freq_ratio(freq_idx)?;
    Ok(f64::from(spec.cores) * spec.mips_per_core * ratio)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmSpec {
    pub id: VmId,
    pub cores: u32,
    pub ram_mb: u64,
}

impl VmSpec {
    pub fn new(id: impl Into<VmId>, cores: u32, ram_mb: u64) -> Self {
        Self {
            id: id.into(),
            cores,
            ram_mb,
        }
    }
}

/// One row of resource demand.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DemandSample {
    pub t_s: u64,
    pub cpu_mhz: f64,
    pub mem_kb: f64,
    pub disk_rd_kbs: f64,
    pub disk_wr_kbs: f64,
    pub net_rx_kbs: f64,
    pub net_tx_kbs: f64,
}

impl DemandSample {
    pub fn cpu(t_s: u64, cpu_mhz: f64) -> Self {
        Self {
            t_s,
            cpu_mhz,
            ..Self::default()
        }
    }

    fn is_non_negative(&self) -> bool {
        [
            self.cpu_mhz,
            self.mem_kb,
            self.disk_rd_kbs,
            self.disk_wr_kbs,
            self.net_rx_kbs,
            self.net_tx_kbs,
        ]
        .iter()
        .all(|v| *v >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmState {
    pub spec: VmSpec,
    pub demand: DemandSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostState {
    pub spec: HostSpec,
    pub active: bool,
    pub freq_idx: usize,
    pub vms: BTreeSet<VmId>,
    pub ram_used_mb: u64,
    pub demand_mhz: f64,
    /// Demand over capacity at the current frequency, clamped to [0, 1].
    pub util: f64,
    /// Same ratio without the clamp; exceeds 1 when CPU is oversubscribed.
    pub load_ratio: f64,
    pub power_w: f64,
    pub inlet_temp_k: f64,
    pub cpu_temp_k: f64,
}

impl HostState {
    /// A powered-off host at the top of its frequency ladder.
    pub fn new(spec: HostSpec) -> Self {
        let freq_idx = spec.max_freq_idx();
        Self {
            spec,
            active: false,
            freq_idx,
            vms: BTreeSet::new(),
            ram_used_mb: 0,
            demand_mhz: 0.0,
            util: 0.0,
            load_ratio: 0.0,
            power_w: 0.0,
            inlet_temp_k: 0.0,
            cpu_temp_k: 0.0,
        }
    }

    pub fn id(&self) -> &HostId {
        &self.spec.id
    }

    pub fn ram_free_mb(&self) -> u64 {
        self.spec.ram_mb.saturating_sub(self.ram_used_mb)
    }

    pub fn capacity_mhz(&self) -> f64 {
        capacity_mhz(&self.spec, self.freq_idx).unwrap_or(0.0)
    }

    /// Recompute `util` and `load_ratio` from `demand_mhz` at the current
    /// frequency.
    pub fn refresh_util(&mut self) {
        let cap = self.capacity_mhz();
        self.load_ratio = if cap > 0.0 {
            self.demand_mhz / cap
        } else {
            0.0
        };
        self.util = self.load_ratio.clamp(0.0, 1.0);
    }

    pub fn set_freq(&mut self, freq_idx: usize) {
        self.freq_idx = freq_idx;
        self.refresh_util();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoolingState {
    pub setpoint_k: f64,
    pub cop: f64,
    pub power_w: f64,
}

/// Default inlet ceiling, kelvin.
pub const DEFAULT_INLET_LIMIT_K: f64 = 303.0;

/// The room: hosts, VMs, the VM→host mapping and the cooling plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataCentreState {
    pub clock_s: u64,
    /// Sorted by host id.
    pub hosts: Vec<HostState>,
    pub vms: BTreeMap<VmId, VmState>,
    pub mapping: BTreeMap<VmId, HostId>,
    pub cooling: CoolingState,
    pub setpoint_range_k: (f64, f64),
    pub inlet_limit_k: f64,
}

impl DataCentreState {
    /// Build a room with every host powered off and no VMs.
    pub fn new(mut specs: Vec<HostSpec>, setpoint_k: f64, setpoint_range_k: (f64, f64)) -> Self {
        specs.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            clock_s: 0,
            hosts: specs.into_iter().map(HostState::new).collect(),
            vms: BTreeMap::new(),
            mapping: BTreeMap::new(),
            cooling: CoolingState {
                setpoint_k,
                cop: 1.0,
                power_w: 0.0,
            },
            setpoint_range_k,
            inlet_limit_k: DEFAULT_INLET_LIMIT_K,
        }
    }

    pub fn host_index(&self, id: &HostId) -> Option<usize> {
        self.hosts.binary_search_by(|h| h.spec.id.cmp(id)).ok()
    }

    pub fn host(&self, id: &HostId) -> Option<&HostState> {
        self.host_index(id).map(|i| &self.hosts[i])
    }

    pub fn host_mut(&mut self, id: &HostId) -> Option<&mut HostState> {
        self.host_index(id).map(move |i| &mut self.hosts[i])
    }

    pub fn active_hosts(&self) -> usize {
        self.hosts.iter().filter(|h| h.active).count()
    }

    pub fn add_vm(&mut self, spec: VmSpec) {
        let demand = DemandSample::default();
        self.vms.insert(spec.id.clone(), VmState { spec, demand });
    }

    /// Set a VM's current demand and propagate it to its host's totals.
    pub fn set_demand(&mut self, vm: &VmId, demand: DemandSample) -> Result<()> {
        let state = self
            .vms
            .get_mut(vm)
            .ok_or_else(|| Error::UnknownVm(vm.clone()))?;
        let delta = demand.cpu_mhz - state.demand.cpu_mhz;
        state.demand = demand;
        if let Some(host) = self.mapping.get(vm).cloned() {
            let h = self.host_mut(&host).ok_or(Error::UnknownHost(host))?;
            h.demand_mhz += delta;
            h.refresh_util();
        }
        Ok(())
    }

    /// Recompute every host's demand from scratch (drops accumulated float
    /// drift from incremental updates).
    pub fn resum_demand(&mut self) {
        for h in &mut self.hosts {
            h.demand_mhz = h.vms.iter().map(|v| self.vms[v].demand.cpu_mhz).sum();
            h.ram_used_mb = h.vms.iter().map(|v| self.vms[v].spec.ram_mb).sum();
            h.refresh_util();
        }
    }

    /// Remove a VM from its host. The host is powered off if it becomes
    /// empty. Returns the former host index.
    pub fn detach_vm(&mut self, vm: &VmId) -> Result<usize> {
        let host = self
            .mapping
            .remove(vm)
            .ok_or_else(|| Error::UnknownVm(vm.clone()))?;
        let idx = self.host_index(&host).ok_or(Error::UnknownHost(host))?;
        let vs = &self.vms[vm];
        let (ram, cpu) = (vs.spec.ram_mb, vs.demand.cpu_mhz);
        let h = &mut self.hosts[idx];
        h.vms.remove(vm);
        h.ram_used_mb -= ram;
        if h.vms.is_empty() {
            h.demand_mhz = 0.0;
            h.active = false;
        } else {
            h.demand_mhz -= cpu;
        }
        h.refresh_util();
        Ok(idx)
    }

    /// Put an unmapped VM onto a host, powering the host on. RAM is a hard
    /// limit.
    pub fn attach_vm(&mut self, vm: &VmId, host_idx: usize) -> Result<()> {
        let vs = self
            .vms
            .get(vm)
            .ok_or_else(|| Error::UnknownVm(vm.clone()))?;
        let (ram, cpu) = (vs.spec.ram_mb, vs.demand.cpu_mhz);
        let h = &mut self.hosts[host_idx];
        if ram > h.ram_free_mb() {
            return Err(Error::RamInfeasible {
                vm: vm.clone(),
                host: h.spec.id.clone(),
                needed_mb: ram,
                free_mb: h.ram_free_mb(),
            });
        }
        h.vms.insert(vm.clone());
        h.ram_used_mb += ram;
        h.demand_mhz += cpu;
        h.active = true;
        h.refresh_util();
        self.mapping.insert(vm.clone(), h.spec.id.clone());
        Ok(())
    }

    /// Summed power of each rack's hosts, keyed by rack id.
    pub fn rack_powers(&self) -> BTreeMap<&RackId, f64> {
        let mut out = BTreeMap::new();
        for h in &self.hosts {
            *out.entry(&h.spec.rack_id).or_insert(0.0) += h.power_w;
        }
        out
    }
}

/// Deep copy of the room for what-if evaluation.
pub fn clone_twin(state: &DataCentreState) -> DataCentreState {
    state.clone()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Migration {
    pub vm: VmId,
    pub src: HostId,
    pub dst: HostId,
}

/// Output of one planning round.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Plan {
    pub migrations: Vec<Migration>,
    pub freq_assignment: BTreeMap<HostId, usize>,
    /// `None` keeps the current setpoint.
    pub setpoint_k: Option<f64>,
    pub placements: Vec<(VmId, HostId)>,
    /// Hosts to switch off; each must be empty once migrations are applied.
    pub power_off: Vec<HostId>,
    /// VMs the planner wanted to move but could not place; they stay put.
    pub unplaced: Vec<VmId>,
    /// Set when no setpoint in range keeps every inlet under the limit.
    pub thermal_violation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    FrequencyLadder,
    PowerRange,
    NoCores,
    NegativeThermalResistance,
    FrequencyIndex,
    InactiveHostBusy,
    InactiveHostPowered,
    RamOversubscription,
    RamAccounting,
    DemandAccounting,
    UtilRange,
    MappingInconsistency,
    UnmappedVm,
    UnknownVm,
    VmShape,
    NegativeDemand,
    SetpointRange,
    CopNonPositive,
    NegativeCoolingPower,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::FrequencyLadder => "frequency ladder not strictly ascending",
            ViolationKind::PowerRange => "p_idle outside (0, p_max)",
            ViolationKind::NoCores => "zero cores",
            ViolationKind::NegativeThermalResistance => "negative thermal resistance",
            ViolationKind::FrequencyIndex => "frequency index out of range",
            ViolationKind::InactiveHostBusy => "inactive host holds VMs",
            ViolationKind::InactiveHostPowered => "inactive host draws power",
            ViolationKind::RamOversubscription => "RAM oversubscription",
            ViolationKind::RamAccounting => "RAM accounting mismatch",
            ViolationKind::DemandAccounting => "CPU demand accounting mismatch",
            ViolationKind::UtilRange => "util outside [0, 1]",
            ViolationKind::MappingInconsistency => "mapping inconsistency",
            ViolationKind::UnmappedVm => "VM not mapped to any host",
            ViolationKind::UnknownVm => "host lists unknown VM",
            ViolationKind::VmShape => "VM needs cores >= 1 and ram > 0",
            ViolationKind::NegativeDemand => "negative demand",
            ViolationKind::SetpointRange => "setpoint outside range",
            ViolationKind::CopNonPositive => "COP not positive",
            ViolationKind::NegativeCoolingPower => "negative cooling power",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Host, VM or subsystem the violation is about.
    pub subject: String,
    pub kind: ViolationKind,
}

impl Violation {
    fn new(subject: &str, kind: ViolationKind) -> Self {
        Self {
            subject: subject.to_owned(),
            kind,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.kind)
    }
}

const ACCOUNTING_TOL: f64 = 1e-6;

/// Check every structural invariant of the room. An empty result means the
/// state is consistent.
pub fn validate(state: &DataCentreState) -> Vec<Violation> {
    let mut out = Vec::new();

    for h in &state.hosts {
        h.spec.violations(&mut out);
        let subject = format!("host {}", h.spec.id);
        if h.freq_idx >= h.spec.freq_levels_ghz.len() {
            out.push(Violation::new(&subject, ViolationKind::FrequencyIndex));
        }
        if !h.active && !h.vms.is_empty() {
            out.push(Violation::new(&subject, ViolationKind::InactiveHostBusy));
        }
        if !h.active && h.power_w != 0.0 {
            out.push(Violation::new(&subject, ViolationKind::InactiveHostPowered));
        }
        if !(0.0..=1.0).contains(&h.util) {
            out.push(Violation::new(&subject, ViolationKind::UtilRange));
        }

        let known: Vec<&VmState> = h.vms.iter().filter_map(|v| state.vms.get(v)).collect();
        if known.len() != h.vms.len() {
            out.push(Violation::new(&subject, ViolationKind::UnknownVm));
        }
        let ram: u64 = known.iter().map(|v| v.spec.ram_mb).sum();
        if ram > h.spec.ram_mb {
            out.push(Violation::new(&subject, ViolationKind::RamOversubscription));
        } else if ram != h.ram_used_mb {
            out.push(Violation::new(&subject, ViolationKind::RamAccounting));
        }
        let cpu: f64 = known.iter().map(|v| v.demand.cpu_mhz).sum();
        if (cpu - h.demand_mhz).abs() > ACCOUNTING_TOL * cpu.abs().max(1.0) {
            out.push(Violation::new(&subject, ViolationKind::DemandAccounting));
        }
    }

    for (id, vm) in &state.vms {
        let subject = format!("vm {id}");
        if vm.spec.cores == 0 || vm.spec.ram_mb == 0 {
            out.push(Violation::new(&subject, ViolationKind::VmShape));
        }
        if !vm.demand.is_non_negative() {
            out.push(Violation::new(&subject, ViolationKind::NegativeDemand));
        }
        let holders: Vec<&HostId> = state
            .hosts
            .iter()
            .filter(|h| h.vms.contains(id))
            .map(|h| &h.spec.id)
            .collect();
        match state.mapping.get(id) {
            None => out.push(Violation::new(&subject, ViolationKind::UnmappedVm)),
            Some(host) if holders.as_slice() != [host] => out.push(Violation::new(
                &subject,
                ViolationKind::MappingInconsistency,
            )),
            Some(_) => {}
        }
    }
    for vm in state.mapping.keys() {
        if !state.vms.contains_key(vm) {
            out.push(Violation::new(
                &format!("vm {vm}"),
                ViolationKind::MappingInconsistency,
            ));
        }
    }

    let (lo, hi) = state.setpoint_range_k;
    let c = &state.cooling;
    if !(lo..=hi).contains(&c.setpoint_k) {
        out.push(Violation::new("cooling", ViolationKind::SetpointRange));
    }
    if !(c.cop > 0.0) {
        out.push(Violation::new("cooling", ViolationKind::CopNonPositive));
    }
    if !(c.power_w >= 0.0) {
        out.push(Violation::new(
            "cooling",
            ViolationKind::NegativeCoolingPower,
        ));
    }
    out
}
