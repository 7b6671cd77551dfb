//! Resource-management policies.
//!
//! A planning round works on a clone of the live state:
//!
//! 1. refresh each host's frequency for its current demand,
//! 2. shed VMs from overloaded hosts (smallest RAM first) and place them
//!    best-fit-decreasing under the configured criterion,
//! 3. try to evacuate each underloaded host completely onto other active
//!    hosts, rolling back hosts that cannot be emptied,
//! 4. assign frequencies to every active host,
//! 5. pick the warmest cooling setpoint that keeps every inlet under the
//!    limit (or use the fixed baseline setpoint).
//!
//! Three placement criteria are provided: the two power-delta baselines and
//! the integrated frequency/utilisation criterion, which ranks hosts by
//! `(frequency steps added, -utilisation, power delta, host id)` and rejects
//! hosts whose rack would breach the inlet limit.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{
    capacity_mhz, clone_twin, DataCentreState, HostId, HostSpec, Migration, Plan, VmId,
};
use crate::error::{Error, Result};
use crate::models::ModelSet;

/// Inlet comparisons allow this much float slack.
pub const INLET_TOL_K: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    MinPowerIncrease,
    MaxPowerIncrease,
    IntegratedFreqUtil,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [
        Criterion::MinPowerIncrease,
        Criterion::MaxPowerIncrease,
        Criterion::IntegratedFreqUtil,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::MinPowerIncrease => "MinPowerIncrease",
            Criterion::MaxPowerIncrease => "MaxPowerIncrease",
            Criterion::IntegratedFreqUtil => "IntegratedFreqUtil",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::param("policy.criterion", format!("unknown criterion `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub overload_threshold: f64,
    pub underload_threshold: f64,
    pub criterion: Criterion,
    /// Baselines hold the cooling setpoint here instead of optimising it.
    pub fixed_setpoint_k: Option<f64>,
    pub dvfs_enabled: bool,
    pub inlet_limit_k: f64,
    /// `false` gives a control policy that never moves VMs.
    pub migration_enabled: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self::integrated()
    }
}

impl PolicyConfig {
    pub fn integrated() -> Self {
        Self {
            overload_threshold: 0.9,
            underload_threshold: 0.3,
            criterion: Criterion::IntegratedFreqUtil,
            fixed_setpoint_k: None,
            dvfs_enabled: true,
            inlet_limit_k: 303.0,
            migration_enabled: true,
        }
    }

    /// Power-only baseline: max frequency, setpoint held at 291 K.
    pub fn baseline(criterion: Criterion) -> Self {
        Self {
            criterion,
            fixed_setpoint_k: Some(291.0),
            dvfs_enabled: false,
            ..Self::integrated()
        }
    }

    /// Baseline that never migrates.
    pub fn no_migration() -> Self {
        Self {
            migration_enabled: false,
            ..Self::baseline(Criterion::MinPowerIncrease)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.underload_threshold > 0.0
            && self.underload_threshold < self.overload_threshold
            && self.overload_threshold <= 1.0)
        {
            let field = if self.overload_threshold > 1.0 || !(self.overload_threshold > 0.0) {
                "policy.overload_threshold"
            } else {
                "policy.underload_threshold"
            };
            return Err(Error::param(
                field,
                "need 0 < underload_threshold < overload_threshold <= 1",
            ));
        }
        if !self.inlet_limit_k.is_finite() {
            return Err(Error::param("policy.inlet_limit_k", "must be finite"));
        }
        if let Some(s) = self.fixed_setpoint_k {
            if !s.is_finite() {
                return Err(Error::param("policy.fixed_setpoint_k", "must be finite"));
            }
        }
        Ok(())
    }
}

fn host_idx(state: &DataCentreState, id: &HostId) -> Result<usize> {
    state
        .host_index(id)
        .ok_or_else(|| Error::UnknownHost(id.clone()))
}

/// Active hosts whose demand exceeds `overload_threshold` of capacity at the
/// current frequency, most loaded first.
pub fn detect_overloaded(state: &DataCentreState, cfg: &PolicyConfig) -> Vec<HostId> {
    let mut hits: Vec<(f64, &HostId)> = state
        .hosts
        .iter()
        .filter(|h| h.active && h.load_ratio > cfg.overload_threshold)
        .map(|h| (h.load_ratio, h.id()))
        .collect();
    hits.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    hits.into_iter().map(|(_, id)| id.clone()).collect()
}

/// Active, not overloaded hosts with util strictly below
/// `underload_threshold`, least loaded first.
pub fn detect_underloaded(state: &DataCentreState, cfg: &PolicyConfig) -> Vec<HostId> {
    let mut hits: Vec<(f64, &HostId)> = state
        .hosts
        .iter()
        .filter(|h| {
            h.active && h.load_ratio <= cfg.overload_threshold && h.util < cfg.underload_threshold
        })
        .map(|h| (h.util, h.id()))
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    hits.into_iter().map(|(_, id)| id.clone()).collect()
}

/// VMs to move off a host. Overloaded: smallest RAM first until the
/// remaining ratio is back under the threshold. Underloaded: everything.
pub fn select_vms_to_migrate(
    state: &DataCentreState,
    host: &HostId,
    cfg: &PolicyConfig,
) -> Result<Vec<VmId>> {
    let h = &state.hosts[host_idx(state, host)?];
    if !h.active {
        return Ok(Vec::new());
    }
    if h.load_ratio > cfg.overload_threshold {
        let cap = h.capacity_mhz();
        let mut vms: Vec<(u64, &VmId, f64)> = h
            .vms
            .iter()
            .map(|v| {
                let vs = &state.vms[v];
                (vs.spec.ram_mb, v, vs.demand.cpu_mhz)
            })
            .collect();
        vms.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        let mut demand = h.demand_mhz;
        let mut out = Vec::new();
        for (_, id, cpu) in vms {
            if demand <= cfg.overload_threshold * cap {
                break;
            }
            demand -= cpu;
            out.push(id.clone());
        }
        Ok(out)
    } else if h.util < cfg.underload_threshold {
        Ok(h.vms.iter().cloned().collect())
    } else {
        Ok(Vec::new())
    }
}

/// Lowest ladder index whose capacity, derated by the overload threshold,
/// covers `demand_mhz`; the top level when none does.
pub fn choose_frequency(spec: &HostSpec, demand_mhz: f64, cfg: &PolicyConfig) -> usize {
    (0..spec.freq_levels_ghz.len())
        .find(|&i| capacity_mhz(spec, i).unwrap_or(0.0) * cfg.overload_threshold >= demand_mhz)
        .unwrap_or_else(|| spec.max_freq_idx())
}

/// Frequency a host runs at under `cfg`: DVFS choice, or the top level.
pub fn target_frequency(spec: &HostSpec, demand_mhz: f64, cfg: &PolicyConfig) -> usize {
    if cfg.dvfs_enabled {
        choose_frequency(spec, demand_mhz, cfg)
    } else {
        spec.max_freq_idx()
    }
}

/// What a host would look like after receiving a VM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub was_active: bool,
    pub freq_before: usize,
    pub freq_after: usize,
    /// Demand over capacity at `freq_after`, unclamped.
    pub util_after: f64,
    pub power_before: f64,
    pub power_after: f64,
}

impl Projection {
    pub fn delta_power(&self) -> f64 {
        self.power_after - self.power_before
    }

    /// Ladder steps added; a host that is off counts as one step below the
    /// lowest level.
    pub fn delta_freq(&self) -> i64 {
        let before = if self.was_active {
            self.freq_before as i64
        } else {
            -1
        };
        self.freq_after as i64 - before
    }
}

pub fn project(
    twin: &DataCentreState,
    host: usize,
    vm: &VmId,
    models: &ModelSet,
    cfg: &PolicyConfig,
) -> Result<Projection> {
    let h = &twin.hosts[host];
    let v = twin
        .vms
        .get(vm)
        .ok_or_else(|| Error::UnknownVm(vm.clone()))?;
    let demand = h.demand_mhz + v.demand.cpu_mhz;
    let freq_after = target_frequency(&h.spec, demand, cfg);
    let cap = capacity_mhz(&h.spec, freq_after)?;
    let util_after = if cap > 0.0 { demand / cap } else { 0.0 };
    let power_after = models.host_power(&h.spec, true, util_after, freq_after)?;
    Ok(Projection {
        was_active: h.active,
        freq_before: h.freq_idx,
        freq_after,
        util_after,
        power_before: if h.active { h.power_w } else { 0.0 },
        power_after,
    })
}

/// Power added by placing `vm` on `host`; switching a host on counts its idle
/// draw. Lower is better.
pub fn score_min_power(
    twin: &DataCentreState,
    host: usize,
    vm: &VmId,
    models: &ModelSet,
    cfg: &PolicyConfig,
) -> Result<f64> {
    Ok(project(twin, host, vm, models, cfg)?.delta_power())
}

/// Same quantity as [`score_min_power`]; higher is better.
pub fn score_max_power(
    twin: &DataCentreState,
    host: usize,
    vm: &VmId,
    models: &ModelSet,
    cfg: &PolicyConfig,
) -> Result<f64> {
    score_min_power(twin, host, vm, models, cfg)
}

// Real-valued score parts are compared at micro resolution so that float
// noise never decides between hosts that are equal in exact arithmetic.
fn micro(x: f64) -> i64 {
    (x * 1e6).round() as i64
}

/// Lexicographic score of the integrated criterion; smaller is better.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct IntegratedScore {
    pub delta_freq: i64,
    /// Negated micro-utilisation, so that busier hosts sort first.
    pub neg_util: i64,
    pub delta_power: i64,
    pub host: HostId,
}

pub fn score_integrated(
    twin: &DataCentreState,
    host: usize,
    vm: &VmId,
    models: &ModelSet,
    cfg: &PolicyConfig,
) -> Result<IntegratedScore> {
    let p = project(twin, host, vm, models, cfg)?;
    Ok(IntegratedScore {
        delta_freq: p.delta_freq(),
        neg_util: -micro(p.util_after),
        delta_power: micro(p.delta_power()),
        host: twin.hosts[host].id().clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Score {
    Power(i64, HostId),
    Integrated(IntegratedScore),
}

fn score(
    twin: &DataCentreState,
    host: usize,
    vm: &VmId,
    models: &ModelSet,
    cfg: &PolicyConfig,
) -> Result<Score> {
    let id = twin.hosts[host].id().clone();
    Ok(match cfg.criterion {
        Criterion::MinPowerIncrease => {
            Score::Power(micro(score_min_power(twin, host, vm, models, cfg)?), id)
        }
        Criterion::MaxPowerIncrease => {
            Score::Power(-micro(score_max_power(twin, host, vm, models, cfg)?), id)
        }
        Criterion::IntegratedFreqUtil => {
            Score::Integrated(score_integrated(twin, host, vm, models, cfg)?)
        }
    })
}

/// One VM to place.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementRequest {
    pub vm: VmId,
    /// Only hosts that are already on may receive the VM.
    pub active_only: bool,
}

/// Whether `host` may receive `vm`: RAM headroom, CPU headroom at the top
/// frequency, not the VM's current host, and (integrated criterion) every
/// inlet of the host's rack within the limit at the twin's setpoint.
pub fn is_feasible(
    twin: &DataCentreState,
    host: usize,
    req: &PlacementRequest,
    home: Option<usize>,
    models: &ModelSet,
    cfg: &PolicyConfig,
) -> Result<bool> {
    if home == Some(host) {
        return Ok(false);
    }
    let h = &twin.hosts[host];
    if req.active_only && !h.active {
        return Ok(false);
    }
    let v = twin
        .vms
        .get(&req.vm)
        .ok_or_else(|| Error::UnknownVm(req.vm.clone()))?;
    if v.spec.ram_mb > h.ram_free_mb() {
        return Ok(false);
    }
    let top = capacity_mhz(&h.spec, h.spec.max_freq_idx())?;
    if h.demand_mhz + v.demand.cpu_mhz > cfg.overload_threshold * top {
        return Ok(false);
    }
    if cfg.criterion == Criterion::IntegratedFreqUtil {
        let p = project(twin, host, &req.vm, models, cfg)?;
        let rack = &h.spec.rack_id;
        let (powers, live): (Vec<f64>, Vec<bool>) = twin
            .hosts
            .iter()
            .enumerate()
            .filter(|(_, o)| &o.spec.rack_id == rack)
            .map(|(i, o)| {
                if i == host {
                    (p.power_after, true)
                } else {
                    (o.power_w, o.active)
                }
            })
            .unzip();
        let hottest = models
            .thermal
            .rack_inlets(twin.cooling.setpoint_k, &powers)
            .into_iter()
            .zip(live)
            .filter(|(_, on)| *on)
            .fold(f64::MIN, |m, (t, _)| m.max(t));
        if hottest > cfg.inlet_limit_k + INLET_TOL_K {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Re-derive a host's frequency and power in the twin after its load changed.
fn refresh_host(
    twin: &mut DataCentreState,
    host: usize,
    models: &ModelSet,
    cfg: &PolicyConfig,
) -> Result<()> {
    let h = &mut twin.hosts[host];
    if h.active {
        let f = target_frequency(&h.spec, h.demand_mhz, cfg);
        h.set_freq(f);
    }
    h.power_w = models.host_power(&h.spec, h.active, h.util, h.freq_idx)?;
    Ok(())
}

/// View of one best-fit-decreasing step, handed to observers before the
/// chosen host is committed.
#[derive(Debug)]
pub struct PlacementStep<'a> {
    /// Twin with the VM already lifted off its home host.
    pub twin: &'a DataCentreState,
    pub request: &'a PlacementRequest,
    pub home: Option<usize>,
    pub chosen: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub vm: VmId,
    pub from: Option<HostId>,
    pub to: Result<HostId, Error>,
}

/// Best-fit-decreasing placement on the twin.
///
/// VMs go in order of descending CPU demand (then RAM, then id). Each is
/// lifted off its current host, every feasible host is scored, and the VM is
/// attached to the best one with the twin updated before the next VM. A VM
/// with no feasible host goes back where it was.
pub fn place_bfd(
    requests: &[PlacementRequest],
    twin: &mut DataCentreState,
    cfg: &PolicyConfig,
    models: &ModelSet,
) -> Result<Vec<Placement>> {
    place_bfd_observed(requests, twin, cfg, models, &mut |_| {})
}

pub fn place_bfd_observed(
    requests: &[PlacementRequest],
    twin: &mut DataCentreState,
    cfg: &PolicyConfig,
    models: &ModelSet,
    observer: &mut dyn FnMut(&PlacementStep<'_>),
) -> Result<Vec<Placement>> {
    let mut order: Vec<&PlacementRequest> = requests.iter().collect();
    for r in &order {
        if !twin.vms.contains_key(&r.vm) {
            return Err(Error::UnknownVm(r.vm.clone()));
        }
    }
    order.sort_by(|a, b| {
        let (va, vb) = (&twin.vms[&a.vm], &twin.vms[&b.vm]);
        vb.demand
            .cpu_mhz
            .total_cmp(&va.demand.cpu_mhz)
            .then_with(|| vb.spec.ram_mb.cmp(&va.spec.ram_mb))
            .then_with(|| a.vm.cmp(&b.vm))
    });

    let mut out = Vec::with_capacity(order.len());
    for req in order {
        let home = match twin.mapping.contains_key(&req.vm) {
            true => {
                let idx = twin.detach_vm(&req.vm)?;
                refresh_host(twin, idx, models, cfg)?;
                Some(idx)
            }
            false => None,
        };

        let mut best: Option<(Score, usize)> = None;
        for host in 0..twin.hosts.len() {
            if !is_feasible(twin, host, req, home, models, cfg)? {
                continue;
            }
            let s = score(twin, host, &req.vm, models, cfg)?;
            if best
                .as_ref()
                .is_none_or(|(b, _)| s.cmp(b) == Ordering::Less)
            {
                best = Some((s, host));
            }
        }
        let chosen = best.map(|(_, h)| h);
        observer(&PlacementStep {
            twin,
            request: req,
            home,
            chosen,
        });

        let from = home.map(|i| twin.hosts[i].id().clone());
        let to = match chosen.or(home) {
            Some(target) => {
                twin.attach_vm(&req.vm, target)?;
                refresh_host(twin, target, models, cfg)?;
                match chosen {
                    Some(_) => Ok(twin.hosts[target].id().clone()),
                    None => Err(Error::PlacementInfeasible(req.vm.clone())),
                }
            }
            None => Err(Error::PlacementInfeasible(req.vm.clone())),
        };
        out.push(Placement {
            vm: req.vm.clone(),
            from,
            to,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetpointChoice {
    pub setpoint_k: f64,
    /// No grid setpoint keeps every inlet within the limit.
    pub violation: bool,
}

/// Hottest inlet among powered-on hosts at `setpoint_k`; `None` when every
/// host is off.
pub fn hottest_active_inlet(
    twin: &DataCentreState,
    models: &ModelSet,
    setpoint_k: f64,
) -> Option<f64> {
    models
        .inlets(twin, setpoint_k)
        .into_iter()
        .zip(&twin.hosts)
        .filter(|(_, h)| h.active)
        .map(|(t, _)| t)
        .reduce(f64::max)
}

/// Warmest grid setpoint keeping every powered-on host's predicted inlet at
/// or below the limit, given the twin's current host powers.
pub fn choose_setpoint(
    twin: &DataCentreState,
    models: &ModelSet,
    cfg: &PolicyConfig,
) -> SetpointChoice {
    let grid = models.cooling.setpoint_grid();
    for &s in grid.iter().rev() {
        let hottest = hottest_active_inlet(twin, models, s).unwrap_or(f64::MIN);
        if hottest <= cfg.inlet_limit_k + INLET_TOL_K {
            return SetpointChoice {
                setpoint_k: s,
                violation: false,
            };
        }
    }
    SetpointChoice {
        setpoint_k: grid
            .first()
            .copied()
            .unwrap_or(models.cooling.setpoint_range_k().0),
        violation: true,
    }
}

/// Plan one interval. `state` is never modified.
pub fn plan(state: &DataCentreState, cfg: &PolicyConfig, models: &ModelSet) -> Result<Plan> {
    let mut twin = clone_twin(state);
    for i in 0..twin.hosts.len() {
        refresh_host(&mut twin, i, models, cfg)?;
    }
    let mut out = Plan::default();

    // VMs without a host (new arrivals) are placed first
    let arrivals: Vec<PlacementRequest> = twin
        .vms
        .keys()
        .filter(|v| !twin.mapping.contains_key(*v))
        .map(|v| PlacementRequest {
            vm: v.clone(),
            active_only: false,
        })
        .collect();
    for p in place_bfd(&arrivals, &mut twin, cfg, models)? {
        match p.to {
            Ok(host) => out.placements.push((p.vm, host)),
            Err(_) => out.unplaced.push(p.vm),
        }
    }

    if cfg.migration_enabled {
        let mut moved: BTreeSet<VmId> = BTreeSet::new();
        let mut receivers: BTreeSet<HostId> = BTreeSet::new();

        let mut shed = Vec::new();
        for host in detect_overloaded(&twin, cfg) {
            for vm in select_vms_to_migrate(&twin, &host, cfg)? {
                shed.push(PlacementRequest {
                    vm,
                    active_only: false,
                });
            }
        }
        for p in place_bfd(&shed, &mut twin, cfg, models)? {
            match (p.from, p.to) {
                (Some(src), Ok(dst)) if src != dst => {
                    receivers.insert(dst.clone());
                    moved.insert(p.vm.clone());
                    out.migrations.push(Migration { vm: p.vm, src, dst });
                }
                (_, Err(_)) => out.unplaced.push(p.vm),
                _ => {}
            }
        }

        for host in detect_underloaded(&twin, cfg) {
            let idx = host_idx(&twin, &host)?;
            let h = &twin.hosts[idx];
            if receivers.contains(&host)
                || !h.active
                || h.util >= cfg.underload_threshold
                || h.vms.iter().any(|v| moved.contains(v))
            {
                continue;
            }
            let evacuate: Vec<PlacementRequest> = select_vms_to_migrate(&twin, &host, cfg)?
                .into_iter()
                .map(|vm| PlacementRequest {
                    vm,
                    active_only: true,
                })
                .collect();
            if evacuate.is_empty() {
                continue;
            }
            let snapshot = clone_twin(&twin);
            let placed = place_bfd(&evacuate, &mut twin, cfg, models)?;
            if placed.iter().any(|p| p.to.is_err()) {
                twin = snapshot;
                continue;
            }
            for p in placed {
                let dst = p.to?;
                receivers.insert(dst.clone());
                moved.insert(p.vm.clone());
                out.migrations.push(Migration {
                    vm: p.vm,
                    src: host.clone(),
                    dst,
                });
            }
            out.power_off.push(host);
        }
    }

    for h in &twin.hosts {
        if h.active {
            out.freq_assignment.insert(h.id().clone(), h.freq_idx);
        }
    }
    let setpoint = match cfg.fixed_setpoint_k {
        Some(s) => s,
        None => {
            let choice = choose_setpoint(&twin, models, cfg);
            out.thermal_violation = choice.violation;
            choice.setpoint_k
        }
    };
    out.setpoint_k = Some(setpoint);
    Ok(out)
}

/// Something that turns the current room state into a plan.
pub trait Policy: Send + Sync {
    fn name(&self) -> &str;

    fn plan(&self, state: &DataCentreState, models: &ModelSet) -> Result<Plan>;
}

/// A named [`PolicyConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConfiguredPolicy {
    pub name: String,
    pub config: PolicyConfig,
}

impl ConfiguredPolicy {
    pub fn new(name: impl Into<String>, config: PolicyConfig) -> Self {
        Self {
            name: name.into(),
            config,
        }
    }
}

impl Policy for ConfiguredPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn plan(&self, state: &DataCentreState, models: &ModelSet) -> Result<Plan> {
        plan(state, &self.config, models)
    }
}

/// Emits empty plans: no migrations, frequencies and setpoint untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoOpPolicy;

impl Policy for NoOpPolicy {
    fn name(&self) -> &str {
        "noop"
    }

    fn plan(&self, _state: &DataCentreState, _models: &ModelSet) -> Result<Plan> {
        Ok(Plan::default())
    }
}
