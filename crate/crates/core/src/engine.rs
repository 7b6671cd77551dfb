//! Interval-driven simulation loop.
//!
//! Each interval: pull every VM's demand, evaluate the models, ask the policy
//! for a plan, apply it atomically at the interval start, evaluate the models
//! again and charge `power * interval` to the energy accounts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{DataCentreState, HostId, HostSpec, Plan, VmId};
use crate::error::{Error, Result};
use crate::metrics::{summarize, RunSummary};
use crate::models::ModelSet;
use crate::policies::{Policy, INLET_TOL_K};
use crate::workload::{demand_at, VmWorkload};

/// Run-level knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunParams {
    pub duration_s: u64,
    pub interval_s: u64,
    pub seed: u64,
    /// `None` means migrations complete instantly.
    pub migration_bandwidth_mb_s: Option<f64>,
    /// Fraction of a migrating VM's demand lost while it is in flight.
    pub migration_degradation: f64,
    /// UPS/PDU and other overheads as a fraction of IT power.
    pub p_other_fraction: f64,
    pub initial_setpoint_k: f64,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            duration_s: 86_400,
            interval_s: 300,
            seed: 42,
            migration_bandwidth_mb_s: Some(125.0),
            migration_degradation: 0.10,
            p_other_fraction: 0.0,
            initial_setpoint_k: 291.0,
        }
    }
}

impl RunParams {
    pub fn validate(&self) -> Result<()> {
        if self.interval_s == 0 {
            return Err(Error::param("run.interval_s", "must be > 0"));
        }
        if self.duration_s < self.interval_s {
            return Err(Error::param(
                "run.duration_s",
                "must cover at least one interval",
            ));
        }
        if let Some(bw) = self.migration_bandwidth_mb_s {
            if !(bw > 0.0) {
                return Err(Error::param(
                    "run.migration_bandwidth_mb_s",
                    "must be > 0 or null",
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.migration_degradation) {
            return Err(Error::param(
                "run.migration_degradation",
                "must lie in [0, 1]",
            ));
        }
        if !(self.p_other_fraction >= 0.0) {
            return Err(Error::param("run.p_other_fraction", "must be >= 0"));
        }
        Ok(())
    }

    pub fn n_intervals(&self) -> u64 {
        self.duration_s.div_ceil(self.interval_s)
    }
}

/// Everything a run needs besides the workload and the policy.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub hosts: Vec<HostSpec>,
    pub models: ModelSet,
    pub run: RunParams,
    pub inlet_limit_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub t_s: u64,
    pub p_it_w: f64,
    pub p_cool_w: f64,
    pub p_other_w: f64,
    pub pue: f64,
    pub setpoint_k: f64,
    pub active_hosts: usize,
    pub migrations: usize,
    /// Hottest inlet among powered-on hosts.
    pub max_inlet_k: f64,
    /// Active hosts whose demand exceeds capacity at their frequency.
    pub overloaded_hosts: usize,
    pub migration_degradation_mhz_s: f64,
    /// Powered-on hosts whose inlet exceeds the limit. Not part of the CSV export.
    #[serde(default)]
    pub inlet_violations: usize,
    /// The planner could not find a safe setpoint. Not part of the CSV export.
    #[serde(default)]
    pub thermal_violation: bool,
}

pub const CSV_HEADER: &str =
    "t_s,p_it_w,p_cool_w,p_other_w,pue,setpoint_k,active_hosts,migrations,\
max_inlet_k,overloaded_hosts,migration_degradation_mhz_s";

/// Write the per-interval series as CSV with a fixed column set.
pub fn write_intervals_csv(intervals: &[IntervalMetrics], mut out: impl Write) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for m in intervals {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            m.t_s,
            m.p_it_w,
            m.p_cool_w,
            m.p_other_w,
            m.pue,
            m.setpoint_k,
            m.active_hosts,
            m.migrations,
            m.max_inlet_k,
            m.overloaded_hosts,
            m.migration_degradation_mhz_s
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MigrationRecord {
    pub duration_s: f64,
    pub degradation_mhz_s: f64,
}

/// Move a VM between hosts at the interval start. Transfer time is
/// `ram / bandwidth`, capped at the interval; while in flight the VM loses
/// `migration_degradation` of its demand.
pub fn apply_migration(
    state: &mut DataCentreState,
    vm: &VmId,
    src: &HostId,
    dst: &HostId,
    params: &RunParams,
) -> Result<MigrationRecord> {
    let current = state
        .mapping
        .get(vm)
        .ok_or_else(|| Error::UnknownVm(vm.clone()))?;
    if current != src {
        return Err(Error::NotOnHost {
            vm: vm.clone(),
            host: src.clone(),
        });
    }
    let dst_idx = state
        .host_index(dst)
        .ok_or_else(|| Error::UnknownHost(dst.clone()))?;
    let (ram, cpu) = {
        let v = &state.vms[vm];
        (v.spec.ram_mb, v.demand.cpu_mhz)
    };
    let free = state.hosts[dst_idx].ram_free_mb();
    if ram > free {
        return Err(Error::RamInfeasible {
            vm: vm.clone(),
            host: dst.clone(),
            needed_mb: ram,
            free_mb: free,
        });
    }
    state.detach_vm(vm)?;
    state.attach_vm(vm, dst_idx)?;

    let duration_s = match params.migration_bandwidth_mb_s {
        Some(bw) => (ram as f64 / bw).min(params.interval_s as f64),
        None => 0.0,
    };
    Ok(MigrationRecord {
        duration_s,
        degradation_mhz_s: params.migration_degradation * cpu * duration_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ApplyReport {
    pub migrations: usize,
    pub degradation_mhz_s: f64,
}

/// Apply a plan to the live state. Unknown VMs or hosts, duplicate
/// migrations, infeasible moves and powering off a busy host are errors.
pub fn apply_plan(
    state: &mut DataCentreState,
    plan: &Plan,
    models: &ModelSet,
    params: &RunParams,
) -> Result<ApplyReport> {
    let mut seen = BTreeSet::new();
    for m in &plan.migrations {
        if !seen.insert(&m.vm) {
            return Err(Error::DuplicateMigration(m.vm.clone()));
        }
    }

    let mut report = ApplyReport::default();
    for m in &plan.migrations {
        let rec = apply_migration(state, &m.vm, &m.src, &m.dst, params)?;
        report.migrations += 1;
        report.degradation_mhz_s += rec.degradation_mhz_s;
    }
    for (vm, host) in &plan.placements {
        if state.mapping.contains_key(vm) {
            return Err(Error::param(
                "plan.placements",
                format!("VM {vm} is already placed"),
            ));
        }
        let idx = state
            .host_index(host)
            .ok_or_else(|| Error::UnknownHost(host.clone()))?;
        state.attach_vm(vm, idx)?;
    }
    for host in &plan.power_off {
        let h = state
            .host_mut(host)
            .ok_or_else(|| Error::UnknownHost(host.clone()))?;
        if !h.vms.is_empty() {
            return Err(Error::PowerOffBusyHost(host.clone()));
        }
        h.active = false;
    }
    for (host, f) in &plan.freq_assignment {
        let h = state
            .host_mut(host)
            .ok_or_else(|| Error::UnknownHost(host.clone()))?;
        if *f >= h.spec.freq_levels_ghz.len() {
            return Err(Error::FrequencyIndex {
                host: host.clone(),
                index: *f,
                levels: h.spec.freq_levels_ghz.len(),
            });
        }
        h.set_freq(*f);
    }
    if let Some(s) = plan.setpoint_k {
        let (lo, hi) = models.cooling.setpoint_range_k();
        if !(lo - 1e-9..=hi + 1e-9).contains(&s) {
            return Err(Error::SetpointRange {
                setpoint_k: s,
                min_k: lo,
                max_k: hi,
            });
        }
        state.cooling.setpoint_k = s;
    }
    Ok(report)
}

/// Place every VM at t = 0: VM `i` (in id order) takes the first host with
/// enough RAM, scanning round-robin from host `i mod n`.
pub fn initial_placement(state: &mut DataCentreState) -> Result<()> {
    let n = state.hosts.len();
    let vms: Vec<VmId> = state
        .vms
        .keys()
        .filter(|v| !state.mapping.contains_key(*v))
        .cloned()
        .collect();
    for (i, vm) in vms.iter().enumerate() {
        let ram = state.vms[vm].spec.ram_mb;
        let host = (0..n)
            .map(|k| (i + k) % n)
            .find(|&h| state.hosts[h].ram_free_mb() >= ram)
            .ok_or_else(|| Error::InitialPlacement(vm.clone()))?;
        state.attach_vm(vm, host)?;
    }
    Ok(())
}

/// A simulation in progress.
#[derive(Debug)]
pub struct Engine {
    pub state: DataCentreState,
    workloads: BTreeMap<VmId, VmWorkload>,
    models: ModelSet,
    params: RunParams,
}

impl Engine {
    pub fn new(scenario: &Scenario, workloads: &[VmWorkload]) -> Result<Self> {
        scenario.run.validate()?;
        let models = scenario.models.clone();
        let mut state = DataCentreState::new(
            scenario.hosts.clone(),
            scenario.run.initial_setpoint_k,
            models.cooling.setpoint_range_k(),
        );
        state.inlet_limit_k = scenario.inlet_limit_k;
        models.cooling.cop(state.cooling.setpoint_k)?;

        let mut map = BTreeMap::new();
        for w in workloads {
            if map.insert(w.id().clone(), w.clone()).is_some() {
                return Err(Error::param(
                    "workload",
                    format!("duplicate VM id {}", w.id()),
                ));
            }
            state.add_vm(w.spec.clone());
        }

        let total_ram: u64 = workloads.iter().map(|w| w.spec.ram_mb).sum();
        let room_ram: u64 = state.hosts.iter().map(|h| h.spec.ram_mb).sum();
        if total_ram > room_ram {
            let first = workloads
                .first()
                .map(|w| w.id().clone())
                .unwrap_or_else(|| "-".into());
            return Err(Error::InitialPlacement(first));
        }
        initial_placement(&mut state)?;
        Ok(Self {
            state,
            workloads: map,
            models,
            params: scenario.run.clone(),
        })
    }

    pub fn params(&self) -> &RunParams {
        &self.params
    }

    /// Advance one interval.
    pub fn step(&mut self, policy: &dyn Policy) -> Result<IntervalMetrics> {
        let t = self.state.clock_s;

        for (id, w) in &self.workloads {
            self.state.set_demand(id, demand_at(&w.series, t))?;
        }
        self.state.resum_demand();
        self.models.evaluate(&mut self.state)?;

        let plan = policy.plan(&self.state, &self.models)?;
        let report = apply_plan(&mut self.state, &plan, &self.models, &self.params)?;

        let p_it = self.models.evaluate(&mut self.state)?;
        let p_cool = self.state.cooling.power_w;
        let p_other = self.params.p_other_fraction * p_it;
        let limit = self.state.inlet_limit_k + INLET_TOL_K;
        let hosts = &self.state.hosts;

        let metrics = IntervalMetrics {
            t_s: t,
            p_it_w: p_it,
            p_cool_w: p_cool,
            p_other_w: p_other,
            pue: if p_it > 0.0 {
                (p_it + p_cool + p_other) / p_it
            } else {
                1.0
            },
            setpoint_k: self.state.cooling.setpoint_k,
            active_hosts: hosts.iter().filter(|h| h.active).count(),
            migrations: report.migrations,
            max_inlet_k: hosts
                .iter()
                .filter(|h| h.active)
                .map(|h| h.inlet_temp_k)
                .reduce(f64::max)
                .unwrap_or(self.state.cooling.setpoint_k),
            overloaded_hosts: hosts
                .iter()
                .filter(|h| h.active && h.load_ratio > 1.0)
                .count(),
            migration_degradation_mhz_s: report.degradation_mhz_s,
            inlet_violations: hosts
                .iter()
                .filter(|h| h.active && h.inlet_temp_k > limit)
                .count(),
            thermal_violation: plan.thermal_violation,
        };
        self.state.clock_s += self.params.interval_s;
        Ok(metrics)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub intervals: Vec<IntervalMetrics>,
    pub summary: RunSummary,
    pub final_state: DataCentreState,
}

/// Simulate `scenario.run.duration_s` seconds in steps of `interval_s`.
pub fn run(
    scenario: &Scenario,
    workloads: &[VmWorkload],
    policy: &dyn Policy,
) -> Result<RunOutput> {
    let mut engine = Engine::new(scenario, workloads)?;
    let n = engine.params.n_intervals();
    let mut intervals = Vec::with_capacity(n as usize);
    for _ in 0..n {
        intervals.push(engine.step(policy)?);
    }
    let summary = summarize(&intervals, engine.params.interval_s)?;
    Ok(RunOutput {
        intervals,
        summary,
        final_state: engine.state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{validate, DemandSample, HostSpec, Migration, VmSpec};
    use crate::policies::NoOpPolicy;
    use crate::workload::DemandSeries;

    fn workload(id: &str, ram_mb: u64, cpu: f64) -> VmWorkload {
        VmWorkload {
            spec: VmSpec::new(id, 1, ram_mb),
            cpu_capacity_mhz: 2400.0,
            mem_capacity_kb: ram_mb as f64 * 1024.0,
            series: DemandSeries::new(id.into(), vec![DemandSample::cpu(0, cpu)]).unwrap(),
        }
    }

    fn scenario(n_hosts: usize, duration_s: u64) -> Scenario {
        Scenario {
            hosts: (0..n_hosts)
                .map(|i| HostSpec::reference(format!("h{i}").as_str(), "r0"))
                .collect(),
            models: ModelSet::default(),
            run: RunParams {
                duration_s,
                ..Default::default()
            },
            inlet_limit_k: 303.0,
        }
    }

    #[test]
    fn interval_count() {
        let out = run(
            &scenario(1, 3600),
            &[workload("v", 4096, 1000.0)],
            &NoOpPolicy,
        )
        .unwrap();
        assert_eq!(out.intervals.len(), 12);
        assert_eq!(out.intervals.last().unwrap().t_s, 3300);
    }

    #[test]
    fn single_vm_energy_matches_hand_computation() {
        // one host at 2400/9600 = 0.25 util, max frequency, 291 K
        let out = run(
            &scenario(1, 3600),
            &[workload("v", 4096, 2400.0)],
            &NoOpPolicy,
        )
        .unwrap();
        let p_it = 75.0 + 175.0 * 0.25;
        let t = 291.0 - 273.15;
        let cop = 0.0068 * t * t + 0.0008 * t + 0.458;
        let expect_kwh = (p_it + p_it / cop) * 3600.0 / 3.6e6;
        assert!((out.summary.total_energy_kwh - expect_kwh).abs() < 1e-12 * expect_kwh.max(1.0));
    }

    #[test]
    fn initial_placement_round_robin_first_fit() {
        let ws = vec![
            workload("a", 16384, 0.0),
            workload("b", 16384, 0.0),
            workload("c", 4096, 0.0),
        ];
        let e = Engine::new(&scenario(3, 300), &ws).unwrap();
        let on = |v: &str| e.state.mapping[&VmId::from(v)].0.clone();
        assert_eq!(
            (on("a"), on("b"), on("c")),
            ("h0".into(), "h1".into(), "h2".into())
        );

        // a fills h0, so d (index 3 -> h0) moves on to h1
        let ws = vec![
            workload("a", 16384, 0.0),
            workload("b", 4096, 0.0),
            workload("c", 4096, 0.0),
            workload("d", 4096, 0.0),
        ];
        let e = Engine::new(&scenario(3, 300), &ws).unwrap();
        assert_eq!(e.state.mapping[&VmId::from("d")], HostId::from("h1"));
    }

    #[test]
    fn infeasible_initial_placement_fails_early() {
        let ws = vec![workload("a", 16384, 0.0), workload("b", 4096, 0.0)];
        assert!(matches!(
            Engine::new(&scenario(1, 300), &ws),
            Err(Error::InitialPlacement(_))
        ));
    }

    #[test]
    fn noop_step_changes_only_dynamic_fields() {
        let mut e = Engine::new(&scenario(2, 600), &[workload("v", 4096, 1000.0)]).unwrap();
        let before = e.state.clone();
        e.step(&NoOpPolicy).unwrap();
        let mut after = e.state.clone();
        assert_eq!(after.clock_s, 300);
        assert_eq!(after.mapping, before.mapping);
        // blank out the fields a step may touch; the rest must be identical
        let mut b = before;
        for s in [&mut after, &mut b] {
            s.clock_s = 0;
            s.cooling.cop = 0.0;
            s.cooling.power_w = 0.0;
            for v in s.vms.values_mut() {
                v.demand = DemandSample::default();
            }
            for h in &mut s.hosts {
                h.demand_mhz = 0.0;
                h.util = 0.0;
                h.load_ratio = 0.0;
                h.power_w = 0.0;
                h.inlet_temp_k = 0.0;
                h.cpu_temp_k = 0.0;
            }
        }
        assert_eq!(after, b);
    }

    #[test]
    fn migration_cost() {
        let mut e = Engine::new(&scenario(2, 600), &[workload("v", 4096, 1000.0)]).unwrap();
        e.step(&NoOpPolicy).unwrap();
        let rec = apply_migration(
            &mut e.state,
            &"v".into(),
            &"h0".into(),
            &"h1".into(),
            &e.params.clone(),
        )
        .unwrap();
        assert!((rec.duration_s - 32.768).abs() < 1e-12);
        assert!((rec.degradation_mhz_s - 0.10 * 1000.0 * 32.768).abs() < 1e-9);
        assert_eq!(e.state.mapping[&VmId::from("v")], HostId::from("h1"));
        assert!(e.state.hosts[1].active);
        assert!(!e.state.hosts[0].active);
        assert!(validate(&e.state)
            .iter()
            .all(|v| v.kind != crate::domain::ViolationKind::MappingInconsistency));

        let big = RunParams::default();
        let mut e = Engine::new(&scenario(2, 600), &[workload("w", 8192, 0.0)]).unwrap();
        let rec =
            apply_migration(&mut e.state, &"w".into(), &"h0".into(), &"h1".into(), &big).unwrap();
        assert!((rec.duration_s - 65.536).abs() < 1e-12);
    }

    #[test]
    fn unlimited_bandwidth_costs_nothing() {
        let params = RunParams {
            migration_bandwidth_mb_s: None,
            ..Default::default()
        };
        let mut e = Engine::new(&scenario(2, 600), &[workload("v", 4096, 5000.0)]).unwrap();
        let rec = apply_migration(
            &mut e.state,
            &"v".into(),
            &"h0".into(),
            &"h1".into(),
            &params,
        )
        .unwrap();
        assert_eq!(rec.degradation_mhz_s, 0.0);
    }

    #[test]
    fn migration_errors() {
        let mut e = Engine::new(
            &scenario(2, 600),
            &[workload("v", 4096, 0.0), workload("w", 16384, 0.0)],
        )
        .unwrap();
        let p = RunParams::default();
        assert!(matches!(
            apply_migration(&mut e.state, &"v".into(), &"h1".into(), &"h0".into(), &p),
            Err(Error::NotOnHost { .. })
        ));
        assert!(matches!(
            apply_migration(&mut e.state, &"v".into(), &"h0".into(), &"h1".into(), &p),
            Err(Error::RamInfeasible { .. })
        ));
    }

    #[test]
    fn bad_plans_fail_fast() {
        let mut e = Engine::new(&scenario(2, 600), &[workload("v", 4096, 0.0)]).unwrap();
        let models = ModelSet::default();
        let p = RunParams::default();
        let busy = Plan {
            power_off: vec!["h0".into()],
            ..Default::default()
        };
        assert_eq!(
            apply_plan(&mut e.state, &busy, &models, &p),
            Err(Error::PowerOffBusyHost("h0".into()))
        );

        let ghost = Plan {
            migrations: vec![Migration {
                vm: "zz".into(),
                src: "h0".into(),
                dst: "h1".into(),
            }],
            ..Default::default()
        };
        assert!(matches!(
            apply_plan(&mut e.state, &ghost, &models, &p),
            Err(Error::UnknownVm(_))
        ));

        let nowhere = Plan {
            freq_assignment: [(HostId::from("h9"), 0)].into(),
            ..Default::default()
        };
        assert!(matches!(
            apply_plan(&mut e.state, &nowhere, &models, &p),
            Err(Error::UnknownHost(_))
        ));

        let twice = Plan {
            migrations: vec![
                Migration {
                    vm: "v".into(),
                    src: "h0".into(),
                    dst: "h1".into(),
                },
                Migration {
                    vm: "v".into(),
                    src: "h1".into(),
                    dst: "h0".into(),
                },
            ],
            ..Default::default()
        };
        assert!(matches!(
            apply_plan(&mut e.state, &twice, &models, &p),
            Err(Error::DuplicateMigration(_))
        ));
    }

    #[test]
    fn csv_has_fixed_columns() {
        let out = run(
            &scenario(1, 600),
            &[workload("v", 4096, 1000.0)],
            &NoOpPolicy,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_intervals_csv(&out.intervals, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 11));
    }
}
