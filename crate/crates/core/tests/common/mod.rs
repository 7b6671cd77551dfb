//! Helpers shared by the integration tests: an exhaustive placement oracle
//! written against the model formulas, and random room generators.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use thermopt_core::policies::{PlacementRequest, PlacementStep};
use thermopt_core::{
    Criterion, DataCentreState, DemandSample, HostSpec, ModelSet, PolicyConfig, VmId, VmSpec,
};

pub const BETA: f64 = 0.0008;
pub const TIE: f64 = 1e-6;

pub fn cap(spec: &HostSpec, idx: usize) -> f64 {
    let top = *spec.freq_levels_ghz.last().unwrap();
    spec.cores as f64 * spec.mips_per_core * spec.freq_levels_ghz[idx] / top
}

pub fn watts(spec: &HostSpec, util: f64, idx: usize) -> f64 {
    let r = spec.freq_levels_ghz[idx] / spec.freq_levels_ghz.last().unwrap();
    spec.p_idle_w + (spec.p_max_w - spec.p_idle_w) * util * r * r
}

/// Lowest level whose 0.9-derated capacity covers `demand`, by linear scan.
pub fn lowest_level(spec: &HostSpec, demand: f64, threshold: f64) -> usize {
    let n = spec.freq_levels_ghz.len();
    for i in 0..n {
        if cap(spec, i) * threshold >= demand {
            return i;
        }
    }
    n - 1
}

fn host_demand(twin: &DataCentreState, i: usize) -> f64 {
    twin.hosts[i]
        .vms
        .iter()
        .map(|v| twin.vms[v].demand.cpu_mhz)
        .sum()
}

fn host_ram(twin: &DataCentreState, i: usize) -> u64 {
    twin.hosts[i]
        .vms
        .iter()
        .map(|v| twin.vms[v].spec.ram_mb)
        .sum()
}

fn current_power(twin: &DataCentreState, i: usize) -> f64 {
    let h = &twin.hosts[i];
    if !h.active {
        return 0.0;
    }
    let u = (host_demand(twin, i) / cap(&h.spec, h.freq_idx)).min(1.0);
    watts(&h.spec, u, h.freq_idx)
}

/// Score vector for one candidate; compared lexicographically with a small
/// tolerance, host index last.
fn candidate(twin: &DataCentreState, i: usize, vm: &VmId, cfg: &PolicyConfig) -> Option<Vec<f64>> {
    let h = &twin.hosts[i];
    let v = &twin.vms[vm];
    if v.spec.ram_mb + host_ram(twin, i) > h.spec.ram_mb {
        return None;
    }
    let demand = host_demand(twin, i) + v.demand.cpu_mhz;
    let top = h.spec.freq_levels_ghz.len() - 1;
    if demand > cfg.overload_threshold * cap(&h.spec, top) {
        return None;
    }
    let level = if cfg.dvfs_enabled {
        lowest_level(&h.spec, demand, cfg.overload_threshold)
    } else {
        top
    };
    let util = demand / cap(&h.spec, level);
    let after = watts(&h.spec, util, level);
    let dp = after - current_power(twin, i);

    if cfg.criterion == Criterion::IntegratedFreqUtil {
        let rack: f64 = (0..twin.hosts.len())
            .filter(|&j| twin.hosts[j].spec.rack_id == h.spec.rack_id)
            .map(|j| {
                if j == i {
                    after
                } else {
                    current_power(twin, j)
                }
            })
            .sum();
        if twin.cooling.setpoint_k + BETA * rack > cfg.inlet_limit_k + 1e-9 {
            return None;
        }
    }
    Some(match cfg.criterion {
        Criterion::MinPowerIncrease => vec![dp],
        Criterion::MaxPowerIncrease => vec![-dp],
        Criterion::IntegratedFreqUtil => {
            let before = if h.active { h.freq_idx as f64 } else { -1.0 };
            vec![level as f64 - before, -util, dp]
        }
    })
}

fn less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > TIE {
            return x < y;
        }
    }
    false
}

/// Exhaustive scan over every host for the step's VM.
pub fn oracle_choice(step: &PlacementStep<'_>, cfg: &PolicyConfig) -> Option<usize> {
    let twin = step.twin;
    let mut best: Option<(Vec<f64>, usize)> = None;
    for i in 0..twin.hosts.len() {
        if step.home == Some(i) || (step.request.active_only && !twin.hosts[i].active) {
            continue;
        }
        if let Some(s) = candidate(twin, i, &step.request.vm, cfg) {
            if best.as_ref().is_none_or(|(b, _)| less(&s, b)) {
                best = Some((s, i));
            }
        }
    }
    best.map(|(_, i)| i)
}

/// A small random room plus placement requests.
pub struct Instance {
    pub state: DataCentreState,
    pub requests: Vec<PlacementRequest>,
    pub dvfs: bool,
}

pub fn random_instance(seed: u64, max_hosts: usize, max_vms: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_hosts = rng.random_range(1..=max_hosts);
    let racks = rng.random_range(1..=2usize);
    let specs: Vec<HostSpec> = (0..n_hosts)
        .map(|i| HostSpec::reference(format!("h{i}").as_str(), format!("r{}", i % racks).as_str()))
        .collect();
    let setpoint = 297.0 + 0.5 * rng.random_range(0..=12) as f64;
    let mut state = DataCentreState::new(specs, setpoint, (285.0, 308.0));
    let models = ModelSet::default();

    let n_vms = rng.random_range(1..=max_vms);
    let mut requests = Vec::new();
    for v in 0..n_vms {
        let cores = rng.random_range(1..=4u32);
        let ram = [512, 1024, 2048, 4096, 8192][rng.random_range(0..5)];
        let id = VmId::new(format!("vm{v}"));
        state.add_vm(VmSpec::new(id.clone(), cores, ram));
        let mhz = 10.0 * rng.random_range(0..=(cores * 240)) as f64;
        state.set_demand(&id, DemandSample::cpu(0, mhz)).unwrap();
        let host = rng.random_range(0..=n_hosts);
        let placed = host < n_hosts && state.attach_vm(&id, host).is_ok();
        if !placed || rng.random_bool(0.5) {
            requests.push(PlacementRequest {
                vm: id,
                active_only: placed && rng.random_bool(0.5),
            });
        }
    }
    state.resum_demand();
    for h in &mut state.hosts {
        if h.active {
            let f = rng.random_range(0..h.spec.freq_levels_ghz.len());
            h.set_freq(f);
        }
    }
    models.evaluate(&mut state).unwrap();
    Instance {
        state,
        requests,
        dvfs: rng.random_bool(0.5),
    }
}
