//! Run summaries, policy comparisons and their JSON documents.

use serde::{Deserialize, Serialize};

use crate::engine::IntervalMetrics;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const JOULES_PER_KWH: f64 = 3.6e6;
pub const INTERVALS_FILE: &str = "intervals.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub duration_s: u64,
    pub interval_s: u64,
    pub n_intervals: usize,
    pub total_energy_kwh: f64,
    pub it_energy_kwh: f64,
    pub cooling_energy_kwh: f64,
    pub other_energy_kwh: f64,
    /// Total over IT energy.
    pub mean_pue: f64,
    pub total_migrations: usize,
    /// Overloaded host-intervals over active host-intervals.
    pub overload_interval_fraction: f64,
    /// Intervals in which at least one inlet exceeded the limit.
    pub inlet_violation_count: usize,
    /// Intervals in which the planner found no safe setpoint.
    pub thermal_violation_count: usize,
    pub mean_active_hosts: f64,
    pub migration_degradation_mhz_s: f64,
    pub overloaded_host_intervals: usize,
    pub active_host_intervals: usize,
    /// Where the per-interval series lives, relative to this document.
    pub intervals: String,
}

/// Aggregate an interval series. Energies are `sum(power) * interval`
/// converted from joules to kWh.
pub fn summarize(intervals: &[IntervalMetrics], interval_s: u64) -> Result<RunSummary> {
    if intervals.is_empty() {
        return Err(Error::EmptyRun);
    }
    let dt = interval_s as f64;
    let mut it = 0.0;
    let mut cool = 0.0;
    let mut other = 0.0;
    let mut migrations = 0;
    let mut overloaded = 0;
    let mut active = 0;
    let mut inlet = 0;
    let mut thermal = 0;
    let mut degradation = 0.0;
    for m in intervals {
        it += m.p_it_w * dt;
        cool += m.p_cool_w * dt;
        other += m.p_other_w * dt;
        migrations += m.migrations;
        overloaded += m.overloaded_hosts;
        active += m.active_hosts;
        inlet += usize::from(m.inlet_violations > 0);
        thermal += usize::from(m.thermal_violation);
        degradation += m.migration_degradation_mhz_s;
    }
    Ok(finish(
        intervals.len(),
        interval_s,
        [it, cool, other],
        migrations,
        (overloaded, active),
        (inlet, thermal),
        degradation,
    ))
}

fn finish(
    n: usize,
    interval_s: u64,
    joules: [f64; 3],
    migrations: usize,
    (overloaded, active): (usize, usize),
    (inlet, thermal): (usize, usize),
    degradation: f64,
) -> RunSummary {
    let [it, cool, other] = joules;
    let total = it + cool + other;
    RunSummary {
        duration_s: n as u64 * interval_s,
        interval_s,
        n_intervals: n,
        total_energy_kwh: total / JOULES_PER_KWH,
        it_energy_kwh: it / JOULES_PER_KWH,
        cooling_energy_kwh: cool / JOULES_PER_KWH,
        other_energy_kwh: other / JOULES_PER_KWH,
        mean_pue: if it > 0.0 { total / it } else { 1.0 },
        total_migrations: migrations,
        overload_interval_fraction: if active > 0 {
            overloaded as f64 / active as f64
        } else {
            0.0
        },
        inlet_violation_count: inlet,
        thermal_violation_count: thermal,
        mean_active_hosts: if n > 0 { active as f64 / n as f64 } else { 0.0 },
        migration_degradation_mhz_s: degradation,
        overloaded_host_intervals: overloaded,
        active_host_intervals: active,
        intervals: INTERVALS_FILE.to_owned(),
    }
}

impl RunSummary {
    /// Summary of two consecutive stretches of the same run.
    pub fn combine(&self, next: &RunSummary) -> Result<RunSummary> {
        if self.interval_s != next.interval_s {
            return Err(Error::param(
                "interval_s",
                "cannot combine runs with different intervals",
            ));
        }
        let j = |a: f64, b: f64| (a + b) * JOULES_PER_KWH;
        Ok(finish(
            self.n_intervals + next.n_intervals,
            self.interval_s,
            [
                j(self.it_energy_kwh, next.it_energy_kwh),
                j(self.cooling_energy_kwh, next.cooling_energy_kwh),
                j(self.other_energy_kwh, next.other_energy_kwh),
            ],
            self.total_migrations + next.total_migrations,
            (
                self.overloaded_host_intervals + next.overloaded_host_intervals,
                self.active_host_intervals + next.active_host_intervals,
            ),
            (
                self.inlet_violation_count + next.inlet_violation_count,
                self.thermal_violation_count + next.thermal_violation_count,
            ),
            self.migration_degradation_mhz_s + next.migration_degradation_mhz_s,
        ))
    }
}

/// Candidate relative to baseline; negative means the candidate uses less.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Percent; `None` when the baseline is zero and the candidate is not.
    pub total_energy_pct: Option<f64>,
    pub it_energy_pct: Option<f64>,
    pub cooling_energy_pct: Option<f64>,
    pub delta_pue: f64,
    pub delta_migrations: i64,
    pub delta_overload_fraction: f64,
}

fn pct(baseline: f64, candidate: f64) -> Option<f64> {
    if baseline == candidate {
        Some(0.0)
    } else if baseline == 0.0 {
        None
    } else {
        Some(100.0 * (candidate - baseline) / baseline)
    }
}

pub fn compare(baseline: &RunSummary, candidate: &RunSummary) -> Result<ComparisonReport> {
    if baseline.duration_s != candidate.duration_s {
        return Err(Error::DurationMismatch(
            baseline.duration_s,
            candidate.duration_s,
        ));
    }
    Ok(ComparisonReport {
        total_energy_pct: pct(baseline.total_energy_kwh, candidate.total_energy_kwh),
        it_energy_pct: pct(baseline.it_energy_kwh, candidate.it_energy_kwh),
        cooling_energy_pct: pct(baseline.cooling_energy_kwh, candidate.cooling_energy_kwh),
        delta_pue: candidate.mean_pue - baseline.mean_pue,
        delta_migrations: candidate.total_migrations as i64 - baseline.total_migrations as i64,
        delta_overload_fraction: candidate.overload_interval_fraction
            - baseline.overload_interval_fraction,
    })
}

/// `summary.json`: the summary's fields at top level, the schema version and
/// an echo of the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument<C> {
    pub schema: u32,
    #[serde(flatten)]
    pub summary: RunSummary,
    pub config: C,
}

impl<C> SummaryDocument<C> {
    pub fn new(summary: RunSummary, config: C) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            summary,
            config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRun {
    pub name: String,
    /// Directory holding this policy's `intervals.csv` and `summary.json`.
    pub dir: String,
    pub summary: RunSummary,
    /// Against the baseline (the first run); `None` for the baseline itself.
    pub versus_baseline: Option<ComparisonReport>,
}

/// `comparison.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonDocument<C> {
    pub schema: u32,
    pub baseline: String,
    pub runs: Vec<PolicyRun>,
    pub config: C,
}
