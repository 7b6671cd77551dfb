//! VM demand: GWA-T-12 (Bitbrains) trace files and a seeded generator of
//! bursty, diurnal business-critical load in the same shape.
//!
//! Trace layout is 11 `;`-separated columns behind one header line:
//! timestamp, cores, provisioned MHz, used MHz, used %, provisioned memory
//! KB, used memory KB, disk read KB/s, disk write KB/s, net rx KB/s, net tx
//! KB/s. Timestamps are rebased so each series starts at 0.

use std::f64::consts::PI;
use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::domain::{DemandSample, VmId, VmSpec};
use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "Timestamp [ms];CPU cores;CPU capacity provisioned [MHZ];\
CPU usage [MHZ];CPU usage [%];Memory capacity provisioned [KB];Memory usage [KB];\
Disk read throughput [KB/s];Disk write throughput [KB/s];\
Network received throughput [KB/s];Network transmitted throughput [KB/s]";

const TRACE_COLUMNS: usize = 11;

/// Time-ordered demand of one VM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSeries {
    pub vm_id: VmId,
    samples: Vec<DemandSample>,
}

impl DemandSeries {
    /// Fails on an empty list or timestamps that do not strictly increase.
    pub fn new(vm_id: VmId, samples: Vec<DemandSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::NoSamples);
        }
        if let Some(w) = samples.windows(2).find(|w| w[1].t_s <= w[0].t_s) {
            return Err(Error::param(
                "samples",
                format!("timestamp {} follows {}", w[1].t_s, w[0].t_s),
            ));
        }
        Ok(Self { vm_id, samples })
    }

    pub fn samples(&self) -> &[DemandSample] {
        &self.samples
    }
}

/// Zero-order hold lookup: the last sample at or before `t_s`, clamped to
/// the first and last samples outside the series.
pub fn demand_at(series: &DemandSeries, t_s: u64) -> DemandSample {
    let s = &series.samples;
    let after = s.partition_point(|x| x.t_s <= t_s);
    s[after.saturating_sub(1)]
}

/// A VM together with its provisioned shape and demand series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmWorkload {
    pub spec: VmSpec,
    pub cpu_capacity_mhz: f64,
    pub mem_capacity_kb: f64,
    pub series: DemandSeries,
}

impl VmWorkload {
    pub fn id(&self) -> &VmId {
        &self.spec.id
    }
}

fn row_error(line: u64, column: usize, message: impl Into<String>) -> Error {
    Error::TraceRow {
        line,
        column,
        message: message.into(),
    }
}

/// Parse one trace file. Provisioned cores and memory are taken from the
/// first data row.
pub fn parse_trace(input: impl Read, vm_id: VmId) -> Result<VmWorkload> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b';')
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);

    let mut samples: Vec<DemandSample> = Vec::new();
    let mut shape: Option<(u32, f64, f64)> = None;
    let mut epoch: Option<u64> = None;

    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            row_error(line, 0, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != TRACE_COLUMNS {
            return Err(row_error(
                line,
                record.len().min(TRACE_COLUMNS) + 1,
                format!("expected {TRACE_COLUMNS} fields, found {}", record.len()),
            ));
        }

        let ts: u64 = record[0]
            .parse()
            .map_err(|_| row_error(line, 1, format!("bad timestamp `{}`", &record[0])))?;
        let cores: u32 = record[1]
            .parse()
            .map_err(|_| row_error(line, 2, format!("bad core count `{}`", &record[1])))?;
        let mut num = [0.0f64; TRACE_COLUMNS];
        for col in 2..TRACE_COLUMNS {
            let v: f64 = record[col]
                .parse()
                .map_err(|_| row_error(line, col + 1, format!("bad number `{}`", &record[col])))?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(row_error(
                    line,
                    col + 1,
                    format!("negative or non-finite `{v}`"),
                ));
            }
            num[col] = v;
        }

        let base = *epoch.get_or_insert(ts);
        let t_s = ts.checked_sub(base).ok_or(Error::TraceTimestamp {
            line,
            timestamp: ts,
        })?;
        if samples.last().is_some_and(|prev| t_s <= prev.t_s) {
            return Err(Error::TraceTimestamp {
                line,
                timestamp: ts,
            });
        }
        shape.get_or_insert((cores, num[2], num[5]));
        samples.push(DemandSample {
            t_s,
            cpu_mhz: num[3],
            mem_kb: num[6],
            disk_rd_kbs: num[7],
            disk_wr_kbs: num[8],
            net_rx_kbs: num[9],
            net_tx_kbs: num[10],
        });
    }

    let (cores, cpu_cap, mem_cap) = shape.ok_or(Error::NoSamples)?;
    if cores == 0 {
        return Err(row_error(2, 2, "zero cores"));
    }
    let ram_mb = (mem_cap / 1024.0).ceil().max(1.0) as u64;
    Ok(VmWorkload {
        spec: VmSpec::new(vm_id.clone(), cores, ram_mb),
        cpu_capacity_mhz: cpu_cap,
        mem_capacity_kb: mem_cap,
        series: DemandSeries::new(vm_id, samples)?,
    })
}

/// Render a workload in trace format. `epoch_s` is added to every
/// timestamp; parsing rebases it away again.
pub fn serialize_trace(w: &VmWorkload, epoch_s: u64) -> String {
    let mut out = String::with_capacity(64 * (w.series.samples.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for s in &w.series.samples {
        let pct = if w.cpu_capacity_mhz > 0.0 {
            100.0 * s.cpu_mhz / w.cpu_capacity_mhz
        } else {
            0.0
        };
        out.push_str(&format!(
            "{};{};{};{};{};{};{};{};{};{};{}\n",
            s.t_s + epoch_s,
            w.spec.cores,
            w.cpu_capacity_mhz,
            s.cpu_mhz,
            pct,
            w.mem_capacity_kb,
            s.mem_kb,
            s.disk_rd_kbs,
            s.disk_wr_kbs,
            s.net_rx_kbs,
            s.net_tx_kbs,
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flavor {
    pub cores: u32,
    pub ram_mb: u64,
}

/// The general-purpose flavors: 1 core/4 GiB, 2 cores/8 GiB, 4 cores/16 GiB.
pub fn default_flavors() -> Vec<Flavor> {
    vec![
        Flavor {
            cores: 1,
            ram_mb: 4096,
        },
        Flavor {
            cores: 2,
            ram_mb: 8192,
        },
        Flavor {
            cores: 4,
            ram_mb: 16384,
        },
    ]
}

/// Knobs of the synthetic generator. Each VM's CPU demand is a diurnal
/// cosine on a low base plus rectangular bursts with Poisson arrivals, scaled
/// so that peak over mean hits `peak_to_mean` and the peak equals
/// `peak_fraction` of the flavor's capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub n_vms: usize,
    pub flavors: Vec<Flavor>,
    /// Relative weight of each flavor.
    pub flavor_mix: Vec<u32>,
    pub mhz_per_core: f64,
    pub peak_to_mean: f64,
    pub peak_fraction: f64,
    /// Hard ceiling on demand as a multiple of flavor capacity.
    pub stress_factor: f64,
    pub diurnal_amplitude: f64,
    pub peak_hour: f64,
    /// Per-VM uniform jitter of the diurnal peak, hours.
    pub peak_hour_jitter: f64,
    pub burst_rate_per_day: f64,
    pub burst_mean_duration_s: f64,
    pub mem_fraction: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_vms: 180,
            flavors: default_flavors(),
            flavor_mix: vec![3, 2, 1],
            mhz_per_core: 2400.0,
            peak_to_mean: 8.0,
            peak_fraction: 1.0,
            stress_factor: 1.5,
            diurnal_amplitude: 0.6,
            peak_hour: 14.0,
            peak_hour_jitter: 2.0,
            burst_rate_per_day: 2.0,
            burst_mean_duration_s: 1800.0,
            mem_fraction: 0.5,
        }
    }
}

impl SynthParams {
    /// Check the knobs for a series of `duration_s` sampled every
    /// `interval_s`.
    pub fn validate(&self, duration_s: u64, interval_s: u64) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::param(format!("workload.synthetic.{f}"), m));
        if self.n_vms == 0 {
            return bad("n_vms", "must be >= 1");
        }
        if interval_s == 0 {
            return Err(Error::param("run.interval_s", "must be > 0"));
        }
        if duration_s < interval_s {
            return Err(Error::param(
                "run.duration_s",
                "must cover at least one interval",
            ));
        }
        if self.flavors.is_empty() || self.flavors.iter().any(|f| f.cores == 0 || f.ram_mb == 0) {
            return bad(
                "flavors",
                "need at least one flavor with cores >= 1 and ram_mb > 0",
            );
        }
        if self.flavor_mix.len() != self.flavors.len() || self.flavor_mix.iter().all(|w| *w == 0) {
            return bad("flavor_mix", "need one weight per flavor, not all zero");
        }
        if !(self.mhz_per_core > 0.0) {
            return bad("mhz_per_core", "must be > 0");
        }
        if !(self.peak_to_mean >= 1.0 && self.peak_to_mean <= 100.0) {
            return bad("peak_to_mean", "must lie in [1, 100]");
        }
        if self.peak_to_mean >= (duration_s / interval_s) as f64 {
            return bad("peak_to_mean", "must be below the number of samples per VM");
        }
        if !(self.stress_factor >= 1.0) {
            return bad("stress_factor", "must be >= 1");
        }
        if !(self.peak_fraction > 0.0 && self.peak_fraction <= self.stress_factor) {
            return bad("peak_fraction", "must lie in (0, stress_factor]");
        }
        if !(0.0..1.0).contains(&self.diurnal_amplitude) {
            return bad("diurnal_amplitude", "must lie in [0, 1)");
        }
        if !(self.peak_hour_jitter >= 0.0) {
            return bad("peak_hour_jitter", "must be >= 0");
        }
        if !(self.burst_rate_per_day >= 0.0) {
            return bad("burst_rate_per_day", "must be >= 0");
        }
        if !(self.burst_mean_duration_s > 0.0) {
            return bad("burst_mean_duration_s", "must be > 0");
        }
        if !(self.mem_fraction > 0.0 && self.mem_fraction <= 1.0) {
            return bad("mem_fraction", "must lie in (0, 1]");
        }
        Ok(())
    }

    /// Flavor index of each VM: largest-remainder apportionment of `n_vms`
    /// over `flavor_mix`, in flavor order.
    pub fn flavor_assignment(&self) -> Vec<usize> {
        let total: u64 = self.flavor_mix.iter().map(|w| u64::from(*w)).sum();
        let n = self.n_vms as u64;
        let mut counts: Vec<u64> = self
            .flavor_mix
            .iter()
            .map(|w| n * u64::from(*w) / total)
            .collect();
        let mut rest: Vec<(u64, usize)> = self
            .flavor_mix
            .iter()
            .enumerate()
            .map(|(i, w)| (n * u64::from(*w) % total, i))
            .collect();
        rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let short = n - counts.iter().sum::<u64>();
        for (_, i) in rest.into_iter().take(short as usize) {
            counts[i] += 1;
        }
        counts
            .iter()
            .enumerate()
            .flat_map(|(i, c)| std::iter::repeat_n(i, *c as usize))
            .collect()
    }
}

/// Generate `params.n_vms` workloads sampled every `interval_s` over
/// `duration_s`. Same inputs give identical output.
pub fn synth_workload(
    seed: u64,
    params: &SynthParams,
    duration_s: u64,
    interval_s: u64,
) -> Result<Vec<VmWorkload>> {
    params.validate(duration_s, interval_s)?;
    let n = (duration_s / interval_s) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = params.n_vms.to_string().len().max(4);
    params
        .flavor_assignment()
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let id = VmId(format!("vm{i:0width$}"));
            synth_one(&mut rng, id, params.flavors[f], params, n, interval_s)
        })
        .collect()
}

fn synth_one(
    rng: &mut ChaCha8Rng,
    id: VmId,
    flavor: Flavor,
    p: &SynthParams,
    n: usize,
    interval_s: u64,
) -> Result<VmWorkload> {
    let times: Vec<u64> = (0..n as u64).map(|k| k * interval_s).collect();

    let peak_hour = p.peak_hour + p.peak_hour_jitter * (2.0 * rng.random::<f64>() - 1.0);
    let diurnal: Vec<f64> = times
        .iter()
        .map(|t| {
            let hour = *t as f64 / 3600.0;
            1.0 + p.diurnal_amplitude * (2.0 * PI * (hour - peak_hour) / 24.0).cos()
        })
        .collect();

    let burst = burst_mask(rng, n, interval_s, p);
    let covered = burst.iter().filter(|b| **b).count() as f64 / n as f64;
    let d_mean = diurnal.iter().sum::<f64>() / n as f64;
    let d_burst = diurnal
        .iter()
        .zip(&burst)
        .filter(|(_, b)| **b)
        .map(|(d, _)| *d)
        .fold(f64::MIN, f64::max);
    let d_max = diurnal.iter().copied().fold(f64::MIN, f64::max);

    // burst height so that (H + d_burst) / (d_mean + H * covered) = ratio
    let ratio = p.peak_to_mean;
    let height = ((ratio * d_mean - d_burst) / (1.0 - ratio * covered)).max(0.0);
    let height = if height + d_burst < d_max {
        0.0
    } else {
        height
    };

    let shape: Vec<f64> = diurnal
        .iter()
        .zip(&burst)
        .map(|(d, b)| if *b { d + height } else { *d })
        .collect();
    let shape_max = shape.iter().copied().fold(f64::MIN, f64::max);
    let capacity = f64::from(flavor.cores) * p.mhz_per_core;
    let scale = p.peak_fraction * capacity / shape_max;
    let ceiling = p.stress_factor * capacity;
    let mem_cap_kb = flavor.ram_mb as f64 * 1024.0;

    let samples = times
        .iter()
        .zip(&shape)
        .zip(&burst)
        .map(|((t, s), b)| {
            let cpu = (s * scale).min(ceiling);
            let mem = mem_cap_kb * p.mem_fraction * if *b { 1.0 } else { 0.8 };
            DemandSample {
                t_s: *t,
                cpu_mhz: cpu,
                mem_kb: mem.floor(),
                disk_rd_kbs: cpu * 0.02,
                disk_wr_kbs: cpu * 0.01,
                net_rx_kbs: cpu * 0.05,
                net_tx_kbs: cpu * 0.04,
            }
        })
        .collect();

    Ok(VmWorkload {
        spec: VmSpec::new(id.clone(), flavor.cores, flavor.ram_mb),
        cpu_capacity_mhz: capacity,
        mem_capacity_kb: mem_cap_kb,
        series: DemandSeries::new(id, samples)?,
    })
}

/// Sample-level burst indicator. At least one sample is always in a burst,
/// and coverage stays below `1 / peak_to_mean` so the target ratio is
/// reachable.
fn burst_mask(rng: &mut ChaCha8Rng, n: usize, interval_s: u64, p: &SynthParams) -> Vec<bool> {
    let duration = n as f64 * interval_s as f64;
    let expected = p.burst_rate_per_day * duration / 86_400.0;
    let count = if expected > 0.0 {
        Poisson::new(expected)
            .map(|d| d.sample(rng) as usize)
            .unwrap_or(0)
    } else {
        0
    };
    let len_dist = Exp::new(1.0 / p.burst_mean_duration_s).expect("positive burst duration");

    let mut bursts: Vec<(usize, usize)> = (0..count.max(1))
        .map(|_| {
            let start = rng.random_range(0..n);
            let len = (len_dist.sample(rng) / interval_s as f64).ceil().max(1.0) as usize;
            (start, len)
        })
        .collect();

    // 0.9 keeps the height denominator clear of zero
    let budget = ((0.9 / p.peak_to_mean) * n as f64).floor().max(1.0) as usize;
    let mut mask = vec![false; n];
    let mut covered = 0;
    for (start, len) in bursts.drain(..) {
        for slot in &mut mask[start.min(n)..(start + len).min(n)] {
            if covered >= budget {
                break;
            }
            if !*slot {
                *slot = true;
                covered += 1;
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    const DAY: u64 = 86_400;
    const ROW: &str = "1376314846;1;2926;146.3;5.0;1048576;524288;0;0;10;12";

    fn parse(text: &str) -> Result<VmWorkload> {
        parse_trace(text.as_bytes(), "vm".into())
    }

    #[test]
    fn parses_single_row() {
        let w = parse(&format!("{TRACE_HEADER}\n{ROW}\n")).unwrap();
        let s = w.series.samples();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].t_s, 0);
        assert_eq!(s[0].cpu_mhz, 146.3);
        assert_eq!(s[0].mem_kb, 524288.0);
        assert_eq!(s[0].net_tx_kbs, 12.0);
        assert_eq!(w.spec.cores, 1);
        assert_eq!(w.spec.ram_mb, 1024);
        assert_eq!(w.cpu_capacity_mhz, 2926.0);
    }

    #[test]
    fn tolerates_tab_padding_of_published_traces() {
        let row = ROW.replace(';', ";\t");
        let w = parse(&format!("{TRACE_HEADER}\n{row}\n")).unwrap();
        assert_eq!(w.series.samples()[0].cpu_mhz, 146.3);
    }

    #[test]
    fn header_only_is_no_samples() {
        assert_eq!(parse(&format!("{TRACE_HEADER}\n")), Err(Error::NoSamples));
        assert_eq!(parse(""), Err(Error::NoSamples));
    }

    #[test]
    fn short_row_names_its_line() {
        let short = "1376315146;1;2926;146.3;5.0;1048576;524288;0;0;10";
        let err = parse(&format!("{TRACE_HEADER}\n{ROW}\n{short}\n")).unwrap_err();
        assert_eq!(
            err,
            Error::TraceRow {
                line: 3,
                column: 11,
                message: "expected 11 fields, found 10".into()
            }
        );
    }

    #[test]
    fn bad_number_names_line_and_column() {
        let bad = "1376315146;1;2926;abc;5.0;1048576;524288;0;0;10;12";
        let err = parse(&format!("{TRACE_HEADER}\n{ROW}\n{bad}\n")).unwrap_err();
        assert!(
            matches!(
                err,
                Error::TraceRow {
                    line: 3,
                    column: 4,
                    ..
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn non_monotone_timestamps_rejected() {
        let back = "1376314546;1;2926;146.3;5.0;1048576;524288;0;0;10;12";
        let err = parse(&format!("{TRACE_HEADER}\n{ROW}\n{back}\n")).unwrap_err();
        assert!(matches!(err, Error::TraceTimestamp { line: 3, .. }));
        let dup = parse(&format!("{TRACE_HEADER}\n{ROW}\n{ROW}\n")).unwrap_err();
        assert!(matches!(dup, Error::TraceTimestamp { line: 3, .. }));
    }

    fn series(times: &[u64]) -> DemandSeries {
        let samples = times
            .iter()
            .map(|t| DemandSample::cpu(*t, *t as f64))
            .collect();
        DemandSeries::new("v".into(), samples).unwrap()
    }

    #[test]
    fn demand_at_holds_last_sample() {
        let s = series(&[300, 600, 900]);
        assert_eq!(demand_at(&s, 600).t_s, 600);
        assert_eq!(demand_at(&s, 450).t_s, 300);
        assert_eq!(demand_at(&s, 10_000).t_s, 900);
        assert_eq!(demand_at(&s, 0).t_s, 300);
    }

    #[test]
    fn series_rejects_disorder() {
        assert!(DemandSeries::new("v".into(), vec![]).is_err());
        let s = vec![DemandSample::cpu(5, 0.0), DemandSample::cpu(5, 0.0)];
        assert!(DemandSeries::new("v".into(), s).is_err());
    }

    #[test]
    fn synth_is_deterministic() {
        let p = SynthParams {
            n_vms: 6,
            ..Default::default()
        };
        let a = synth_workload(42, &p, DAY, 300).unwrap();
        let b = synth_workload(42, &p, DAY, 300).unwrap();
        assert_eq!(a, b);
        let c = synth_workload(43, &p, DAY, 300).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_one_vm_per_flavor() {
        let p = SynthParams {
            n_vms: 3,
            flavor_mix: vec![1, 1, 1],
            ..Default::default()
        };
        let w = synth_workload(1, &p, DAY, 300).unwrap();
        let shapes: Vec<(u32, u64)> = w.iter().map(|v| (v.spec.cores, v.spec.ram_mb)).collect();
        assert_eq!(shapes, vec![(1, 4096), (2, 8192), (4, 16384)]);
    }

    #[test]
    fn flavor_mix_apportionment() {
        let p = SynthParams::default();
        let a = p.flavor_assignment();
        assert_eq!(a.len(), 180);
        assert_eq!(a.iter().filter(|f| **f == 0).count(), 90);
        assert_eq!(a.iter().filter(|f| **f == 1).count(), 60);
        assert_eq!(a.iter().filter(|f| **f == 2).count(), 30);
        let q = SynthParams {
            n_vms: 7,
            ..Default::default()
        };
        assert_eq!(q.flavor_assignment(), vec![0, 0, 0, 0, 1, 1, 2]);
    }

    #[test]
    fn peak_to_mean_target_is_hit() {
        let p = SynthParams {
            n_vms: 20,
            peak_to_mean: 100.0,
            ..Default::default()
        };
        for w in synth_workload(42, &p, DAY, 300).unwrap() {
            let cpu: Vec<f64> = w.series.samples().iter().map(|s| s.cpu_mhz).collect();
            let max = cpu.iter().copied().fold(0.0, f64::max);
            let mean = cpu.iter().sum::<f64>() / cpu.len() as f64;
            let r = max / mean;
            assert!((50.0..=100.0 + 1e-9).contains(&r), "{} ratio {r}", w.id());
            assert!(max <= w.cpu_capacity_mhz * 1.5);
        }
    }

    #[test]
    fn synth_rejects_bad_params() {
        let bad = [
            SynthParams {
                n_vms: 0,
                ..Default::default()
            },
            SynthParams {
                flavor_mix: vec![1, 1],
                ..Default::default()
            },
            SynthParams {
                peak_to_mean: 150.0,
                ..Default::default()
            },
            SynthParams {
                peak_fraction: 2.0,
                ..Default::default()
            },
        ];
        for p in bad {
            assert!(synth_workload(1, &p, DAY, 300).is_err(), "{p:?}");
        }
        assert!(synth_workload(1, &SynthParams::default(), 100, 300).is_err());
        // 100x needs more than 100 samples
        let steep = SynthParams {
            peak_to_mean: 100.0,
            ..Default::default()
        };
        assert!(synth_workload(1, &steep, 30_000, 300).is_err());
    }

    #[test]
    fn generated_traces_round_trip() {
        let p = SynthParams {
            n_vms: 3,
            ..Default::default()
        };
        for w in synth_workload(7, &p, DAY, 300).unwrap() {
            let text = serialize_trace(&w, 1_376_314_846);
            assert_eq!(parse_trace(text.as_bytes(), w.id().clone()).unwrap(), w);
        }
    }

    proptest! {
        #[test]
        fn demand_at_is_piecewise_constant(
            gaps in proptest::collection::vec(1u64..1000, 1..20),
            t in 0u64..30_000,
        ) {
            let mut times = Vec::new();
            let mut acc = 0;
            for g in gaps { acc += g; times.push(acc); }
            let s = series(&times);
            let got = demand_at(&s, t);
            let expect = times.iter().rev().find(|x| **x <= t).copied().unwrap_or(times[0]);
            prop_assert_eq!(got.t_s, expect);
        }

        #[test]
        fn arbitrary_series_round_trip(
            rows in proptest::collection::vec((1u64..5000, 0.0f64..1e5, 0.0f64..1e7, 0.0f64..1e4), 1..30),
            cores in 1u32..16,
            epoch in 0u64..2_000_000_000,
        ) {
            let mut t = 0;
            let samples: Vec<DemandSample> = rows.iter().enumerate().map(|(i, (gap, cpu, mem, io))| {
                if i > 0 { t += gap; }
                DemandSample { t_s: t, cpu_mhz: *cpu, mem_kb: *mem, disk_rd_kbs: *io,
                    disk_wr_kbs: io / 3.0, net_rx_kbs: io * 1.5, net_tx_kbs: 0.0 }
            }).collect();
            let w = VmWorkload {
                spec: VmSpec::new("x", cores, 4096),
                cpu_capacity_mhz: 2400.0 * f64::from(cores),
                mem_capacity_kb: 4096.0 * 1024.0,
                series: DemandSeries::new("x".into(), samples).unwrap(),
            };
            let back = parse_trace(serialize_trace(&w, epoch).as_bytes(), "x".into()).unwrap();
            prop_assert_eq!(back, w);
        }
    }
}
