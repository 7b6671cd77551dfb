use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::thread;

use anyhow::Context;
use thermopt_core::config::{CompareSection, ConfigError, RunConfig};
use thermopt_core::engine::write_intervals_csv;
use thermopt_core::metrics::{
    ComparisonDocument, PolicyRun, SummaryDocument, INTERVALS_FILE, SCHEMA_VERSION,
};
use thermopt_core::workload::{serialize_trace, synth_workload};
use thermopt_core::{
    compare as compare_summaries, run as simulate, ConfiguredPolicy, Criterion, RunOutput,
    SynthParams,
};

use crate::{Common, GenArgs};

pub const SUMMARY_FILE: &str = "summary.json";
pub const COMPARISON_FILE: &str = "comparison.json";

/// Bad input (exit 2) or a failure while running (exit 1).
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Input(_) => ExitCode::from(2),
            Failure::Runtime(_) => ExitCode::from(1),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) => f.write_str(m),
            Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Input(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    Ok(cfg)
}

fn write_run(dir: &Path, out: &RunOutput, echo: &RunConfig) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(INTERVALS_FILE);
    let mut csv = Vec::new();
    write_intervals_csv(&out.intervals, &mut csv)?;
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    let path = dir.join(SUMMARY_FILE);
    write_json(&path, &SummaryDocument::new(out.summary.clone(), echo))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn summary_line(name: &str, out: &RunOutput) -> String {
    let s = &out.summary;
    format!(
        "{name}: {:.2} kWh total ({:.2} IT, {:.2} cooling), PUE {:.3}, {} migrations, \
         {:.1} active hosts on average, overload fraction {:.4}",
        s.total_energy_kwh,
        s.it_energy_kwh,
        s.cooling_energy_kwh,
        s.mean_pue,
        s.total_migrations,
        s.mean_active_hosts,
        s.overload_interval_fraction
    )
}

pub fn run(common: &Common, criterion: Option<Criterion>) -> Outcome {
    let mut cfg = load(common)?;
    if let Some(c) = criterion {
        cfg.policy.criterion = c;
    }
    let workloads = cfg
        .workloads()
        .map_err(|e| Failure::Input(format!("workload: {e}")))?;
    let name = cfg.policy.criterion.name();
    let out = simulate(
        &cfg.scenario(),
        &workloads,
        &ConfiguredPolicy::new(name, cfg.policy.clone()),
    )
    .context("simulation failed")?;
    write_run(&common.out, &out, &cfg)?;
    if !common.quiet {
        println!("{}", summary_line(name, &out));
    }
    Ok(())
}

fn fmt_pct(p: Option<f64>) -> String {
    p.map_or_else(|| "n/a".to_string(), |v| format!("{v:+.2}%"))
}

pub fn compare(common: &Common) -> Outcome {
    let cfg = load(common)?;
    let section = cfg.compare.clone().unwrap_or_else(CompareSection::default);
    let workloads = cfg
        .workloads()
        .map_err(|e| Failure::Input(format!("workload: {e}")))?;
    let scenario = cfg.scenario();

    // share-nothing runs, one thread per policy
    let outputs: Vec<anyhow::Result<RunOutput>> = thread::scope(|s| {
        let handles: Vec<_> = section
            .policies
            .iter()
            .map(|p| {
                let (scenario, workloads) = (&scenario, &workloads);
                s.spawn(move || {
                    simulate(
                        scenario,
                        workloads,
                        &ConfiguredPolicy::new(p.name.clone(), p.policy.clone()),
                    )
                    .with_context(|| format!("policy {}", p.name))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(anyhow::anyhow!("simulation thread panicked")))
            })
            .collect()
    });

    let mut runs = Vec::with_capacity(outputs.len());
    let mut baseline = None;
    for (p, out) in section.policies.iter().zip(outputs) {
        let out = out?;
        let mut echo = cfg.clone();
        echo.policy = p.policy.clone();
        echo.compare = None;
        write_run(&common.out.join(&p.name), &out, &echo)?;
        let versus = match &baseline {
            None => {
                baseline = Some(out.summary.clone());
                None
            }
            Some(b) => Some(compare_summaries(b, &out.summary).context("comparing runs")?),
        };
        if !common.quiet {
            println!("{}", summary_line(&p.name, &out));
        }
        runs.push(PolicyRun {
            name: p.name.clone(),
            dir: p.name.clone(),
            summary: out.summary,
            versus_baseline: versus,
        });
    }

    let doc = ComparisonDocument {
        schema: SCHEMA_VERSION,
        baseline: section.policies[0].name.clone(),
        runs,
        config: &cfg,
    };
    write_json(&common.out.join(COMPARISON_FILE), &doc)?;

    if !common.quiet {
        let mut stdout = std::io::stdout().lock();
        let width = doc
            .runs
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(0)
            .max(6);
        let _ = writeln!(
            stdout,
            "\nversus {}\n{:width$}  {:>9}  {:>9}  {:>9}  {:>7}  {:>10}",
            doc.baseline, "policy", "total", "IT", "cooling", "PUE", "migrations"
        );
        for r in doc.runs.iter().skip(1) {
            let c = r
                .versus_baseline
                .as_ref()
                .expect("every non-baseline run has a report");
            let _ = writeln!(
                stdout,
                "{:width$}  {:>9}  {:>9}  {:>9}  {:>+7.3}  {:>+10}",
                r.name,
                fmt_pct(c.total_energy_pct),
                fmt_pct(c.it_energy_pct),
                fmt_pct(c.cooling_energy_pct),
                c.delta_pue,
                c.delta_migrations
            );
        }
    }
    Ok(())
}

pub fn gen_workload(args: &GenArgs) -> Outcome {
    let params = SynthParams {
        n_vms: args.n_vms,
        flavor_mix: args.flavor_mix.clone(),
        peak_to_mean: args.peak_to_mean,
        ..SynthParams::default()
    };
    if args.interval_s == 0 {
        return Err(Failure::Input("--interval-s must be > 0".into()));
    }
    params
        .validate(args.duration_s, args.interval_s)
        .map_err(|e| Failure::Input(e.to_string().replace("workload.synthetic.", "--")))?;
    let workloads = synth_workload(args.seed, &params, args.duration_s, args.interval_s)
        .map_err(|e| Failure::Input(e.to_string()))?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for w in &workloads {
        let path = args.out.join(format!("{}.csv", w.id()));
        fs::write(&path, serialize_trace(w, args.epoch_s))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
