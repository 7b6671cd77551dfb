//! JSON run configuration.
//!
//! Top-level sections are `datacenter`, `models`, `workload`, `policy`,
//! `run` and the optional `compare`. Every struct rejects unknown keys, so a
//! misspelt field fails loudly instead of silently falling back to a default.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{HostSpec, DEFAULT_FREQ_LEVELS_GHZ};
use crate::engine::{RunParams, Scenario};
use crate::error::{Error, Result};
use crate::models::{CoolingModelParams, ModelSet, PowerModelParams, ThermalModelParams};
use crate::policies::{Criterion, PolicyConfig};
use crate::workload::{parse_trace, synth_workload, SynthParams, VmWorkload};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatacenterSection {
    pub n_hosts: usize,
    pub hosts_per_rack: usize,
    pub cores: u32,
    pub mips_per_core: f64,
    pub ram_mb: u64,
    /// Carried for completeness; no model reads it.
    pub storage_gb: f64,
    pub freq_levels_ghz: Vec<f64>,
}

impl Default for DatacenterSection {
    fn default() -> Self {
        Self {
            n_hosts: 200,
            hosts_per_rack: 40,
            cores: 4,
            mips_per_core: 2400.0,
            ram_mb: 16384,
            storage_gb: 1.0,
            freq_levels_ghz: DEFAULT_FREQ_LEVELS_GHZ.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsSection {
    pub power: PowerModelParams,
    pub cooling: CoolingModelParams,
    pub thermal: ThermalModelParams,
}

/// Exactly one of `trace_dir` and `synthetic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthParams>,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        Self {
            trace_dir: None,
            synthetic: Some(SynthParams::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedPolicy {
    pub name: String,
    #[serde(default)]
    pub policy: PolicyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// The first entry is the baseline the others are compared against.
    pub policies: Vec<NamedPolicy>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            policies: vec![
                NamedPolicy {
                    name: "baseline_min_power".into(),
                    policy: PolicyConfig::baseline(Criterion::MinPowerIncrease),
                },
                NamedPolicy {
                    name: "baseline_max_power".into(),
                    policy: PolicyConfig::baseline(Criterion::MaxPowerIncrease),
                },
                NamedPolicy {
                    name: "integrated".into(),
                    policy: PolicyConfig::integrated(),
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub datacenter: DatacenterSection,
    pub models: ModelsSection,
    pub workload: WorkloadSection,
    pub policy: PolicyConfig,
    pub run: RunParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSection>,
}

/// Why a config was rejected.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("{path}:{line}:{column}: {message}")]
    Syntax {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Invalid { path: String, source: Error },
}

impl RunConfig {
    /// Parse JSON text. `origin` labels diagnostics and anchors a relative
    /// `trace_dir`.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let path = origin.display().to_string();
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
            path: path.clone(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if let Some(dir) = &cfg.workload.trace_dir {
            if dir.is_relative() {
                let base = origin.parent().unwrap_or(Path::new("."));
                let joined = base.join(dir);
                cfg.workload.trace_dir = Some(fs::canonicalize(&joined).unwrap_or(joined));
            }
        }
        cfg.validate()
            .map_err(|source| ConfigError::Invalid { path, source })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        let dc = &self.datacenter;
        if dc.n_hosts == 0 {
            return Err(Error::param("datacenter.n_hosts", "must be >= 1"));
        }
        if dc.hosts_per_rack == 0 {
            return Err(Error::param("datacenter.hosts_per_rack", "must be >= 1"));
        }
        if dc.cores == 0 {
            return Err(Error::param("datacenter.cores", "must be >= 1"));
        }
        if !(dc.mips_per_core > 0.0) {
            return Err(Error::param("datacenter.mips_per_core", "must be > 0"));
        }
        if dc.ram_mb == 0 {
            return Err(Error::param("datacenter.ram_mb", "must be > 0"));
        }
        let f = &dc.freq_levels_ghz;
        if f.is_empty() || f[0] <= 0.0 || f.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param(
                "datacenter.freq_levels_ghz",
                "need a non-empty, strictly ascending list of positive frequencies",
            ));
        }
        self.models.power.validate()?;
        self.models.cooling.validate()?;
        self.models.thermal.validate()?;
        match (&self.workload.trace_dir, &self.workload.synthetic) {
            (Some(_), None) => {}
            (None, Some(s)) => s.validate(self.run.duration_s, self.run.interval_s)?,
            _ => {
                return Err(Error::param(
                    "workload",
                    "set exactly one of `trace_dir` and `synthetic`",
                ))
            }
        }
        self.run.validate()?;
        self.validate_policy(&self.policy, "policy")?;
        if let Some(c) = &self.compare {
            if c.policies.is_empty() {
                return Err(Error::param("compare.policies", "need at least one policy"));
            }
            let mut seen = std::collections::BTreeSet::new();
            for (i, p) in c.policies.iter().enumerate() {
                // names become output directory names
                let ok = !p.name.is_empty()
                    && !p.name.starts_with('.')
                    && p.name
                        .chars()
                        .all(|ch| ch.is_ascii_alphanumeric() || "_-.".contains(ch));
                if !ok || !seen.insert(p.name.as_str()) {
                    return Err(Error::param(
                        format!("compare.policies[{i}].name"),
                        format!(
                            "`{}` must be unique and use only letters, digits, `_`, `-` and `.`",
                            p.name
                        ),
                    ));
                }
                self.validate_policy(&p.policy, &format!("compare.policies[{i}].policy"))?;
            }
        }
        Ok(())
    }

    fn validate_policy(&self, p: &PolicyConfig, at: &str) -> Result<()> {
        p.validate().map_err(|e| match e {
            Error::InvalidParam { field, message } => Error::InvalidParam {
                field: field.replacen("policy", at, 1),
                message,
            },
            other => other,
        })?;
        let c = &self.models.cooling;
        if let Some(s) = p.fixed_setpoint_k {
            if !(c.min_k..=c.max_k).contains(&s) {
                return Err(Error::param(
                    format!("{at}.fixed_setpoint_k"),
                    format!(
                        "{s} K is outside the cooling range [{}, {}] K",
                        c.min_k, c.max_k
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn host_specs(&self) -> Vec<HostSpec> {
        let dc = &self.datacenter;
        let host_w = (dc.n_hosts - 1).to_string().len().max(3);
        let rack_w = ((dc.n_hosts - 1) / dc.hosts_per_rack)
            .to_string()
            .len()
            .max(2);
        (0..dc.n_hosts)
            .map(|i| HostSpec {
                id: format!("h{i:0host_w$}").as_str().into(),
                cores: dc.cores,
                mips_per_core: dc.mips_per_core,
                ram_mb: dc.ram_mb,
                freq_levels_ghz: dc.freq_levels_ghz.clone(),
                p_idle_w: self.models.power.p_idle_w,
                p_max_w: self.models.power.p_max_w,
                r_thermal_k_per_w: self.models.thermal.r_thermal_k_per_w,
                rack_id: format!("r{:0rack_w$}", i / dc.hosts_per_rack)
                    .as_str()
                    .into(),
            })
            .collect()
    }

    pub fn model_set(&self) -> ModelSet {
        ModelSet::parametric(self.models.cooling, self.models.thermal)
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            hosts: self.host_specs(),
            models: self.model_set(),
            run: self.run.clone(),
            inlet_limit_k: self.policy.inlet_limit_k,
        }
    }

    /// Load or generate the workload. Trace files are read in file-name
    /// order; each file's stem becomes its VM id.
    pub fn workloads(&self) -> Result<Vec<VmWorkload>> {
        if let Some(s) = &self.workload.synthetic {
            return synth_workload(self.run.seed, s, self.run.duration_s, self.run.interval_s);
        }
        let dir = self
            .workload
            .trace_dir
            .as_ref()
            .ok_or_else(|| Error::param("workload", "no workload source"))?;
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::param(
                "workload.trace_dir",
                format!("{} holds no trace files", dir.display()),
            ));
        }
        files
            .iter()
            .map(|p| {
                let stem = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let file = fs::File::open(p)?;
                parse_trace(std::io::BufReader::new(file), stem.as_str().into()).map_err(
                    |e| match e {
                        Error::TraceRow {
                            line,
                            column,
                            message,
                        } => Error::TraceRow {
                            line,
                            column,
                            message: format!("{}: {message}", p.display()),
                        },
                        other => other,
                    },
                )
            })
            .collect()
    }
}
