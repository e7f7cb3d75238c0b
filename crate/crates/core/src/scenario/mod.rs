//! Declarative experiment descriptions, validation and loading.

mod builtin;
mod campaign;

pub use builtin::{builtin, builtin_names, BUILTINS};
pub use campaign::{run_campaign, CampaignOutput, RunResult};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::apps::{self, Workload};
use crate::dama::DamaConfig;
use crate::error::ConfigError;
use crate::pep::PepConfig;
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Delays {
    pub sat_one_way_ms: f64,
    pub lte_one_way_ms: f64,
    pub core_one_way_ms: f64,
}

impl Default for Delays {
    fn default() -> Self {
        Self {
            sat_one_way_ms: 250.0,
            lte_one_way_ms: 20.0,
            core_one_way_ms: 10.0,
        }
    }
}

impl Delays {
    pub fn sat(&self) -> SimTime {
        SimTime::from_secs_f64(self.sat_one_way_ms / 1e3)
    }

    pub fn lte(&self) -> SimTime {
        SimTime::from_secs_f64(self.lte_one_way_ms / 1e3)
    }

    pub fn core(&self) -> SimTime {
        SimTime::from_secs_f64(self.core_one_way_ms / 1e3)
    }

    /// Unloaded UE-to-server round trip.
    pub fn path_rtt(&self) -> SimTime {
        let one_way = self.sat() + self.lte() + self.core();
        one_way + one_way
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Buffers {
    /// Satellite link buffers hold this much time at the link capacity.
    pub sat_buffer_ms: f64,
    pub shaper_burst_bytes: u64,
    /// Shaper backlogs hold this much time at the SLA rate.
    pub shaper_backlog_ms: f64,
    pub lte_rate_bps: u64,
    pub lte_buffer_bytes: u64,
    pub core_rate_bps: u64,
    pub core_buffer_bytes: u64,
}

impl Default for Buffers {
    fn default() -> Self {
        Self {
            sat_buffer_ms: 600.0,
            shaper_burst_bytes: 15_000,
            shaper_backlog_ms: 600.0,
            lte_rate_bps: 100_000_000,
            lte_buffer_bytes: 1_000_000,
            core_rate_bps: 1_000_000_000,
            core_buffer_bytes: 10_000_000,
        }
    }
}

pub fn bytes_for(rate_bps: u64, ms: f64) -> u64 {
    (rate_bps as f64 * ms / 8e3) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DamaSettings {
    pub interval_ms: f64,
    pub ewma_alpha: f64,
    /// Tolerated excess of CRA + RBDC over the return capacity, as a fraction.
    pub overbooking: f64,
}

impl Default for DamaSettings {
    fn default() -> Self {
        Self {
            interval_ms: 500.0,
            ewma_alpha: 0.5,
            overbooking: 0.10,
        }
    }
}

impl DamaSettings {
    pub fn config(&self) -> DamaConfig {
        DamaConfig {
            interval: SimTime::from_secs_f64(self.interval_ms / 1e3),
            ewma_alpha: self.ewma_alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub ue: u16,
    #[serde(default = "default_probe_period")]
    pub period_ms: f64,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default = "yes")]
    pub network: bool,
    #[serde(default = "yes")]
    pub transport: bool,
}

fn default_probe_period() -> f64 {
    1000.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Access {
    pub cra_bps: u64,
    pub rbdc_max_bps: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default)]
    pub access: Vec<Access>,
    #[serde(default)]
    pub pep: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario_id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_n_ues")]
    pub n_ues: u16,
    #[serde(default = "default_forward")]
    pub forward_rate_bps: u64,
    #[serde(default = "default_return")]
    pub return_rate_bps: u64,
    pub cra_bps: u64,
    pub rbdc_max_bps: u64,
    #[serde(default)]
    pub pep: bool,
    #[serde(default = "default_sla")]
    pub sla_down_bps: u64,
    #[serde(default = "default_sla")]
    pub sla_up_bps: u64,
    #[serde(default)]
    pub workloads: Vec<Workload>,
    pub duration_s: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_reps")]
    pub repetitions: u32,
    /// Each workload start is shifted by a uniform draw in `[0, jitter)`.
    #[serde(default)]
    pub start_jitter_ms: f64,
    #[serde(default)]
    pub delays: Delays,
    #[serde(default)]
    pub buffers: Buffers,
    #[serde(default)]
    pub dama: DamaSettings,
    #[serde(default)]
    pub pep_config: PepConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<ProbeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

fn default_n_ues() -> u16 {
    10
}
fn default_forward() -> u64 {
    20_000_000
}
fn default_return() -> u64 {
    1_000_000
}
fn default_sla() -> u64 {
    2_000_000
}
fn default_seed() -> u64 {
    1
}
fn default_reps() -> u32 {
    1
}

impl ScenarioSpec {
    /// A minimal spec with defaults and no workloads.
    pub fn new(scenario_id: &str, cra_bps: u64, rbdc_max_bps: u64, duration_s: f64) -> Self {
        Self {
            scenario_id: scenario_id.to_string(),
            description: String::new(),
            n_ues: default_n_ues(),
            forward_rate_bps: default_forward(),
            return_rate_bps: default_return(),
            cra_bps,
            rbdc_max_bps,
            pep: false,
            sla_down_bps: default_sla(),
            sla_up_bps: default_sla(),
            workloads: vec![],
            duration_s,
            seed: default_seed(),
            repetitions: default_reps(),
            start_jitter_ms: 0.0,
            delays: Delays::default(),
            buffers: Buffers::default(),
            dama: DamaSettings::default(),
            pep_config: PepConfig::default(),
            probes: None,
            sweep: None,
        }
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.duration_s)
    }

    /// RBDC ceiling after clipping CRA + RBDC to the return capacity.
    pub fn effective_rbdc_bps(&self) -> u64 {
        self.rbdc_max_bps
            .min(self.return_rate_bps.saturating_sub(self.cra_bps))
    }

    /// Concrete single-configuration specs, one per sweep cell.
    pub fn cells(&self) -> Vec<ScenarioSpec> {
        let Some(sweep) = &self.sweep else {
            return vec![self.clone()];
        };
        let access = if sweep.access.is_empty() {
            vec![Access {
                cra_bps: self.cra_bps,
                rbdc_max_bps: self.rbdc_max_bps,
            }]
        } else {
            sweep.access.clone()
        };
        let peps = if sweep.pep.is_empty() { vec![self.pep] } else { sweep.pep.clone() };
        let mut out = vec![];
        for a in &access {
            for &pep in &peps {
                let mut cell = self.clone();
                cell.sweep = None;
                cell.cra_bps = a.cra_bps;
                cell.rbdc_max_bps = a.rbdc_max_bps;
                cell.pep = pep;
                out.push(cell);
            }
        }
        out
    }

    /// Replaces the access sweep with a single configuration.
    pub fn with_access(mut self, cra_bps: u64, rbdc_max_bps: u64) -> Self {
        self.cra_bps = cra_bps;
        self.rbdc_max_bps = rbdc_max_bps;
        if let Some(s) = self.sweep.as_mut() {
            s.access.clear();
        }
        self
    }

    pub fn with_pep(mut self, pep: bool) -> Self {
        self.pep = pep;
        if let Some(s) = self.sweep.as_mut() {
            s.pep.clear();
        }
        self
    }

    /// Checks every invariant. The error names the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |key: &str, msg: String| Err(ConfigError::invalid(key, msg));
        if self.scenario_id.is_empty() || self.scenario_id.contains([',', '"', '\n']) {
            return err("scenario_id", "must be non-empty and contain no commas, quotes or newlines".into());
        }
        if self.n_ues == 0 {
            return err("n_ues", "must be at least 1".into());
        }
        for (key, v) in [
            ("forward_rate_bps", self.forward_rate_bps),
            ("return_rate_bps", self.return_rate_bps),
            ("sla_down_bps", self.sla_down_bps),
            ("sla_up_bps", self.sla_up_bps),
            ("lte_rate_bps", self.buffers.lte_rate_bps),
            ("core_rate_bps", self.buffers.core_rate_bps),
        ] {
            if v == 0 {
                return err(key, "must be positive".into());
            }
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return err("duration_s", "must be positive".into());
        }
        if self.repetitions == 0 {
            return err("repetitions", "must be at least 1".into());
        }
        if !(self.start_jitter_ms >= 0.0 && self.start_jitter_ms.is_finite()) {
            return err("start_jitter_ms", "must be non-negative".into());
        }
        for (key, v) in [
            ("sat_one_way_ms", self.delays.sat_one_way_ms),
            ("lte_one_way_ms", self.delays.lte_one_way_ms),
            ("core_one_way_ms", self.delays.core_one_way_ms),
            ("sat_buffer_ms", self.buffers.sat_buffer_ms),
            ("shaper_backlog_ms", self.buffers.shaper_backlog_ms),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(key, "must be non-negative".into());
            }
        }
        if !(self.dama.interval_ms > 0.0) {
            return err("interval_ms", "must be positive".into());
        }
        if !(self.dama.ewma_alpha > 0.0 && self.dama.ewma_alpha <= 1.0) {
            return err("ewma_alpha", "must lie in (0, 1]".into());
        }
        if !(self.dama.overbooking >= 0.0) {
            return err("overbooking", "must be non-negative".into());
        }
        let pc = &self.pep_config;
        if pc.relay_cap_bytes < 2 * crate::transport::MSS as u64 {
            return err("relay_cap_bytes", "must hold at least two segments".into());
        }
        if !(pc.pace_fraction > 0.0 && pc.pace_fraction.is_finite()) {
            return err("pace_fraction", "must be positive".into());
        }
        if !(pc.window_gain >= 1.0 && pc.window_gain.is_finite()) {
            return err("window_gain", "must be at least 1".into());
        }
        if let Some(p) = &self.probes {
            if p.ue >= self.n_ues {
                return err("probes", format!("ue {} does not exist", p.ue));
            }
            if !(p.period_ms > 0.0) {
                return err("period_ms", "must be positive".into());
            }
        }
        for cell in self.cells() {
            cell.validate_access()?;
        }
        let end = self.duration();
        for (i, w) in self.workloads.iter().enumerate() {
            if w.start() >= end {
                return Err(ConfigError::invalid(
                    "start_s",
                    format!("workload {i} starts at {} s, not before the run end {} s", w.start_s, self.duration_s),
                ));
            }
        }
        apps::validate(&self.workloads, self.n_ues, end).map_err(|e| {
            let key = match &e {
                apps::WorkloadError::BadField { field, .. } => field,
                apps::WorkloadError::UnknownUe { .. } => "ue",
                apps::WorkloadError::Overlap { .. } => "workloads",
            };
            ConfigError::invalid(key, e.to_string())
        })
    }

    fn validate_access(&self) -> Result<(), ConfigError> {
        if self.cra_bps > self.return_rate_bps {
            return Err(ConfigError::invalid(
                "cra_bps",
                format!(
                    "CRA {} bps exceeds the return capacity {} bps",
                    self.cra_bps, self.return_rate_bps
                ),
            ));
        }
        let limit = self.return_rate_bps as f64 * (1.0 + self.dama.overbooking);
        if (self.cra_bps + self.rbdc_max_bps) as f64 > limit + 1e-6 {
            return Err(ConfigError::invalid(
                "rbdc_max_bps",
                format!(
                    "CRA + RBDC = {} bps exceeds the return capacity {} bps (overbooking allowance {:.0} %)",
                    self.cra_bps + self.rbdc_max_bps,
                    self.return_rate_bps,
                    self.dama.overbooking * 100.0
                ),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

/// Parses a scenario document. Errors carry the line of the offending key.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, ConfigError> {
    let spec: ScenarioSpec = serde_json::from_str(text).map_err(|e| ConfigError::parse(&e, text))?;
    spec.validate().map_err(|e| e.locate(text))?;
    Ok(spec)
}

/// `builtin:<name>`, a bare builtin name, or a path to a JSON file.
pub fn load_scenario(name_or_path: &str) -> Result<ScenarioSpec, crate::error::Error> {
    let name = name_or_path.strip_prefix("builtin:").unwrap_or(name_or_path);
    if let Some(spec) = builtin(name) {
        return Ok(spec);
    }
    if name_or_path.starts_with("builtin:") {
        return Err(ConfigError::invalid(
            "scenario",
            format!("unknown builtin `{name}`; known: {}", builtin_names().join(", ")),
        )
        .into());
    }
    let path = Path::new(name_or_path);
    let text = std::fs::read_to_string(path).map_err(|e| crate::error::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_scenario(&text).map_err(|e| e.in_file(path).into())
}
