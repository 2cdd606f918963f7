//! Scenario files: JSON, strict about unknown keys, with defaults for the
//! optional sections.

use std::collections::HashSet;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::address_map::{AddressMap, AgentAddress};
use crate::net_coord::{DEFAULT_EXPIRY_WINDOWS, MAX_PAYLOAD_LEN};
use crate::netsim::RadioParams;
use crate::physics::{AgentTrack, ChannelFidelity, WorldModel};
use crate::sync::DEFAULT_WINDOW_NS;

use super::flow::HEADER_LEN;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    #[serde(default = "FlowConfig::default_payload_size")]
    pub payload_size: usize,
    #[serde(default = "FlowConfig::default_arq_window")]
    pub arq_window: usize,
    #[serde(default = "FlowConfig::default_retransmit_timeout_ns")]
    pub retransmit_timeout_ns: u64,
}

impl FlowConfig {
    fn default_payload_size() -> usize {
        1000
    }

    fn default_arq_window() -> usize {
        16
    }

    fn default_retransmit_timeout_ns() -> u64 {
        200_000_000
    }

    pub fn new(src: Ipv4Addr, dst: Ipv4Addr) -> Self {
        FlowConfig {
            src,
            dst,
            payload_size: Self::default_payload_size(),
            arq_window: Self::default_arq_window(),
            retransmit_timeout_ns: Self::default_retransmit_timeout_ns(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub sample_period_ns: u64,
    pub smoothing_window_ns: u64,
    pub histogram_bins: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            sample_period_ns: 10_000_000,
            smoothing_window_ns: 200_000_000,
            histogram_bins: 40,
        }
    }
}

impl MetricsConfig {
    /// Samples covered by the moving average.
    pub fn smoothing_samples(&self) -> usize {
        (self.smoothing_window_ns / self.sample_period_ns) as usize
    }
}

fn default_window_ns() -> u64 {
    DEFAULT_WINDOW_NS
}

fn default_substeps() -> u32 {
    1
}

fn default_expiry() -> u64 {
    DEFAULT_EXPIRY_WINDOWS
}

fn default_fidelity() -> ChannelFidelity {
    ChannelFidelity::LosNlos
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_window_ns")]
    pub window_ns: u64,
    pub duration_ns: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_substeps")]
    pub substeps_per_window: u32,
    #[serde(default = "default_expiry")]
    pub expiry_windows: u64,
    #[serde(default = "default_fidelity")]
    pub fidelity: ChannelFidelity,
    pub world: WorldModel,
    pub tracks: Vec<AgentTrack>,
    pub agents: Vec<AgentAddress>,
    #[serde(default)]
    pub radio: RadioParams,
    #[serde(default)]
    pub flows: Vec<FlowConfig>,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

impl ScenarioConfig {
    pub fn address_map(&self) -> Result<AddressMap, ConfigError> {
        AddressMap::new(self.agents.iter().copied()).map_err(|e| invalid("agents", e.to_string()))
    }

    pub fn windows(&self) -> u64 {
        self.duration_ns / self.window_ns
    }

    pub fn samples(&self) -> usize {
        (self.duration_ns / self.metrics.sample_period_ns) as usize
    }

    /// Checks every cross-field invariant. Error paths point into the
    /// document.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let w = self.window_ns;
        if w == 0 {
            return Err(invalid("window_ns", "must be positive"));
        }
        if self.duration_ns == 0 || !self.duration_ns.is_multiple_of(w) {
            return Err(invalid(
                "duration_ns",
                format!(
                    "duration_ns = {} must be a positive multiple of window_ns = {w}",
                    self.duration_ns
                ),
            ));
        }
        if self.substeps_per_window == 0 || !w.is_multiple_of(u64::from(self.substeps_per_window)) {
            return Err(invalid(
                "substeps_per_window",
                format!("{} does not divide window_ns = {w}", self.substeps_per_window),
            ));
        }
        if self.expiry_windows == 0 {
            return Err(invalid("expiry_windows", "must be at least 1"));
        }
        self.validate_metrics()?;
        self.fidelity
            .validate()
            .map_err(|e| invalid("fidelity", e.to_string()))?;
        self.world.validate().map_err(|e| invalid("world", e.to_string()))?;
        self.radio.validate().map_err(|e| invalid("radio", e.to_string()))?;

        let mut ids = HashSet::new();
        for (k, t) in self.tracks.iter().enumerate() {
            t.validate().map_err(|e| invalid(format!("tracks[{k}]"), e.to_string()))?;
            if !ids.insert(t.agent_id) {
                return Err(invalid(
                    format!("tracks[{k}].agent_id"),
                    format!("agent {} has two tracks", t.agent_id),
                ));
            }
        }
        if let Some(k) = (0..self.tracks.len() as u32).find(|k| !ids.contains(k)) {
            return Err(invalid(
                "tracks",
                format!("agent ids must be 0..{}; {k} is missing", self.tracks.len()),
            ));
        }
        let map = self.address_map()?;
        for (k, a) in self.agents.iter().enumerate() {
            if !ids.contains(&a.agent_id) {
                return Err(invalid(
                    format!("agents[{k}].agent_id"),
                    format!("agent {} has no track", a.agent_id),
                ));
            }
        }
        if let Some(id) = (0..self.tracks.len() as u32).find(|id| map.address(*id).is_none()) {
            return Err(invalid("agents", format!("agent {id} has no address")));
        }

        let mut pairs = HashSet::new();
        for (k, f) in self.flows.iter().enumerate() {
            let at = |field: &str| format!("flows[{k}].{field}");
            for (field, a) in [("src", f.src), ("dst", f.dst)] {
                if !map.contains_address(a) {
                    return Err(invalid(at(field), format!("{a} is not an agent address")));
                }
            }
            if f.src == f.dst {
                return Err(invalid(at("dst"), "flow to itself"));
            }
            if !pairs.insert((f.src, f.dst)) {
                return Err(invalid(at("dst"), format!("second flow {} -> {}", f.src, f.dst)));
            }
            if f.payload_size == 0 || f.payload_size + HEADER_LEN > MAX_PAYLOAD_LEN {
                return Err(invalid(
                    at("payload_size"),
                    format!("{} outside 1..={}", f.payload_size, MAX_PAYLOAD_LEN - HEADER_LEN),
                ));
            }
            if f.arq_window == 0 {
                return Err(invalid(at("arq_window"), "must be at least 1"));
            }
            if f.retransmit_timeout_ns == 0 {
                return Err(invalid(at("retransmit_timeout_ns"), "must be positive"));
            }
        }
        Ok(())
    }

    fn validate_metrics(&self) -> Result<(), ConfigError> {
        let m = &self.metrics;
        let p = m.sample_period_ns;
        if p == 0 || !p.is_multiple_of(self.window_ns) {
            return Err(invalid(
                "metrics.sample_period_ns",
                format!("{p} must be a positive multiple of window_ns = {}", self.window_ns),
            ));
        }
        if !self.duration_ns.is_multiple_of(p) {
            return Err(invalid(
                "metrics.sample_period_ns",
                format!("duration_ns = {} is not a multiple of {p}", self.duration_ns),
            ));
        }
        if m.smoothing_window_ns == 0 || !m.smoothing_window_ns.is_multiple_of(p) {
            return Err(invalid(
                "metrics.smoothing_window_ns",
                format!("{} must be a positive multiple of {p}", m.smoothing_window_ns),
            ));
        }
        if m.histogram_bins == 0 {
            return Err(invalid("metrics.histogram_bins", "must be at least 1"));
        }
        Ok(())
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Parse {
            path: if path == "." { "<document>".into() } else { path },
            message: e.into_inner().to_string(),
        }
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_scenario(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "duration_ns": 1000000000,
        "world": {"bounds": {"min": [0, 0, 0], "max": [100, 100, 10]}},
        "tracks": [
            {"agent_id": 0, "waypoints": [[10, 10, 1]], "speed": 1},
            {"agent_id": 1, "waypoints": [[40, 10, 1]], "speed": 1}
        ],
        "agents": [
            {"agent_id": 0, "address": "10.0.0.1"},
            {"agent_id": 1, "address": "10.0.0.2"}
        ],
        "flows": [{"src": "10.0.0.1", "dst": "10.0.0.2"}]
    }"#;

    fn edit(f: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        f(&mut v);
        v.to_string()
    }

    #[test]
    fn minimal_gets_defaults() {
        let c = parse_scenario(MINIMAL).unwrap();
        assert_eq!(c.window_ns, 1_000_000);
        assert_eq!(c.fidelity, ChannelFidelity::LosNlos);
        assert_eq!(c.radio, RadioParams::default());
        assert_eq!(c.flows[0].payload_size, 1000);
        assert_eq!(c.flows[0].arq_window, 16);
        assert_eq!(c.flows[0].retransmit_timeout_ns, 200_000_000);
        assert_eq!(c.metrics.smoothing_samples(), 20);
        assert_eq!(c.samples(), 100);
    }

    #[test]
    fn unknown_key_reports_path() {
        let text = edit(|v| v["flows"][0]["payload"] = 10.into());
        match parse_scenario(&text) {
            Err(ConfigError::Parse { path, message }) => {
                assert_eq!(path, "flows[0].payload");
                assert!(message.contains("payload"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duration_not_multiple_names_both() {
        let text = edit(|v| v["duration_ns"] = 1_000_500.into());
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("1000500") && err.contains("1000000"), "{err}");
    }

    #[test]
    fn dangling_flow_address() {
        let text = edit(|v| v["flows"][0]["dst"] = "10.0.0.9".into());
        match parse_scenario(&text) {
            Err(ConfigError::Invalid { path, .. }) => assert_eq!(path, "flows[0].dst"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn agent_without_address() {
        let text = edit(|v| {
            v["agents"].as_array_mut().unwrap().pop();
        });
        assert!(parse_scenario(&text).is_err());
    }

    #[test]
    fn sample_period_must_divide() {
        let text = edit(|v| v["metrics"] = serde_json::json!({"sample_period_ns": 1_500_000}));
        match parse_scenario(&text) {
            Err(ConfigError::Invalid { path, .. }) => assert_eq!(path, "metrics.sample_period_ns"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_value_type_reports_path() {
        let text = edit(|v| v["tracks"][1]["speed"] = "fast".into());
        match parse_scenario(&text) {
            Err(ConfigError::Parse { path, .. }) => assert_eq!(path, "tracks[1].speed"),
            other => panic!("{other:?}"),
        }
    }
}
