//! Scenario files: a TOML description of cameras, devices and parameters.
//! See `scenarios/README.md` for the schema.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ConfigError, SystemParams, VideoSource, INNER_FRAME_BYTES, OUTER_FRAME_BYTES, RESULT_BYTES};
use crate::worker::{AnalysisProfile, DeviceClass, Drift, InteractionWindow, LatencyDist};

/// Coordination load carried by the primary device, as a fraction of its
/// analysis time.
pub const PRIMARY_OVERHEAD: f64 = 0.10;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Params(#[from] ConfigError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerMode {
    #[default]
    Deva,
    #[serde(alias = "work_stealing")]
    WorkStealing,
}

impl SchedulerMode {
    pub fn name(self) -> &'static str {
        match self {
            SchedulerMode::Deva => "deva",
            SchedulerMode::WorkStealing => "work-stealing",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "deva" => Some(SchedulerMode::Deva),
            "work-stealing" | "work_stealing" => Some(SchedulerMode::WorkStealing),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arrival {
    /// Captures every 1/F_R seconds and decimates to the transfer rate.
    #[default]
    Periodic,
    /// Transfers form a Poisson process at the transfer rate.
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub source: VideoSource,
    /// Mean frame size, bytes. Defaults to 101 KiB inner / 116 KiB outer.
    #[serde(default)]
    pub frame_size: Option<u32>,
    #[serde(default)]
    pub frame_size_cv: f64,
    #[serde(default)]
    pub arrival: Arrival,
    /// Transfer rate used when rate control is off. Defaults to F_R.
    #[serde(default)]
    pub fixed_rate: Option<f64>,
    #[serde(default)]
    pub alarm_probability: f64,
}

impl CameraConfig {
    pub fn new(source: VideoSource) -> Self {
        CameraConfig {
            source,
            frame_size: None,
            frame_size_cv: 0.0,
            arrival: Arrival::Periodic,
            fixed_rate: None,
            alarm_probability: 0.0,
        }
    }

    pub fn mean_frame_size(&self) -> u32 {
        self.frame_size.unwrap_or(match self.source {
            VideoSource::Inner => INNER_FRAME_BYTES,
            VideoSource::Outer => OUTER_FRAME_BYTES,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkEvent {
    Join,
    Leave,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectivityChange {
    pub at: f64,
    pub event: LinkEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub name: String,
    #[serde(default = "default_class")]
    pub class: DeviceClass,
    /// Replace the class preset for a source.
    #[serde(default)]
    pub inner: Option<LatencyDist>,
    #[serde(default)]
    pub outer: Option<LatencyDist>,
    /// d_p; defaults to the scenario parameter.
    #[serde(default)]
    pub parallelism: Option<u32>,
    #[serde(default)]
    pub drift: Drift,
    /// Fractional slowdown; defaults to the coordination overhead on the
    /// primary and zero elsewhere.
    #[serde(default)]
    pub overhead: Option<f64>,
    /// Devices without a schedule are connected for the whole run. A device
    /// whose first change is a join starts disconnected.
    #[serde(default)]
    pub connectivity: Vec<ConnectivityChange>,
    #[serde(default)]
    pub interactions: Vec<InteractionWindow>,
}

fn default_class() -> DeviceClass {
    DeviceClass::Strong
}

impl DeviceConfig {
    pub fn new(name: impl Into<String>, class: DeviceClass) -> Self {
        DeviceConfig {
            name: name.into(),
            class,
            inner: None,
            outer: None,
            parallelism: None,
            drift: Drift::None,
            overhead: None,
            connectivity: Vec::new(),
            interactions: Vec::new(),
        }
    }

    pub fn starts_connected(&self) -> bool {
        self.connectivity
            .first()
            .is_none_or(|c| c.event == LinkEvent::Leave)
    }
}

/// Ground truth for one simulated device.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfile {
    pub name: String,
    pub class: DeviceClass,
    pub analysis: AnalysisProfile,
    pub parallelism: u32,
    pub connectivity: Vec<ConnectivityChange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Bits per second; defaults to the scenario parameter.
    pub bandwidth: Option<f64>,
    /// Fixed cost per message, seconds.
    pub overhead: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            bandwidth: None,
            overhead: 0.0,
        }
    }
}

/// Serialized point-to-point links.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkModel {
    pub bandwidth: f64,
    pub overhead: f64,
}

impl NetworkModel {
    pub fn transfer_time(&self, bytes: u64) -> f64 {
        bytes as f64 * 8.0 / self.bandwidth + self.overhead
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Simulated seconds.
    pub duration: f64,
    #[serde(default)]
    pub scheduler: SchedulerMode,
    #[serde(default = "default_true")]
    pub rate_control: bool,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub params: SystemParams,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default = "default_result_size")]
    pub result_size: u32,
    /// Frames the work-stealing baseline hands out per request.
    #[serde(default = "default_steal_batch")]
    pub steal_batch: usize,
    pub cameras: Vec<CameraConfig>,
    /// The first device is the primary.
    pub devices: Vec<DeviceConfig>,
}

fn default_true() -> bool {
    true
}

fn default_seed() -> u64 {
    42
}

fn default_result_size() -> u32 {
    RESULT_BYTES
}

fn default_steal_batch() -> usize {
    2
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn network(&self) -> NetworkModel {
        NetworkModel {
            bandwidth: self.network.bandwidth.unwrap_or(self.params.network_bandwidth),
            overhead: self.network.overhead,
        }
    }

    /// Parameters as seen by the controller: transfer times follow from the
    /// cameras' mean frame size, the result size and the network model.
    pub fn effective_params(&self) -> SystemParams {
        let net = self.network();
        let mut p = self.params.clone();
        p.network_bandwidth = net.bandwidth;
        if !self.cameras.is_empty() {
            let mean = self
                .cameras
                .iter()
                .map(|c| c.mean_frame_size() as f64)
                .sum::<f64>()
                / self.cameras.len() as f64;
            p.frame_transfer_time = mean * 8.0 / net.bandwidth + net.overhead;
            p.num_cameras = self.cameras.len() as u32;
        }
        p.result_transfer_time = net.transfer_time(self.result_size as u64);
        p
    }

    pub fn device_profiles(&self) -> Vec<DeviceProfile> {
        self.devices
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let base = AnalysisProfile::for_class(d.class).unwrap_or_else(|| AnalysisProfile {
                    inner: LatencyDist::lognormal(self.params.default_analysis_time, 0.0),
                    outer: LatencyDist::lognormal(self.params.default_analysis_time, 0.0),
                    drift: Drift::None,
                    interactions: Vec::new(),
                    overhead: 0.0,
                });
                let analysis = AnalysisProfile {
                    inner: d.inner.unwrap_or(base.inner),
                    outer: d.outer.unwrap_or(base.outer),
                    drift: d.drift,
                    interactions: d.interactions.clone(),
                    overhead: d
                        .overhead
                        .unwrap_or(if i == 0 { PRIMARY_OVERHEAD } else { 0.0 }),
                };
                DeviceProfile {
                    name: d.name.clone(),
                    class: d.class,
                    analysis,
                    parallelism: d.parallelism.unwrap_or(self.params.degree_of_parallelism),
                    connectivity: d.connectivity.clone(),
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.effective_params().validate()?;
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration must be a non-negative number of seconds"));
        }
        if self.cameras.is_empty() {
            return Err(invalid("at least one camera is required"));
        }
        if self.devices.is_empty() {
            return Err(invalid("at least one device (the primary) is required"));
        }
        if self.steal_batch == 0 {
            return Err(invalid("steal_batch must be at least 1"));
        }
        if !(self.network.overhead >= 0.0) {
            return Err(invalid("network overhead must be non-negative"));
        }
        for c in &self.cameras {
            if let Some(r) = c.fixed_rate {
                if !(r >= 0.0 && r.is_finite()) {
                    return Err(invalid("fixed_rate must be non-negative"));
                }
                if c.arrival == Arrival::Periodic && r > self.params.native_frame_rate {
                    return Err(invalid("fixed_rate exceeds the native frame rate"));
                }
            }
            if !(0.0..=1.0).contains(&c.alarm_probability) {
                return Err(invalid("alarm_probability must lie in [0, 1]"));
            }
            if !(c.frame_size_cv >= 0.0) {
                return Err(invalid("frame_size_cv must be non-negative"));
            }
        }
        if !self.devices[0].connectivity.is_empty() {
            return Err(invalid("the primary device is always connected"));
        }
        for d in &self.devices {
            if d.class == DeviceClass::Custom && (d.inner.is_none() || d.outer.is_none()) {
                return Err(invalid(format!(
                    "custom device {} needs inner and outer distributions",
                    d.name
                )));
            }
            for dist in [d.inner, d.outer].into_iter().flatten() {
                if !(dist.mean > 0.0 && dist.mean.is_finite()) || !(dist.cv >= 0.0) {
                    return Err(invalid(format!("device {}: bad analysis distribution", d.name)));
                }
            }
            if d.parallelism == Some(0) {
                return Err(invalid(format!("device {}: parallelism must be ≥ 1", d.name)));
            }
            if d.overhead.is_some_and(|o| !(o >= 0.0)) {
                return Err(invalid(format!("device {}: overhead must be ≥ 0", d.name)));
            }
            for pair in d.connectivity.windows(2) {
                if pair[1].at < pair[0].at {
                    return Err(invalid(format!("device {}: connectivity out of order", d.name)));
                }
                if pair[1].event == pair[0].event {
                    return Err(invalid(format!(
                        "device {}: joins and leaves must alternate",
                        d.name
                    )));
                }
            }
            if d.connectivity.iter().any(|c| !(c.at >= 0.0)) {
                return Err(invalid(format!("device {}: negative connectivity time", d.name)));
            }
            for w in &d.interactions {
                if !(w.end > w.start && w.factor > 0.0) {
                    return Err(invalid(format!("device {}: bad interaction window", d.name)));
                }
            }
            for pair in d.interactions.windows(2) {
                if pair[1].start < pair[0].start {
                    return Err(invalid(format!("device {}: interactions out of order", d.name)));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "tiny"
duration = 10.0

[[cameras]]
source = "inner"

[[cameras]]
source = "outer"

[[devices]]
name = "primary"
class = "strong"
"#;

    #[test]
    fn minimal_scenario_gets_defaults() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 42);
        assert!(cfg.rate_control);
        assert_eq!(cfg.scheduler, SchedulerMode::Deva);
        let p = cfg.effective_params();
        let expected = (101.0 + 116.0) / 2.0 * 1024.0 * 8.0 / 1e8;
        assert!((p.frame_transfer_time - expected).abs() < 1e-12);
        let profiles = cfg.device_profiles();
        assert_eq!(profiles[0].analysis.overhead, PRIMARY_OVERHEAD);
        assert_eq!(profiles[0].parallelism, 2);
    }

    #[test]
    fn short_deadline_is_a_config_error() {
        let text = format!("{MINIMAL}\n[params]\nlatency_deadline = 0.015\n");
        // [params] after [[devices]] is still a top-level table in TOML
        let err = ScenarioConfig::from_toml(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::Params(ConfigError::DeadlineTooShort { .. })));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("duration = 10.0", "duration = 10.0\nbogus = 1");
        assert!(matches!(ScenarioConfig::from_toml(&text), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn connectivity_must_alternate() {
        let mut cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        let mut d = DeviceConfig::new("b", DeviceClass::Strong);
        d.connectivity = vec![
            ConnectivityChange { at: 1.0, event: LinkEvent::Join },
            ConnectivityChange { at: 2.0, event: LinkEvent::Join },
        ];
        cfg.devices.push(d);
        assert!(matches!(cfg.validate(), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn primary_cannot_have_a_schedule() {
        let mut cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        cfg.devices[0].connectivity = vec![ConnectivityChange { at: 1.0, event: LinkEvent::Leave }];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        let again = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }
}
