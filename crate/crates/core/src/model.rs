//! Domain types shared by the scheduler, rate controller, coordinator,
//! workers and the simulator.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Camera a frame originates from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VideoSource {
    Inner,
    Outer,
}

impl VideoSource {
    pub const ALL: [VideoSource; 2] = [VideoSource::Inner, VideoSource::Outer];

    pub fn as_byte(self) -> u8 {
        match self {
            VideoSource::Inner => 0,
            VideoSource::Outer => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(VideoSource::Inner),
            1 => Some(VideoSource::Outer),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self.as_byte() as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            VideoSource::Inner => "inner",
            VideoSource::Outer => "outer",
        }
    }
}

impl fmt::Display for VideoSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Worker identifier. Worker 0 is always the one co-located with the coordinator.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct WorkerId(pub u32);

impl WorkerId {
    pub const PRIMARY: WorkerId = WorkerId(0);

    pub fn is_primary(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

/// A frame travelling through the pipeline. The payload is opaque and may be
/// empty in simulation, in which case only `payload_size` matters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameDescriptor {
    pub frame_id: u64,
    pub source: VideoSource,
    /// Microseconds since session start.
    pub capture_ts_us: u64,
    pub payload_size: u32,
    pub payload: Vec<u8>,
}

impl FrameDescriptor {
    /// Frame with no payload bytes, used by the simulator.
    pub fn synthetic(frame_id: u64, source: VideoSource, capture_ts_us: u64, size: u32) -> Self {
        FrameDescriptor {
            frame_id,
            source,
            capture_ts_us,
            payload_size: size,
            payload: Vec::new(),
        }
    }

    pub fn with_payload(
        frame_id: u64,
        source: VideoSource,
        capture_ts_us: u64,
        payload: Vec<u8>,
    ) -> Self {
        FrameDescriptor {
            frame_id,
            source,
            capture_ts_us,
            payload_size: payload.len() as u32,
            payload,
        }
    }

    pub fn capture_secs(&self) -> f64 {
        self.capture_ts_us as f64 * 1e-6
    }
}

/// Key identifying a frame across both cameras.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameKey {
    pub source: VideoSource,
    pub frame_id: u64,
}

impl From<&FrameDescriptor> for FrameKey {
    fn from(f: &FrameDescriptor) -> Self {
        FrameKey {
            source: f.source,
            frame_id: f.frame_id,
        }
    }
}

/// One `(source, analysis time, queue length)` entry reported by a worker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfRecord {
    pub worker_id: WorkerId,
    pub source: VideoSource,
    /// Seconds spent in the analyzer.
    pub analysis_time: f64,
    /// Frames still waiting in the worker queue once this frame finished.
    pub queue_len: u32,
    /// Seconds since run start.
    pub recorded_at: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("record for {worker} at t={got} precedes last record at t={last}")]
    OutOfOrder { worker: WorkerId, last: f64, got: f64 },
    #[error("analysis time must be positive and finite, got {0}")]
    BadAnalysisTime(f64),
    #[error("timestamp must be finite, got {0}")]
    BadTimestamp(f64),
}

/// Per-worker averages over the retained records. `None` marks a component
/// with no data; callers substitute their own default.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PerfSnapshot {
    pub inner: Option<f64>,
    pub outer: Option<f64>,
    pub queue_len: Option<f64>,
}

impl PerfSnapshot {
    pub fn is_empty(&self) -> bool {
        self.inner.is_none() && self.outer.is_none()
    }

    pub fn mean_for(&self, source: VideoSource) -> Option<f64> {
        match source {
            VideoSource::Inner => self.inner,
            VideoSource::Outer => self.outer,
        }
    }
}

/// Sliding-window worker performance log.
#[derive(Debug, Clone)]
pub struct PerfLog {
    window: f64,
    records: BTreeMap<WorkerId, VecDeque<PerfRecord>>,
}

impl Default for PerfLog {
    fn default() -> Self {
        PerfLog::new(1.0)
    }
}

impl PerfLog {
    pub fn new(window: f64) -> Self {
        PerfLog {
            window,
            records: BTreeMap::new(),
        }
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    /// Appends `rec` and prunes everything older than `rec.recorded_at - window`.
    pub fn append(&mut self, rec: PerfRecord) -> Result<(), ModelError> {
        if !(rec.analysis_time > 0.0 && rec.analysis_time.is_finite()) {
            return Err(ModelError::BadAnalysisTime(rec.analysis_time));
        }
        if !rec.recorded_at.is_finite() {
            return Err(ModelError::BadTimestamp(rec.recorded_at));
        }
        let entries = self.records.entry(rec.worker_id).or_default();
        if let Some(last) = entries.back() {
            if rec.recorded_at < last.recorded_at {
                return Err(ModelError::OutOfOrder {
                    worker: rec.worker_id,
                    last: last.recorded_at,
                    got: rec.recorded_at,
                });
            }
        }
        entries.push_back(rec);
        self.prune(rec.recorded_at);
        Ok(())
    }

    /// Drops every record with `recorded_at < now - window`. Idempotent.
    pub fn prune(&mut self, now: f64) {
        let cutoff = now - self.window;
        for entries in self.records.values_mut() {
            while entries.front().is_some_and(|r| r.recorded_at < cutoff) {
                entries.pop_front();
            }
        }
        self.records.retain(|_, e| !e.is_empty());
    }

    /// Forgets a worker entirely (used when it leaves).
    pub fn remove_worker(&mut self, worker: WorkerId) {
        self.records.remove(&worker);
    }

    pub fn records(&self, worker: WorkerId) -> impl Iterator<Item = &PerfRecord> {
        self.records.get(&worker).into_iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.records.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn snapshot(&self, worker: WorkerId) -> PerfSnapshot {
        let Some(entries) = self.records.get(&worker) else {
            return PerfSnapshot::default();
        };
        let mut sums = [0.0f64; 2];
        let mut counts = [0usize; 2];
        let mut queue_sum = 0.0;
        for r in entries {
            sums[r.source.index()] += r.analysis_time;
            counts[r.source.index()] += 1;
            queue_sum += r.queue_len as f64;
        }
        let mean = |i: usize| (counts[i] > 0).then(|| sums[i] / counts[i] as f64);
        PerfSnapshot {
            inner: mean(0),
            outer: mean(1),
            queue_len: (!entries.is_empty()).then(|| queue_sum / entries.len() as f64),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("latency deadline {deadline}s must exceed 2*T_F + T_R = {transfer}s")]
    DeadlineTooShort { deadline: f64, transfer: f64 },
    #[error("{0} must be positive and finite")]
    NonPositive(&'static str),
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("{0}")]
    Invalid(String),
}

/// Tunables shared by scheduling, rate control and the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    /// L_D, seconds.
    pub latency_deadline: f64,
    pub control_period: f64,
    /// Slots per worker sequence.
    pub sequence_length: usize,
    /// d_p, concurrent analyses per worker.
    pub degree_of_parallelism: u32,
    /// F_R, frames per second captured by each camera.
    pub native_frame_rate: f64,
    /// Bits per second.
    pub network_bandwidth: f64,
    /// T_F, seconds.
    pub frame_transfer_time: f64,
    /// T_R, seconds.
    pub result_transfer_time: f64,
    pub num_cameras: u32,
    pub buffer_capacity: usize,
    /// Analysis time assumed for a worker with no records.
    pub default_analysis_time: f64,
    /// Performance log retention, seconds.
    pub log_window: f64,
}

pub const INNER_FRAME_BYTES: u32 = 101 * 1024;
pub const OUTER_FRAME_BYTES: u32 = 116 * 1024;
pub const RESULT_BYTES: u32 = 1024;

impl Default for SystemParams {
    fn default() -> Self {
        let bandwidth = 1e8;
        let mean_frame = (INNER_FRAME_BYTES + OUTER_FRAME_BYTES) as f64 / 2.0;
        SystemParams {
            latency_deadline: 0.2,
            control_period: 0.5,
            sequence_length: 10,
            degree_of_parallelism: 2,
            native_frame_rate: 30.0,
            network_bandwidth: bandwidth,
            frame_transfer_time: mean_frame * 8.0 / bandwidth,
            result_transfer_time: RESULT_BYTES as f64 * 8.0 / bandwidth,
            num_cameras: 2,
            buffer_capacity: 300,
            default_analysis_time: 0.110,
            log_window: 1.0,
        }
    }
}

impl SystemParams {
    /// L_D - 2 T_F - T_R: the time budget left for queueing plus analysis.
    pub fn processing_budget(&self) -> f64 {
        self.latency_deadline - 2.0 * self.frame_transfer_time - self.result_transfer_time
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("latency_deadline", self.latency_deadline),
            ("control_period", self.control_period),
            ("native_frame_rate", self.native_frame_rate),
            ("network_bandwidth", self.network_bandwidth),
            ("default_analysis_time", self.default_analysis_time),
            ("log_window", self.log_window),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::NonPositive(name));
            }
        }
        for (name, v) in [
            ("frame_transfer_time", self.frame_transfer_time),
            ("result_transfer_time", self.result_transfer_time),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::NonPositive(name));
            }
        }
        if self.sequence_length == 0 {
            return Err(ConfigError::ZeroCount("sequence_length"));
        }
        if self.degree_of_parallelism == 0 {
            return Err(ConfigError::ZeroCount("degree_of_parallelism"));
        }
        if self.num_cameras == 0 {
            return Err(ConfigError::ZeroCount("num_cameras"));
        }
        if self.buffer_capacity == 0 {
            return Err(ConfigError::ZeroCount("buffer_capacity"));
        }
        if self.processing_budget() <= 0.0 {
            return Err(ConfigError::DeadlineTooShort {
                deadline: self.latency_deadline,
                transfer: 2.0 * self.frame_transfer_time + self.result_transfer_time,
            });
        }
        Ok(())
    }
}

/// A single labeled detection. Labels are opaque except for the alarm labels
/// understood by the coordinator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
}

impl Detection {
    pub fn new(label: impl Into<String>) -> Self {
        Detection {
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisResult {
    pub frame_id: u64,
    pub source: VideoSource,
    pub worker_id: WorkerId,
    pub detections: Vec<Detection>,
    pub analysis_time: f64,
    pub queue_len_after: u32,
    pub alarm: bool,
    /// Set when the analyzer failed; `analysis_time` is then the elapsed time.
    pub error: bool,
}

impl AnalysisResult {
    pub fn key(&self) -> FrameKey {
        FrameKey {
            source: self.source,
            frame_id: self.frame_id,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(worker: u32, source: VideoSource, t: f64, q: u32, at: f64) -> PerfRecord {
        PerfRecord {
            worker_id: WorkerId(worker),
            source,
            analysis_time: t,
            queue_len: q,
            recorded_at: at,
        }
    }

    #[test]
    fn append_to_empty_log() {
        let mut log = PerfLog::new(1.0);
        log.append(rec(0, VideoSource::Inner, 0.04, 0, 0.1)).unwrap();
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn append_prunes_past_window() {
        let mut log = PerfLog::new(1.0);
        log.append(rec(0, VideoSource::Inner, 0.04, 0, 0.0)).unwrap();
        log.append(rec(0, VideoSource::Inner, 0.04, 0, 1.2)).unwrap();
        let times: Vec<f64> = log.records(WorkerId(0)).map(|r| r.recorded_at).collect();
        assert_eq!(times, vec![1.2]);
    }

    #[test]
    fn prune_keeps_records_inside_window() {
        let mut log = PerfLog::new(1.0);
        for t in [0.0, 0.3, 0.6, 0.9, 1.2] {
            log.append(rec(0, VideoSource::Outer, 0.1, 0, t)).unwrap();
        }
        log.prune(1.2);
        let times: Vec<f64> = log.records(WorkerId(0)).map(|r| r.recorded_at).collect();
        assert_eq!(times, vec![0.3, 0.6, 0.9, 1.2]);
    }

    #[test]
    fn out_of_order_append_is_rejected() {
        let mut log = PerfLog::new(1.0);
        log.append(rec(3, VideoSource::Inner, 0.04, 0, 0.5)).unwrap();
        let err = log
            .append(rec(3, VideoSource::Inner, 0.04, 0, 0.4))
            .unwrap_err();
        assert!(matches!(err, ModelError::OutOfOrder { .. }));
        // other workers are independent
        log.append(rec(4, VideoSource::Inner, 0.04, 0, 0.45)).unwrap();
    }

    #[test]
    fn rejects_non_positive_analysis_time() {
        let mut log = PerfLog::new(1.0);
        assert!(log.append(rec(0, VideoSource::Inner, 0.0, 0, 0.0)).is_err());
    }

    #[test]
    fn snapshot_means() {
        let mut log = PerfLog::new(1.0);
        log.append(rec(1, VideoSource::Inner, 0.040, 0, 0.1)).unwrap();
        log.append(rec(1, VideoSource::Inner, 0.046, 1, 0.2)).unwrap();
        log.append(rec(1, VideoSource::Outer, 0.110, 1, 0.3)).unwrap();
        let s = log.snapshot(WorkerId(1));
        assert!((s.inner.unwrap() - 0.043).abs() < 1e-12);
        assert!((s.outer.unwrap() - 0.110).abs() < 1e-12);
        assert!((s.queue_len.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn snapshot_of_unknown_worker_is_empty() {
        let log = PerfLog::new(1.0);
        assert_eq!(log.snapshot(WorkerId(7)), PerfSnapshot::default());
    }

    #[test]
    fn snapshot_with_only_outer_records() {
        let mut log = PerfLog::new(1.0);
        log.append(rec(0, VideoSource::Outer, 0.100, 0, 0.0)).unwrap();
        let s = log.snapshot(WorkerId(0));
        assert_eq!(s.inner, None);
        assert_eq!(s.outer, Some(0.100));
        assert_eq!(s.queue_len, Some(0.0));
    }

    #[test]
    fn default_params_are_valid() {
        let p = SystemParams::default();
        p.validate().unwrap();
        assert_eq!(p.sequence_length, 10);
        assert_eq!(p.buffer_capacity, 300);
    }

    #[test]
    fn deadline_must_cover_transfers() {
        let p = SystemParams {
            latency_deadline: 0.01,
            frame_transfer_time: 0.005,
            result_transfer_time: 0.001,
            ..SystemParams::default()
        };
        assert!(matches!(
            p.validate(),
            Err(ConfigError::DeadlineTooShort { .. })
        ));
    }

    #[test]
    fn source_byte_round_trip() {
        for s in VideoSource::ALL {
            assert_eq!(VideoSource::from_byte(s.as_byte()), Some(s));
        }
        assert_eq!(VideoSource::from_byte(2), None);
    }
}
