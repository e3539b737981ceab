//! Worker side: a shared FIFO feeding `d_p` analyzer slots, pluggable
//! analyzers, and the latency model used by the stub analyzer.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::AlarmKind;
use crate::model::{Detection, FrameDescriptor, VideoSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistFamily {
    #[default]
    Lognormal,
    Exponential,
    Deterministic,
}

/// Analysis-time distribution for one video source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyDist {
    /// Mean, seconds.
    pub mean: f64,
    /// Coefficient of variation; ignored by the exponential family.
    #[serde(default)]
    pub cv: f64,
    #[serde(default)]
    pub family: DistFamily,
}

impl LatencyDist {
    pub fn lognormal(mean: f64, cv: f64) -> Self {
        LatencyDist {
            mean,
            cv,
            family: DistFamily::Lognormal,
        }
    }

    pub fn exponential(mean: f64) -> Self {
        LatencyDist {
            mean,
            cv: 1.0,
            family: DistFamily::Exponential,
        }
    }

    pub fn constant(mean: f64) -> Self {
        LatencyDist {
            mean,
            cv: 0.0,
            family: DistFamily::Deterministic,
        }
    }

    /// Draws a sample with the given mean (the configured mean after scaling).
    pub fn sample_with_mean<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> f64 {
        let x = match self.family {
            DistFamily::Deterministic => mean,
            DistFamily::Lognormal if self.cv <= 0.0 => mean,
            DistFamily::Lognormal => {
                let sigma2 = (1.0 + self.cv * self.cv).ln();
                let mu = mean.ln() - sigma2 / 2.0;
                LogNormal::new(mu, sigma2.sqrt())
                    .expect("finite lognormal parameters")
                    .sample(rng)
            }
            DistFamily::Exponential => Exp::new(1.0 / mean)
                .expect("positive exponential rate")
                .sample(rng),
        };
        x.max(1e-6)
    }
}

/// Slow thermal drift of analysis time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Drift {
    #[default]
    None,
    /// Multiplier ramps linearly from 1 to `peak` over `ramp` seconds, then holds.
    Linear { peak: f64, ramp: f64 },
}

impl Drift {
    pub fn factor(&self, t: f64) -> f64 {
        match *self {
            Drift::None => 1.0,
            Drift::Linear { peak, ramp } => {
                if ramp <= 0.0 {
                    peak
                } else {
                    1.0 + (peak - 1.0) * (t / ramp).clamp(0.0, 1.0)
                }
            }
        }
    }
}

/// A period during which the device owner's own work slows analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionWindow {
    pub start: f64,
    pub end: f64,
    pub factor: f64,
}

/// Everything the stub analyzer needs to draw analysis times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisProfile {
    pub inner: LatencyDist,
    pub outer: LatencyDist,
    #[serde(default)]
    pub drift: Drift,
    #[serde(default)]
    pub interactions: Vec<InteractionWindow>,
    /// Extra multiplicative load, e.g. coordination work on the primary.
    #[serde(default)]
    pub overhead: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceClass {
    Strong,
    Weak,
    Custom,
}

/// Per-frame analysis-time dispersion of strong devices.
pub const STRONG_CV: f64 = 0.2;
/// Weak devices vary much more from frame to frame.
pub const WEAK_CV: f64 = 0.35;

impl AnalysisProfile {
    pub fn strong() -> Self {
        AnalysisProfile {
            inner: LatencyDist::lognormal(0.0315, STRONG_CV),
            outer: LatencyDist::lognormal(0.0827, STRONG_CV),
            drift: Drift::None,
            interactions: Vec::new(),
            overhead: 0.0,
        }
    }

    pub fn weak() -> Self {
        AnalysisProfile {
            inner: LatencyDist::lognormal(0.043, WEAK_CV),
            outer: LatencyDist::lognormal(0.110, WEAK_CV),
            drift: Drift::None,
            interactions: Vec::new(),
            overhead: 0.0,
        }
    }

    pub fn for_class(class: DeviceClass) -> Option<Self> {
        match class {
            DeviceClass::Strong => Some(Self::strong()),
            DeviceClass::Weak => Some(Self::weak()),
            DeviceClass::Custom => None,
        }
    }

    pub fn dist(&self, source: VideoSource) -> &LatencyDist {
        match source {
            VideoSource::Inner => &self.inner,
            VideoSource::Outer => &self.outer,
        }
    }

    pub fn interaction_factor(&self, t: f64) -> f64 {
        self.interactions
            .iter()
            .filter(|w| t >= w.start && t < w.end)
            .map(|w| w.factor)
            .product()
    }

    /// Mean analysis time at `t` once drift, interactions and overhead apply.
    pub fn mean_at(&self, source: VideoSource, t: f64) -> f64 {
        self.dist(source).mean * self.drift.factor(t) * self.interaction_factor(t) * (1.0 + self.overhead)
    }
}

/// One stub analysis-time draw for `source` at run time `t_now`.
pub fn stub_analyzer_sample<R: Rng + ?Sized>(
    profile: &AnalysisProfile,
    source: VideoSource,
    t_now: f64,
    rng: &mut R,
) -> f64 {
    let mean = profile.mean_at(source, t_now);
    profile.dist(source).sample_with_mean(mean, rng)
}

/// Output of one analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub detections: Vec<Detection>,
    pub analysis_time: f64,
}

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error("analyzer process: {0}")]
    Io(#[from] std::io::Error),
    #[error("analyzer exited with {0}")]
    Exit(std::process::ExitStatus),
}

/// Pluggable per-frame analyzer. One instance per slot.
pub trait AnalyzerPlugin: Send {
    fn analyze(&mut self, frame: &FrameDescriptor) -> Result<Analysis, AnalyzerError>;
}

/// Latency-sampling analyzer. In live mode it sleeps for the sampled time so
/// the slot is genuinely occupied.
pub struct StubAnalyzer {
    profile: AnalysisProfile,
    rng: ChaCha8Rng,
    alarm_probability: f64,
    started: Instant,
    sleep: bool,
}

impl StubAnalyzer {
    pub fn new(profile: AnalysisProfile, seed: u64, alarm_probability: f64, sleep: bool) -> Self {
        StubAnalyzer {
            profile,
            rng: ChaCha8Rng::seed_from_u64(seed),
            alarm_probability,
            started: Instant::now(),
            sleep,
        }
    }
}

/// Stub detections: an alarm label with the given probability.
pub fn stub_detections<R: Rng + ?Sized>(
    source: VideoSource,
    alarm_probability: f64,
    rng: &mut R,
) -> Vec<Detection> {
    if alarm_probability > 0.0 && rng.random::<f64>() < alarm_probability {
        vec![Detection::new(AlarmKind::for_source(source).label())]
    } else {
        Vec::new()
    }
}

impl AnalyzerPlugin for StubAnalyzer {
    fn analyze(&mut self, frame: &FrameDescriptor) -> Result<Analysis, AnalyzerError> {
        let t_now = self.started.elapsed().as_secs_f64();
        let analysis_time = stub_analyzer_sample(&self.profile, frame.source, t_now, &mut self.rng);
        let detections = stub_detections(frame.source, self.alarm_probability, &mut self.rng);
        if self.sleep {
            std::thread::sleep(Duration::from_secs_f64(analysis_time));
        }
        Ok(Analysis {
            detections,
            analysis_time,
        })
    }
}

/// Runs a user-provided program per frame: the payload goes to stdin, each
/// non-empty stdout line becomes a detection label.
pub struct ExternalCommandAnalyzer {
    program: String,
    args: Vec<String>,
}

impl ExternalCommandAnalyzer {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        ExternalCommandAnalyzer {
            program: program.into(),
            args,
        }
    }
}

impl AnalyzerPlugin for ExternalCommandAnalyzer {
    fn analyze(&mut self, frame: &FrameDescriptor) -> Result<Analysis, AnalyzerError> {
        let start = Instant::now();
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .env("EVS_FRAME_SOURCE", frame.source.name())
            .env("EVS_FRAME_ID", frame.frame_id.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        if let Some(mut stdin) = child.stdin.take() {
            // a program that ignores stdin may close it early
            let _ = stdin.write_all(&frame.payload);
        }
        let mut out = String::new();
        if let Some(mut stdout) = child.stdout.take() {
            stdout.read_to_string(&mut out)?;
        }
        let status = child.wait()?;
        if !status.success() {
            return Err(AnalyzerError::Exit(status));
        }
        Ok(Analysis {
            detections: out
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(Detection::new)
                .collect(),
            analysis_time: start.elapsed().as_secs_f64().max(1e-6),
        })
    }
}

/// Frame queue plus slot occupancy. Slots pull from one shared FIFO.
#[derive(Debug, Clone)]
pub struct WorkerCore {
    slots: usize,
    busy: usize,
    queue: VecDeque<FrameDescriptor>,
}

/// What happens when a slot finishes a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    /// Frames still waiting after the freed slot picked up its next frame.
    pub queue_len_after: u32,
    /// Frame the freed slot starts next, if any was waiting.
    pub next: Option<FrameDescriptor>,
}

impl WorkerCore {
    pub fn new(slots: usize) -> Self {
        WorkerCore {
            slots: slots.max(1),
            busy: 0,
            queue: VecDeque::new(),
        }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn busy(&self) -> usize {
        self.busy
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Frames held: waiting plus in analysis.
    pub fn held(&self) -> usize {
        self.queue.len() + self.busy
    }

    pub fn is_idle(&self) -> bool {
        self.held() == 0
    }

    /// Accepts a frame. Returns it back when a slot is free and analysis
    /// should start immediately.
    pub fn enqueue(&mut self, frame: FrameDescriptor) -> Option<FrameDescriptor> {
        if self.busy < self.slots && self.queue.is_empty() {
            self.busy += 1;
            Some(frame)
        } else {
            self.queue.push_back(frame);
            None
        }
    }

    pub fn complete(&mut self) -> Completion {
        debug_assert!(self.busy > 0, "completion without a busy slot");
        self.busy = self.busy.saturating_sub(1);
        let next = if self.busy < self.slots {
            self.queue.pop_front()
        } else {
            None
        };
        if next.is_some() {
            self.busy += 1;
        }
        Completion {
            queue_len_after: self.queue.len() as u32,
            next,
        }
    }

    /// Drops all held frames (device left). Returns how many were held.
    pub fn clear(&mut self) -> usize {
        let n = self.held();
        self.queue.clear();
        self.busy = 0;
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(id: u64) -> FrameDescriptor {
        FrameDescriptor::synthetic(id, VideoSource::Outer, 0, 10)
    }

    #[test]
    fn free_slot_starts_immediately() {
        let mut w = WorkerCore::new(2);
        assert!(w.enqueue(frame(1)).is_some());
        let c = w.complete();
        assert_eq!(c.queue_len_after, 0);
        assert!(c.next.is_none());
    }

    #[test]
    fn third_frame_waits_for_first_completion() {
        let mut w = WorkerCore::new(2);
        assert!(w.enqueue(frame(1)).is_some());
        assert!(w.enqueue(frame(2)).is_some());
        assert!(w.enqueue(frame(3)).is_none());
        assert_eq!(w.queue_len(), 1);
        let c = w.complete();
        assert_eq!(c.next.unwrap().frame_id, 3);
        assert_eq!(c.queue_len_after, 0);
        assert_eq!(w.busy(), 2);
    }

    #[test]
    fn strong_outer_mean() {
        let p = AnalysisProfile::strong();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20_000;
        let mean: f64 = (0..n)
            .map(|_| stub_analyzer_sample(&p, VideoSource::Outer, 0.0, &mut rng))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.0827).abs() < 0.0827 * 0.02, "mean {mean}");
    }

    #[test]
    fn weak_outer_lognormal_fit() {
        let d = LatencyDist::lognormal(0.110, 0.35);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f64> = (0..10_000).map(|_| d.sample_with_mean(0.110, &mut rng)).collect();
        assert!(samples.iter().all(|&x| x > 0.0));
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        assert!((mean - 0.110).abs() < 0.110 * 0.03, "mean {mean}");
    }

    #[test]
    fn linear_drift_reaches_peak() {
        let p = AnalysisProfile {
            drift: Drift::Linear {
                peak: 1.3,
                ramp: 1800.0,
            },
            ..AnalysisProfile::weak()
        };
        assert!((p.mean_at(VideoSource::Outer, 1800.0) - 0.143).abs() < 1e-12);
        assert!((p.mean_at(VideoSource::Outer, 900.0) - 0.1265).abs() < 1e-12);
        assert_eq!(p.mean_at(VideoSource::Outer, 0.0), 0.110);
    }

    #[test]
    fn deterministic_profile_is_constant() {
        let d = LatencyDist::constant(0.110);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(d.sample_with_mean(0.110, &mut rng), 0.110);
        }
    }

    #[test]
    fn interaction_window_slows_analysis() {
        let p = AnalysisProfile {
            interactions: vec![InteractionWindow {
                start: 10.0,
                end: 20.0,
                factor: 2.0,
            }],
            ..AnalysisProfile::strong()
        };
        assert_eq!(p.mean_at(VideoSource::Inner, 15.0), 0.063);
        assert_eq!(p.mean_at(VideoSource::Inner, 20.0), 0.0315);
    }

    #[test]
    fn stub_is_deterministic_under_seed() {
        let run = || {
            let mut a = StubAnalyzer::new(AnalysisProfile::strong(), 11, 0.5, false);
            (0..50)
                .map(|i| {
                    let r = a.analyze(&frame(i)).unwrap();
                    (r.analysis_time, r.detections.len())
                })
                .collect::<Vec<_>>()
        };
        // drift is zero, so wall-clock time does not enter the draw
        assert_eq!(run(), run());
    }

    #[cfg(unix)]
    #[test]
    fn external_command_labels_become_detections() {
        let mut a = ExternalCommandAnalyzer::new("sh", vec!["-c".into(), "cat >/dev/null; echo hazard".into()]);
        let r = a.analyze(&frame(1)).unwrap();
        assert_eq!(r.detections, vec![Detection::new("hazard")]);
        assert!(r.analysis_time > 0.0);
    }
}
