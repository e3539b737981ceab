//! Deterministic discrete-event simulator.
//!
//! One event heap ordered by (time, insertion sequence), one RNG stream per
//! camera and per device, and per-link serialization of transfers. The
//! coordinator logic is the same [`Coordinator`] used in live mode; only the
//! workers, cameras and network are simulated.

pub mod config;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use thiserror::Error;

pub use config::{
    Arrival, CameraConfig, ConnectivityChange, DeviceConfig, DeviceProfile, LinkEvent,
    NetworkConfig, NetworkModel, ScenarioConfig, ScenarioError, SchedulerMode, PRIMARY_OVERHEAD,
};

use crate::coordinator::{ConnectivityEvent, Coordinator, CoordinatorError};
use crate::metrics::{MetricsReport, ReportMeta};
use crate::model::{AnalysisResult, FrameDescriptor, FrameKey, WorkerId};
use crate::wire::dashcam::keep_frame;
use crate::wire::to_millifps;
use crate::worker::{stub_analyzer_sample, stub_detections, WorkerCore};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ScenarioError),
    #[error("coordinator: {0}")]
    Coordinator(#[from] CoordinatorError),
}

/// What a simulation event does when it fires.
#[derive(Debug, Clone)]
pub enum EventKind {
    FrameCapture {
        camera: usize,
    },
    /// A frame reached the coordinator.
    CameraTransferDone {
        camera: usize,
        frame: FrameDescriptor,
        origin: f64,
    },
    /// The dispatcher is free to look at the queue again.
    TryDispatch,
    /// A frame reached a worker.
    DispatchTransferDone {
        worker: usize,
        incarnation: u32,
        frame: FrameDescriptor,
    },
    AnalysisDone {
        worker: usize,
        incarnation: u32,
        frame: FrameDescriptor,
        analysis_time: f64,
    },
    /// A result reached the coordinator.
    ResultTransferDone {
        worker: usize,
        incarnation: u32,
        result: AnalysisResult,
    },
    ControlTick,
    Connectivity {
        worker: usize,
        event: LinkEvent,
    },
    /// Start or end of a user-interaction slowdown window (informational:
    /// the slowdown itself is part of the device's analysis profile).
    Interaction {
        worker: usize,
        start: bool,
        factor: f64,
    },
    /// Work-stealing baseline: an idle worker's request reached the
    /// coordinator.
    StealRequest {
        worker: usize,
        incarnation: u32,
    },
}

#[derive(Debug, Clone)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap and we pop the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Default)]
struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    fn push(&mut self, time: f64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time, seq, kind });
    }

    fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }
}

/// A one-at-a-time point-to-point link. Returns when a transfer submitted at
/// `now` starts and finishes.
#[derive(Debug, Clone, Copy, Default)]
struct Link {
    busy_until: f64,
}

impl Link {
    fn send(&mut self, now: f64, duration: f64) -> (f64, f64) {
        let start = now.max(self.busy_until);
        let done = start + duration;
        self.busy_until = done;
        (start, done)
    }
}

struct CameraState {
    cfg: CameraConfig,
    rng: ChaCha8Rng,
    link: Link,
    metric_index: usize,
    captures: u64,
    next_frame_id: u64,
    on_link: u64,
}

struct DeviceState {
    profile: DeviceProfile,
    rng: ChaCha8Rng,
    core: WorkerCore,
    connected: bool,
    incarnation: u32,
    /// Coordinator → worker and worker → coordinator links. Unused for the
    /// primary, whose worker shares the coordinator's host.
    down: Link,
    up: Link,
    arrived_at: BTreeMap<FrameKey, f64>,
    hungry: bool,
}

impl DeviceState {
    fn is_local(&self, id: usize) -> bool {
        id == 0
    }
}

const STEAL_REQUEST_BYTES: u64 = 16;

/// Frame transfer rate a camera should use right now.
fn camera_rate(cfg: &ScenarioConfig, cam: &CameraConfig, coord: &Coordinator) -> f64 {
    if cfg.rate_control && cfg.scheduler == SchedulerMode::Deva {
        coord.current_rate()
    } else {
        cam.fixed_rate.unwrap_or(cfg.params.native_frame_rate)
    }
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    net: NetworkModel,
    coord: Coordinator,
    cameras: Vec<CameraState>,
    devices: Vec<DeviceState>,
    events: EventQueue,
    dispatcher_busy_until: f64,
    dispatch_pending: bool,
    hungry: VecDeque<usize>,
    now: f64,
    halted: Option<f64>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ScenarioConfig, seed: u64) -> Self {
        let params = cfg.effective_params();
        let mut coord = Coordinator::new(params, 0.0);
        let cameras = cfg
            .cameras
            .iter()
            .enumerate()
            .map(|(i, c)| CameraState {
                cfg: c.clone(),
                rng: stream_rng(seed, 1_000 + i as u64),
                link: Link::default(),
                metric_index: coord.metrics_mut().register_camera(c.source),
                captures: 0,
                next_frame_id: 1,
                on_link: 0,
            })
            .collect();
        let devices = cfg
            .device_profiles()
            .into_iter()
            .enumerate()
            .map(|(i, p)| DeviceState {
                core: WorkerCore::new(p.parallelism as usize),
                rng: stream_rng(seed, 1 + i as u64),
                profile: p,
                connected: i == 0,
                incarnation: 0,
                down: Link::default(),
                up: Link::default(),
                arrived_at: BTreeMap::new(),
                hungry: false,
            })
            .collect();
        Sim {
            cfg,
            net: cfg.network(),
            coord,
            cameras,
            devices,
            events: EventQueue::default(),
            dispatcher_busy_until: 0.0,
            dispatch_pending: false,
            hungry: VecDeque::new(),
            now: 0.0,
            halted: None,
        }
    }

    fn work_stealing(&self) -> bool {
        self.cfg.scheduler == SchedulerMode::WorkStealing
    }

    fn schedule_initial(&mut self) -> Result<(), SimError> {
        self.coord.metrics_mut().queue_start(WorkerId::PRIMARY, 0.0);
        for id in 1..self.devices.len() {
            if self.devices[id].profile.connectivity.first().is_none_or(|c| c.event == LinkEvent::Leave) {
                self.join(id)?;
            }
        }
        for id in 0..self.devices.len() {
            let changes = self.devices[id].profile.connectivity.clone();
            for c in changes {
                self.events.push(c.at, EventKind::Connectivity { worker: id, event: c.event });
            }
            let windows = self.devices[id].profile.analysis.interactions.clone();
            for w in windows {
                self.events.push(w.start, EventKind::Interaction { worker: id, start: true, factor: w.factor });
                self.events.push(w.end, EventKind::Interaction { worker: id, start: false, factor: w.factor });
            }
        }
        let n = self.cameras.len() as f64;
        for c in 0..self.cameras.len() {
            let first = match self.cameras[c].cfg.arrival {
                // stagger cameras within one capture period
                Arrival::Periodic => c as f64 / (n * self.cfg.params.native_frame_rate),
                Arrival::Poisson => self.poisson_gap(c),
            };
            self.events.push(first, EventKind::FrameCapture { camera: c });
        }
        self.events.push(0.0, EventKind::ControlTick);
        if self.work_stealing() {
            self.request_steal(0);
        }
        Ok(())
    }

    fn poisson_gap(&mut self, camera: usize) -> f64 {
        let rate = camera_rate(self.cfg, &self.cameras[camera].cfg, &self.coord);
        if rate <= 0.0 {
            // idle until the next control decision
            return self.cfg.params.control_period;
        }
        Exp::new(rate).expect("positive rate").sample(&mut self.cameras[camera].rng)
    }

    fn run(&mut self) -> Result<f64, SimError> {
        let duration = self.cfg.duration;
        while let Some(ev) = self.events.pop() {
            if ev.time >= duration {
                break;
            }
            debug_assert!(ev.time >= self.now, "time went backwards");
            self.now = ev.time;
            self.handle(ev.kind)?;
            if let Some(at) = self.halted {
                return Ok(at);
            }
        }
        Ok(duration)
    }

    fn handle(&mut self, kind: EventKind) -> Result<(), SimError> {
        let now = self.now;
        match kind {
            EventKind::FrameCapture { camera } => self.on_capture(camera),
            EventKind::CameraTransferDone { camera, frame, origin } => {
                self.cameras[camera].on_link -= 1;
                if self.coord.ingest_frame(frame, origin, now).is_err() {
                    info!("buffer overflow at t={now:.3}s, halting");
                    self.halted = Some(now);
                    return Ok(());
                }
                if self.work_stealing() {
                    self.serve_hungry();
                } else {
                    self.kick_dispatcher();
                }
            }
            EventKind::TryDispatch => {
                self.dispatch_pending = false;
                self.dispatch_loop()?;
            }
            EventKind::DispatchTransferDone { worker, incarnation, frame } => {
                if self.devices[worker].incarnation != incarnation {
                    return Ok(());
                }
                let d = &mut self.devices[worker];
                d.arrived_at.insert(FrameKey::from(&frame), now);
                if let Some(start) = d.core.enqueue(frame) {
                    self.start_analysis(worker, start);
                }
                let len = self.devices[worker].core.queue_len() as u32;
                self.coord.metrics_mut().queue_changed(WorkerId(worker as u32), now, len);
            }
            EventKind::AnalysisDone { worker, incarnation, frame, analysis_time } => {
                if self.devices[worker].incarnation != incarnation {
                    return Ok(());
                }
                self.on_analysis_done(worker, frame, analysis_time);
            }
            EventKind::ResultTransferDone { worker, incarnation, result } => {
                if self.devices[worker].incarnation != incarnation {
                    return Ok(());
                }
                self.coord.collect_result(&result, now);
            }
            EventKind::ControlTick => {
                if self.cfg.rate_control && !self.work_stealing() {
                    self.coord.control_tick(now)?;
                }
                for (id, d) in self.devices.iter().enumerate() {
                    if d.connected {
                        let len = d.core.queue_len() as u32;
                        self.coord.metrics_mut().queue_sample(WorkerId(id as u32), now, len);
                    }
                }
                self.events.push(now + self.cfg.params.control_period, EventKind::ControlTick);
            }
            EventKind::Connectivity { worker, event } => match event {
                LinkEvent::Join => self.join(worker)?,
                LinkEvent::Leave => self.leave(worker)?,
            },
            EventKind::Interaction { worker, start, factor } => {
                debug!(
                    "t={now:.3} interaction {} on worker {worker} (x{factor})",
                    if start { "starts" } else { "ends" }
                );
            }
            EventKind::StealRequest { worker, incarnation } => {
                if self.devices[worker].incarnation == incarnation && self.devices[worker].connected {
                    self.devices[worker].hungry = true;
                    self.hungry.push_back(worker);
                    self.serve_hungry();
                }
            }
        }
        Ok(())
    }

    fn on_capture(&mut self, camera: usize) {
        let now = self.now;
        let rate = camera_rate(self.cfg, &self.cameras[camera].cfg, &self.coord);
        let native = self.cfg.params.native_frame_rate;
        let cam = &mut self.cameras[camera];
        cam.captures += 1;
        self.coord.metrics_mut().counters.captured += 1;
        let admit = match cam.cfg.arrival {
            Arrival::Periodic => keep_frame(cam.captures, to_millifps(rate), to_millifps(native)),
            Arrival::Poisson => rate > 0.0,
        };
        if admit {
            let mean = cam.cfg.mean_frame_size() as f64;
            let size = if cam.cfg.frame_size_cv > 0.0 {
                Normal::new(mean, mean * cam.cfg.frame_size_cv)
                    .expect("finite parameters")
                    .sample(&mut cam.rng)
                    .max(1.0)
                    .round() as u32
            } else {
                mean.round() as u32
            };
            let frame_id = cam.next_frame_id;
            cam.next_frame_id += 1;
            let frame = FrameDescriptor::synthetic(frame_id, cam.cfg.source, (now * 1e6).round() as u64, size);
            let (_, done) = cam.link.send(now, self.net.transfer_time(size as u64));
            cam.on_link += 1;
            let idx = cam.metric_index;
            self.coord.metrics_mut().record_admitted(idx, now);
            self.events.push(done, EventKind::CameraTransferDone { camera, frame, origin: now });
        }
        let next = match self.cameras[camera].cfg.arrival {
            Arrival::Periodic => now + 1.0 / native,
            Arrival::Poisson => now + self.poisson_gap(camera),
        };
        self.events.push(next, EventKind::FrameCapture { camera });
    }

    fn kick_dispatcher(&mut self) {
        if self.dispatch_pending {
            return;
        }
        self.dispatch_pending = true;
        let at = self.now.max(self.dispatcher_busy_until);
        self.events.push(at, EventKind::TryDispatch);
    }

    /// Sequence dispatch. The dispatcher hands a frame to its worker's link
    /// and moves on once the link accepts it (head-of-line blocking on a
    /// busy link).
    fn dispatch_loop(&mut self) -> Result<(), SimError> {
        let now = self.now;
        while now >= self.dispatcher_busy_until {
            let d = match self.coord.dispatch_next(now) {
                Ok(Some(d)) => d,
                Ok(None) => break,
                Err(CoordinatorError::NoWorkers) => break,
                Err(e) => return Err(e.into()),
            };
            let start = self.send_to_worker(d.worker.0 as usize, d.frame);
            if start > now {
                self.dispatcher_busy_until = start;
                self.kick_dispatcher();
                break;
            }
        }
        Ok(())
    }

    /// Puts a frame on the coordinator → worker link; returns when the
    /// transfer starts.
    fn send_to_worker(&mut self, worker: usize, frame: FrameDescriptor) -> f64 {
        let now = self.now;
        let d = &mut self.devices[worker];
        let (start, done) = if d.is_local(worker) {
            (now, now)
        } else {
            d.down.send(now, self.net.transfer_time(frame.payload_size as u64))
        };
        let incarnation = d.incarnation;
        self.events.push(done, EventKind::DispatchTransferDone { worker, incarnation, frame });
        start
    }

    fn start_analysis(&mut self, worker: usize, frame: FrameDescriptor) {
        let now = self.now;
        let d = &mut self.devices[worker];
        let analysis_time = stub_analyzer_sample(&d.profile.analysis, frame.source, now, &mut d.rng);
        let incarnation = d.incarnation;
        self.events.push(
            now + analysis_time,
            EventKind::AnalysisDone { worker, incarnation, frame, analysis_time },
        );
    }

    fn on_analysis_done(&mut self, worker: usize, frame: FrameDescriptor, analysis_time: f64) {
        let now = self.now;
        let wid = WorkerId(worker as u32);
        let alarm_p = self
            .cameras
            .iter()
            .find(|c| c.cfg.source == frame.source)
            .map_or(0.0, |c| c.cfg.alarm_probability);
        let d = &mut self.devices[worker];
        let completion = d.core.complete();
        let key = FrameKey::from(&frame);
        if let Some(arrived) = d.arrived_at.remove(&key) {
            self.coord.metrics_mut().record_worker_residence(frame.source, now - arrived);
        }
        let detections = stub_detections(frame.source, alarm_p, &mut self.devices[worker].rng);
        let result = AnalysisResult {
            frame_id: frame.frame_id,
            source: frame.source,
            worker_id: wid,
            alarm: !detections.is_empty(),
            detections,
            analysis_time,
            queue_len_after: completion.queue_len_after,
            error: false,
        };
        if let Some(next) = completion.next {
            self.start_analysis(worker, next);
        }
        let d = &mut self.devices[worker];
        let done = if d.is_local(worker) {
            now
        } else {
            d.up.send(now, self.net.transfer_time(self.cfg.result_size as u64)).1
        };
        let incarnation = d.incarnation;
        let idle = d.core.is_idle();
        let len = d.core.queue_len() as u32;
        self.coord.metrics_mut().queue_changed(wid, now, len);
        self.events.push(done, EventKind::ResultTransferDone { worker, incarnation, result });
        if self.work_stealing() && idle {
            self.request_steal(worker);
        }
    }

    fn request_steal(&mut self, worker: usize) {
        let d = &self.devices[worker];
        let delay = if d.is_local(worker) {
            0.0
        } else {
            self.net.transfer_time(STEAL_REQUEST_BYTES)
        };
        let incarnation = d.incarnation;
        self.events.push(self.now + delay, EventKind::StealRequest { worker, incarnation });
    }

    /// Work-stealing baseline: hungry workers take up to `steal_batch`
    /// frames each, in request order.
    fn serve_hungry(&mut self) {
        while !self.coord.queue().is_empty() {
            let Some(worker) = self.hungry.pop_front() else {
                break;
            };
            if !self.devices[worker].hungry {
                continue;
            }
            self.devices[worker].hungry = false;
            let frames = self.coord.steal(WorkerId(worker as u32), self.cfg.steal_batch, self.now);
            for f in frames {
                self.send_to_worker(worker, f);
            }
        }
    }

    fn join(&mut self, worker: usize) -> Result<(), SimError> {
        let now = self.now;
        let wid = WorkerId(worker as u32);
        self.coord.connectivity_event(ConnectivityEvent::Join, wid, now)?;
        let d = &mut self.devices[worker];
        d.connected = true;
        d.incarnation += 1;
        d.down = Link { busy_until: now };
        d.up = Link { busy_until: now };
        self.coord.metrics_mut().queue_start(wid, now);
        if self.work_stealing() {
            self.request_steal(worker);
        } else {
            self.kick_dispatcher();
        }
        Ok(())
    }

    fn leave(&mut self, worker: usize) -> Result<(), SimError> {
        let now = self.now;
        let wid = WorkerId(worker as u32);
        let lost = self.coord.connectivity_event(ConnectivityEvent::Leave, wid, now)?;
        if !lost.is_empty() {
            info!("t={now:.3} worker {worker} left with {} frames in flight", lost.len());
        }
        let d = &mut self.devices[worker];
        d.connected = false;
        d.incarnation += 1;
        d.hungry = false;
        d.core.clear();
        d.arrived_at.clear();
        self.coord.metrics_mut().queue_stop(wid, now);
        Ok(())
    }

    fn finish(self, seed: u64, end: f64) -> MetricsReport {
        let on_links: u64 = self.cameras.iter().map(|c| c.on_link).sum();
        let meta = ReportMeta {
            scenario: self.cfg.name.clone(),
            seed,
            scheduler: self.cfg.scheduler.name().to_string(),
            rate_control: self.cfg.rate_control && self.cfg.scheduler == SchedulerMode::Deva,
        };
        self.coord.finish(meta, end, on_links)
    }
}

/// Runs a scenario to completion (or to a buffer-overflow halt, in which case
/// the report ends at the fault and carries the fault record).
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<MetricsReport, SimError> {
    run_scenario_seeded(cfg, cfg.seed)
}

pub fn run_scenario_seeded(cfg: &ScenarioConfig, seed: u64) -> Result<MetricsReport, SimError> {
    cfg.validate()?;
    let mut sim = Sim::new(cfg, seed);
    if cfg.duration <= 0.0 {
        return Ok(sim.finish(seed, 0.0));
    }
    sim.schedule_initial()?;
    let end = sim.run()?;
    Ok(sim.finish(seed, end))
}

/// Draws a uniform value in [0, 1) from a scenario-seeded stream. Handy for
/// building randomized connectivity schedules reproducibly.
pub fn scenario_uniform(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VideoSource;
    use crate::worker::{DeviceClass, LatencyDist};

    fn scenario(devices: usize, duration: f64) -> ScenarioConfig {
        ScenarioConfig {
            name: "unit".into(),
            duration,
            scheduler: SchedulerMode::Deva,
            rate_control: true,
            seed: 7,
            params: Default::default(),
            network: Default::default(),
            result_size: 1024,
            steal_batch: 2,
            cameras: vec![CameraConfig::new(VideoSource::Inner), CameraConfig::new(VideoSource::Outer)],
            devices: (0..devices)
                .map(|i| DeviceConfig::new(format!("d{i}"), DeviceClass::Strong))
                .collect(),
        }
    }

    #[test]
    fn zero_duration_gives_an_empty_report() {
        let r = run_scenario(&scenario(1, 0.0)).unwrap();
        assert!(r.fault.is_none());
        assert_eq!(r.counters.transferred, 0);
        assert_eq!(r.counters.resolved, 0);
    }

    #[test]
    fn events_pop_in_time_then_insertion_order() {
        let mut q = EventQueue::default();
        q.push(2.0, EventKind::TryDispatch);
        q.push(1.0, EventKind::ControlTick);
        q.push(1.0, EventKind::TryDispatch);
        let order: Vec<(f64, u64)> = std::iter::from_fn(|| q.pop()).map(|e| (e.time, e.seq)).collect();
        assert_eq!(order, vec![(1.0, 1), (1.0, 2), (2.0, 0)]);
    }

    #[test]
    fn link_serializes_transfers() {
        let mut l = Link::default();
        assert_eq!(l.send(0.0, 1.0), (0.0, 1.0));
        assert_eq!(l.send(0.5, 1.0), (1.0, 2.0));
        assert_eq!(l.send(3.0, 1.0), (3.0, 4.0));
    }

    #[test]
    fn short_run_conserves_frames() {
        let r = run_scenario(&scenario(2, 20.0)).unwrap();
        let c = &r.counters;
        assert!(c.transferred > 0);
        assert_eq!(
            c.transferred,
            c.resolved + c.in_flight_at_end + c.lost_on_leave + c.dropped_by_overflow
        );
    }

    #[test]
    fn fixed_rate_without_control_is_decimated() {
        let mut cfg = scenario(2, 10.0);
        cfg.rate_control = false;
        for c in &mut cfg.cameras {
            c.fixed_rate = Some(10.0);
        }
        let r = run_scenario(&cfg).unwrap();
        for t in &r.throughput {
            assert!((t.mean_fps - 10.0).abs() <= 0.2, "{}", t.mean_fps);
        }
    }

    #[test]
    fn deterministic_service_has_exact_latency() {
        let mut cfg = scenario(1, 5.0);
        cfg.rate_control = false;
        cfg.cameras.truncate(1);
        cfg.cameras[0].fixed_rate = Some(1.0);
        cfg.devices[0].inner = Some(LatencyDist::constant(0.05));
        cfg.devices[0].overhead = Some(0.0);
        let r = run_scenario(&cfg).unwrap();
        let transfer = INNER_SIZE as f64 * 8.0 / 1e8;
        let s = r.source(VideoSource::Inner);
        assert!(s.samples >= 4);
        assert!((s.max_latency.unwrap() - (transfer + 0.05)).abs() < 1e-9);
    }

    const INNER_SIZE: u32 = crate::model::INNER_FRAME_BYTES;
}
