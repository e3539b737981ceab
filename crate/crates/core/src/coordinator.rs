//! Coordinator control loop shared by the simulator and live mode: bounded
//! frame queue, sequence-based dispatch, result collection into the
//! performance log, alarms, connectivity handling and periodic rate control.

use std::collections::{BTreeMap, VecDeque};
use std::io;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    AlarmRecord, ConnectivityKind, ConnectivityRecord, DispatchRecord, FaultKind, FaultRecord,
    LatencySample, MetricsCollector, MetricsReport, ReportMeta,
};
use crate::model::{
    AnalysisResult, Detection, FrameDescriptor, FrameKey, PerfLog, PerfRecord, SystemParams, VideoSource,
    WorkerId,
};
use crate::ratectl::{RateController, RateDecision, RateError};
use crate::scheduler::{LogWeights, SchedulerError, SequenceManager};

#[derive(Debug, Error)]
pub enum CoordinatorError {
    #[error("frame buffer overflow at {len} frames")]
    Overflow { len: usize },
    #[error("no workers connected")]
    NoWorkers,
    #[error("worker {0} is already connected")]
    AlreadyConnected(WorkerId),
    #[error("the primary worker never leaves")]
    PrimaryLeave,
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("transport: {0}")]
    Transport(#[from] io::Error),
}

/// A frame waiting for dispatch, with the instant its latency clock started.
#[derive(Debug, Clone, PartialEq)]
pub struct QueuedFrame {
    pub frame: FrameDescriptor,
    /// Coordinator-clock seconds at which the dashcam began transferring it.
    pub origin: f64,
}

/// Bounded FIFO shared by both cameras.
#[derive(Debug, Clone)]
pub struct FrameQueue {
    capacity: usize,
    frames: VecDeque<QueuedFrame>,
}

impl FrameQueue {
    pub fn new(capacity: usize) -> Self {
        FrameQueue {
            capacity,
            frames: VecDeque::new(),
        }
    }

    pub fn push(&mut self, f: QueuedFrame) -> Result<(), CoordinatorError> {
        if self.frames.len() >= self.capacity {
            return Err(CoordinatorError::Overflow {
                len: self.frames.len(),
            });
        }
        self.frames.push_back(f);
        Ok(())
    }

    pub fn pop(&mut self) -> Option<QueuedFrame> {
        self.frames.pop_front()
    }

    pub fn head(&self) -> Option<&QueuedFrame> {
        self.frames.front()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Connected workers and when they joined. Worker 0 is always present.
#[derive(Debug, Clone)]
pub struct ConnectivityState {
    joined: BTreeMap<WorkerId, f64>,
}

impl ConnectivityState {
    pub fn new(now: f64) -> Self {
        ConnectivityState {
            joined: BTreeMap::from([(WorkerId::PRIMARY, now)]),
        }
    }

    pub fn workers(&self) -> Vec<WorkerId> {
        self.joined.keys().copied().collect()
    }

    pub fn contains(&self, w: WorkerId) -> bool {
        self.joined.contains_key(&w)
    }

    pub fn joined_at(&self, w: WorkerId) -> Option<f64> {
        self.joined.get(&w).copied()
    }

    pub fn len(&self) -> usize {
        self.joined.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joined.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlarmKind {
    Hazard,
    Distraction,
}

impl AlarmKind {
    pub fn label(self) -> &'static str {
        match self {
            AlarmKind::Hazard => "hazard",
            AlarmKind::Distraction => "distraction",
        }
    }

    /// Kind of alarm a positive detection on this camera raises.
    pub fn for_source(source: VideoSource) -> Self {
        match source {
            VideoSource::Outer => AlarmKind::Hazard,
            VideoSource::Inner => AlarmKind::Distraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlarmEvent {
    pub frame_id: u64,
    pub source: VideoSource,
    pub kind: AlarmKind,
    pub emitted_at: f64,
}

/// Alarm predicate: a detection labeled `hazard` or `distraction`.
pub fn alarm_kind(result: &AnalysisResult) -> Option<AlarmKind> {
    alarm_kind_of(&result.detections)
}

pub fn alarm_kind_of(detections: &[Detection]) -> Option<AlarmKind> {
    detections.iter().find_map(|d| match d.label.as_str() {
        "hazard" => Some(AlarmKind::Hazard),
        "distraction" => Some(AlarmKind::Distraction),
        _ => None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectivityEvent {
    Join,
    Leave,
}

/// A frame handed to a worker.
#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    pub worker: WorkerId,
    pub frame: FrameDescriptor,
    /// Sequence epoch the slot came from; 0 outside sequence scheduling.
    pub epoch: u64,
}

/// Outbound path to workers used by [`Coordinator::dispatch_step`].
pub trait Transport {
    fn send_frame(&mut self, worker: WorkerId, frame: &FrameDescriptor) -> io::Result<()>;
}

#[derive(Debug, Clone, Copy)]
struct InFlight {
    worker: WorkerId,
    origin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CollectOutcome {
    pub alarm: Option<AlarmEvent>,
    /// Result did not match a dispatched frame and was ignored.
    pub stale: bool,
    pub latency: Option<f64>,
    pub deadline_missed: bool,
}

pub struct Coordinator {
    params: SystemParams,
    queue: FrameQueue,
    log: PerfLog,
    sequences: SequenceManager,
    connectivity: ConnectivityState,
    ratectl: RateController,
    in_flight: BTreeMap<FrameKey, InFlight>,
    metrics: MetricsCollector,
    current_rate: f64,
}

impl Coordinator {
    /// Starts with only the primary worker connected.
    pub fn new(params: SystemParams, now: f64) -> Self {
        let log = PerfLog::new(params.log_window);
        let mut sequences = SequenceManager::new(params.sequence_length);
        let connectivity = ConnectivityState::new(now);
        let mut ratectl = RateController::new(params.clone());
        ratectl.join(&log, WorkerId::PRIMARY);
        sequences
            .on_connectivity_change(
                &connectivity.workers(),
                &LogWeights {
                    log: &log,
                    default_analysis_time: params.default_analysis_time,
                },
            )
            .expect("default analysis time is validated positive");
        let mut metrics = MetricsCollector::new();
        metrics.record_connectivity(ConnectivityRecord {
            t: now,
            worker: WorkerId::PRIMARY,
            kind: ConnectivityKind::Join,
        });
        Coordinator {
            queue: FrameQueue::new(params.buffer_capacity),
            current_rate: params.native_frame_rate,
            params,
            log,
            sequences,
            connectivity,
            ratectl,
            in_flight: BTreeMap::new(),
            metrics,
        }
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn queue(&self) -> &FrameQueue {
        &self.queue
    }

    pub fn log(&self) -> &PerfLog {
        &self.log
    }

    pub fn sequences(&self) -> &SequenceManager {
        &self.sequences
    }

    pub fn connectivity(&self) -> &ConnectivityState {
        &self.connectivity
    }

    pub fn rate_controller(&self) -> &RateController {
        &self.ratectl
    }

    pub fn metrics(&self) -> &MetricsCollector {
        &self.metrics
    }

    pub fn metrics_mut(&mut self) -> &mut MetricsCollector {
        &mut self.metrics
    }

    pub fn current_rate(&self) -> f64 {
        self.current_rate
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn is_in_flight(&self, key: FrameKey) -> bool {
        self.in_flight.contains_key(&key)
    }

    /// Enqueues an arriving frame. A full queue is a fatal fault: it is
    /// recorded in the metrics and returned to the caller, which must halt.
    pub fn ingest_frame(
        &mut self,
        frame: FrameDescriptor,
        origin: f64,
        now: f64,
    ) -> Result<(), CoordinatorError> {
        match self.queue.push(QueuedFrame { frame, origin }) {
            Ok(()) => Ok(()),
            Err(e) => {
                self.metrics.counters.dropped_by_overflow += 1;
                self.metrics.record_fault(FaultRecord {
                    kind: FaultKind::BufferOverflow,
                    at: now,
                    queue_len: self.queue.len(),
                });
                Err(e)
            }
        }
    }

    /// Takes the head frame and picks its worker from that source's
    /// sequence. With no workers the frame stays queued.
    pub fn dispatch_next(&mut self, now: f64) -> Result<Option<Dispatch>, CoordinatorError> {
        let Some(head) = self.queue.head() else {
            return Ok(None);
        };
        if self.sequences.is_stalled() {
            return Err(CoordinatorError::NoWorkers);
        }
        let source = head.frame.source;
        self.log.prune(now);
        let provider = LogWeights {
            log: &self.log,
            default_analysis_time: self.params.default_analysis_time,
        };
        let assignment = self.sequences.next_worker(source, &provider)?;
        let QueuedFrame { frame, origin } = self.queue.pop().expect("head exists");
        if assignment.regenerated {
            debug!("{source} sequence epoch {} generated", assignment.epoch);
        }
        self.in_flight.insert(
            FrameKey::from(&frame),
            InFlight {
                worker: assignment.worker,
                origin,
            },
        );
        self.metrics.record_dispatch(DispatchRecord {
            source,
            epoch: assignment.epoch,
            worker: assignment.worker,
            at: now,
        });
        Ok(Some(Dispatch {
            worker: assignment.worker,
            frame,
            epoch: assignment.epoch,
        }))
    }

    /// One iteration of the dispatch loop: pick a worker for the head frame
    /// and push it through `transport`. Returns false when the queue is empty.
    pub fn dispatch_step<T: Transport + ?Sized>(
        &mut self,
        transport: &mut T,
        now: f64,
    ) -> Result<bool, CoordinatorError> {
        match self.dispatch_next(now)? {
            None => Ok(false),
            Some(d) => {
                transport.send_frame(d.worker, &d.frame)?;
                Ok(true)
            }
        }
    }

    /// Work-stealing baseline: hands up to `max` queued frames to `worker`.
    pub fn steal(&mut self, worker: WorkerId, max: usize, now: f64) -> Vec<FrameDescriptor> {
        let mut out = Vec::new();
        while out.len() < max {
            let Some(QueuedFrame { frame, origin }) = self.queue.pop() else {
                break;
            };
            self.in_flight
                .insert(FrameKey::from(&frame), InFlight { worker, origin });
            self.metrics.record_dispatch(DispatchRecord {
                source: frame.source,
                epoch: 0,
                worker,
                at: now,
            });
            out.push(frame);
        }
        out
    }

    /// Consumes a worker result: appends its performance record, records the
    /// latency sample and evaluates the alarm predicate.
    pub fn collect_result(&mut self, result: &AnalysisResult, now: f64) -> CollectOutcome {
        let key = result.key();
        let entry = match self.in_flight.get(&key) {
            Some(e) if e.worker == result.worker_id => *e,
            _ => {
                self.metrics.counters.stale_results += 1;
                return CollectOutcome {
                    stale: true,
                    ..CollectOutcome::default()
                };
            }
        };
        self.in_flight.remove(&key);
        if result.error {
            self.metrics.counters.analyzer_errors += 1;
        }
        let record = PerfRecord {
            worker_id: result.worker_id,
            source: result.source,
            analysis_time: result.analysis_time,
            queue_len: result.queue_len_after,
            recorded_at: now,
        };
        if let Err(e) = self.log.append(record) {
            warn!("dropping perf record: {e}");
        }
        let latency = now - entry.origin;
        let deadline_missed = latency > self.params.latency_deadline;
        self.metrics.record_latency(
            LatencySample {
                frame_id: result.frame_id,
                source: result.source,
                e2e_latency: latency,
                completed_at: now,
            },
            self.params.latency_deadline,
        );
        self.metrics.record_completion(result.worker_id);
        let alarm = alarm_kind(result).map(|kind| AlarmEvent {
            frame_id: result.frame_id,
            source: result.source,
            kind,
            emitted_at: now,
        });
        if let Some(a) = &alarm {
            self.metrics.record_alarm(AlarmRecord {
                t: now,
                frame_id: a.frame_id,
                source: a.source,
            });
        }
        CollectOutcome {
            alarm,
            stale: false,
            latency: Some(latency),
            deadline_missed,
        }
    }

    /// Applies a join or leave: updates membership, the rate controller's
    /// estimates and rebuilds both sequences. Returns the frames lost with a
    /// departing worker.
    pub fn connectivity_event(
        &mut self,
        event: ConnectivityEvent,
        worker: WorkerId,
        now: f64,
    ) -> Result<Vec<FrameKey>, CoordinatorError> {
        let mut lost = Vec::new();
        match event {
            ConnectivityEvent::Join => {
                if self.connectivity.contains(worker) {
                    return Err(CoordinatorError::AlreadyConnected(worker));
                }
                self.connectivity.joined.insert(worker, now);
                self.log.prune(now);
                self.ratectl.join(&self.log, worker);
            }
            ConnectivityEvent::Leave => {
                if worker.is_primary() {
                    return Err(CoordinatorError::PrimaryLeave);
                }
                if self.connectivity.joined.remove(&worker).is_none() {
                    warn!("leave for unknown worker {worker}");
                    return Ok(lost);
                }
                self.log.remove_worker(worker);
                self.ratectl.leave(worker);
                lost = self
                    .in_flight
                    .iter()
                    .filter(|(_, e)| e.worker == worker)
                    .map(|(k, _)| *k)
                    .collect();
                for k in &lost {
                    self.in_flight.remove(k);
                }
                self.metrics.counters.lost_on_leave += lost.len() as u64;
            }
        }
        self.metrics.record_connectivity(ConnectivityRecord {
            t: now,
            worker,
            kind: match event {
                ConnectivityEvent::Join => ConnectivityKind::Join,
                ConnectivityEvent::Leave => ConnectivityKind::Leave,
            },
        });
        let provider = LogWeights {
            log: &self.log,
            default_analysis_time: self.params.default_analysis_time,
        };
        self.sequences
            .on_connectivity_change(&self.connectivity.workers(), &provider)?;
        Ok(lost)
    }

    /// Periodic rate decision.
    pub fn control_tick(&mut self, now: f64) -> Result<RateDecision, CoordinatorError> {
        self.log.prune(now);
        let decision = self.ratectl.tick(&self.log, now)?;
        self.current_rate = decision.per_camera_rate;
        self.metrics.record_rate(now, decision.per_camera_rate);
        Ok(decision)
    }

    /// Closes the books. `extra_in_flight` counts frames the caller still
    /// holds outside the coordinator (e.g. on dashcam links).
    pub fn finish(mut self, meta: ReportMeta, end: f64, extra_in_flight: u64) -> MetricsReport {
        self.metrics.counters.in_flight_at_end +=
            self.queue.len() as u64 + self.in_flight.len() as u64 + extra_in_flight;
        let deadline = self.params.latency_deadline;
        self.metrics.finish(meta, end, deadline)
    }
}
