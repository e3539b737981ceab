//! Live mode over TCP: a coordinator process (with its co-located worker 0
//! reached through loopback), remote worker processes and dashcam emulators.
//!
//! Each connection has one reader thread and one writer thread fed by a
//! channel, so ingest, dispatch and result collection proceed concurrently;
//! the shared [`Coordinator`] is only locked for single operations.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::coordinator::{ConnectivityEvent, Coordinator, CoordinatorError, Transport};
use crate::metrics::{MetricsReport, ReportMeta};
use crate::model::{AnalysisResult, FrameDescriptor, FrameKey, SystemParams, VideoSource, WorkerId};
use crate::wire::{read_message, write_message, FramePayload, Hello, Message, ResultPayload, Role};
use crate::worker::{AnalysisProfile, AnalyzerPlugin, StubAnalyzer, WorkerCore};

/// HELLO worker id a remote worker sends to ask for an assigned id.
pub const ASSIGN_ID: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum LiveError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("handshake: {0}")]
    Handshake(String),
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
}

/// Pipeline stages recorded in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Frame read off a dashcam socket and queued.
    Ingest,
    /// Frame picked from the queue and handed to a worker link.
    Dispatch,
    /// Frame analyzed by a worker slot.
    Analyze,
    /// Result read and folded into the performance log.
    Collect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageInterval {
    pub stage: Stage,
    pub source: VideoSource,
    pub frame_id: u64,
    pub start: f64,
    pub end: f64,
}

/// Shared record of when each stage worked on which frame.
#[derive(Debug)]
pub struct Trace {
    epoch: Instant,
    intervals: Mutex<Vec<StageInterval>>,
}

impl Trace {
    pub fn new() -> Arc<Self> {
        Arc::new(Trace {
            epoch: Instant::now(),
            intervals: Mutex::new(Vec::new()),
        })
    }

    pub fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    pub fn record(&self, stage: Stage, key: FrameKey, start: f64, end: f64) {
        lock(&self.intervals).push(StageInterval {
            stage,
            source: key.source,
            frame_id: key.frame_id,
            start,
            end,
        });
    }

    pub fn intervals(&self) -> Vec<StageInterval> {
        lock(&self.intervals).clone()
    }

    /// Whether some `a` interval overlaps in time with a `b` interval of a
    /// different frame.
    pub fn stages_overlap(&self, a: Stage, b: Stage) -> bool {
        let all = self.intervals();
        all.iter().filter(|x| x.stage == a).any(|x| {
            all.iter().filter(|y| y.stage == b).any(|y| {
                (x.source, x.frame_id) != (y.source, y.frame_id) && x.start < y.end && y.start < x.end
            })
        })
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn spawn_writer(stream: TcpStream, rx: Receiver<Message>) -> JoinHandle<()> {
    thread::spawn(move || {
        let mut w = BufWriter::new(stream);
        while let Ok(msg) = rx.recv() {
            let bye = msg == Message::Bye;
            if write_message(&mut w, &msg).and_then(|_| w.flush()).is_err() || bye {
                break;
            }
        }
    })
}

// ---------------------------------------------------------------- worker --

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub coordinator: SocketAddr,
    pub name: String,
    /// 0 claims the coordinator's local slot; [`ASSIGN_ID`] asks for one.
    pub requested_id: u32,
    pub slots: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkerStats {
    pub assigned_id: u32,
    pub analyzed: u64,
    pub errors: u64,
}

struct SlotQueue {
    core: Mutex<(WorkerCore, VecDeque<FrameDescriptor>, bool)>,
    ready: Condvar,
}

/// Connects to a coordinator and analyzes frames on `slots` threads until
/// the coordinator says BYE, the connection drops or `stop` is set.
pub fn run_worker<F>(
    cfg: &WorkerConfig,
    make_analyzer: F,
    stop: Arc<AtomicBool>,
    trace: Option<Arc<Trace>>,
) -> Result<WorkerStats, LiveError>
where
    F: Fn(usize) -> Box<dyn AnalyzerPlugin>,
{
    let stream = TcpStream::connect(cfg.coordinator)?;
    stream.set_nodelay(true)?;
    let mut writer = BufWriter::new(stream.try_clone()?);
    write_message(
        &mut writer,
        &Message::Hello(Hello {
            role: Role::Worker,
            source: VideoSource::Inner,
            worker_id: cfg.requested_id,
            name: cfg.name.clone(),
        }),
    )?;
    writer.flush()?;
    drop(writer);
    let mut reader = BufReader::new(stream.try_clone()?);
    let assigned = match read_message(&mut reader)? {
        Message::Hello(h) if h.role == Role::Worker => h.worker_id,
        Message::Bye => return Err(LiveError::Handshake("coordinator refused the worker".into())),
        other => {
            return Err(LiveError::Handshake(format!(
                "expected HELLO, got type 0x{:02x}",
                other.type_byte()
            )))
        }
    };
    info!("{} registered as worker {assigned}", cfg.name);
    let (tx, rx) = mpsc::channel();
    let writer = spawn_writer(stream.try_clone()?, rx);

    let slots = cfg.slots.max(1);
    // the WorkerCore tracks occupancy; the deque hands started frames to slots
    let shared = Arc::new(SlotQueue {
        core: Mutex::new((WorkerCore::new(slots), VecDeque::new(), false)),
        ready: Condvar::new(),
    });
    let analyzed = Arc::new(AtomicU32::new(0));
    let errors = Arc::new(AtomicU32::new(0));
    let mut handles = Vec::new();
    for slot in 0..slots {
        let shared = Arc::clone(&shared);
        let tx = tx.clone();
        let mut analyzer = make_analyzer(slot);
        let trace = trace.clone();
        let analyzed = Arc::clone(&analyzed);
        let errors = Arc::clone(&errors);
        handles.push(thread::spawn(move || loop {
            let frame = {
                let mut g = lock(&shared.core);
                loop {
                    if let Some(f) = g.1.pop_front() {
                        break f;
                    }
                    if g.2 {
                        return;
                    }
                    g = shared.ready.wait(g).unwrap_or_else(|p| p.into_inner());
                }
            };
            let t0 = trace.as_ref().map(|t| t.now());
            let outcome = analyzer.analyze(&frame);
            if let (Some(t), Some(t0)) = (&trace, t0) {
                t.record(Stage::Analyze, FrameKey::from(&frame), t0, t.now());
            }
            let queue_len_after = {
                let mut g = lock(&shared.core);
                let c = g.0.complete();
                if let Some(next) = c.next {
                    g.1.push_back(next);
                    shared.ready.notify_one();
                }
                c.queue_len_after
            };
            let result = match outcome {
                Ok(a) => AnalysisResult {
                    frame_id: frame.frame_id,
                    source: frame.source,
                    worker_id: WorkerId(assigned),
                    alarm: crate::coordinator::alarm_kind_of(&a.detections).is_some(),
                    detections: a.detections,
                    analysis_time: a.analysis_time,
                    queue_len_after,
                    error: false,
                },
                Err(e) => {
                    warn!("analyzer failed on frame {}: {e}", frame.frame_id);
                    errors.fetch_add(1, Ordering::Relaxed);
                    AnalysisResult {
                        frame_id: frame.frame_id,
                        source: frame.source,
                        worker_id: WorkerId(assigned),
                        detections: Vec::new(),
                        analysis_time: 1e-6,
                        queue_len_after,
                        alarm: false,
                        error: true,
                    }
                }
            };
            analyzed.fetch_add(1, Ordering::Relaxed);
            if tx.send(Message::Result(ResultPayload::from_result(&result))).is_err() {
                return;
            }
        }));
    }

    let _ = stream.set_read_timeout(Some(Duration::from_millis(200)));
    loop {
        if stop.load(Ordering::Relaxed) {
            let _ = tx.send(Message::Bye);
            break;
        }
        match read_message(&mut reader) {
            Ok(Message::Frame(p)) => {
                let frame = FrameDescriptor::from(p);
                let mut g = lock(&shared.core);
                if let Some(start) = g.0.enqueue(frame) {
                    g.1.push_back(start);
                    shared.ready.notify_one();
                }
            }
            Ok(Message::Bye) => break,
            Ok(Message::Ping) => {}
            Ok(other) => debug!("worker ignoring type 0x{:02x}", other.type_byte()),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) => {
                if e.kind() != io::ErrorKind::UnexpectedEof {
                    warn!("worker {assigned} connection error: {e}");
                }
                break;
            }
        }
    }
    {
        let mut g = lock(&shared.core);
        g.2 = true;
        g.1.clear();
        shared.ready.notify_all();
    }
    for h in handles {
        let _ = h.join();
    }
    drop(tx);
    let _ = writer.join();
    let _ = stream.shutdown(Shutdown::Both);
    Ok(WorkerStats {
        assigned_id: assigned,
        analyzed: analyzed.load(Ordering::Relaxed) as u64,
        errors: errors.load(Ordering::Relaxed) as u64,
    })
}

// ----------------------------------------------------------- coordinator --

/// Worker 0: stub analyzers on the coordinator's own host.
#[derive(Debug, Clone)]
pub struct LocalWorker {
    pub profile: AnalysisProfile,
    pub alarm_probability: f64,
}

#[derive(Debug, Clone)]
pub struct CoordinatorConfig {
    pub listen: SocketAddr,
    pub params: SystemParams,
    pub rate_control: bool,
    /// Stop after this long; `None` runs until [`LiveCoordinator::stop`].
    pub duration: Option<Duration>,
    pub local_worker: Option<LocalWorker>,
    pub name: String,
    pub seed: u64,
}

impl CoordinatorConfig {
    pub fn new(listen: SocketAddr, params: SystemParams) -> Self {
        CoordinatorConfig {
            listen,
            params,
            rate_control: true,
            duration: None,
            local_worker: Some(LocalWorker {
                profile: AnalysisProfile::strong(),
                alarm_probability: 0.0,
            }),
            name: "live".into(),
            seed: 42,
        }
    }
}

struct Shared {
    coord: Mutex<Coordinator>,
    work: Condvar,
    workers: Mutex<BTreeMap<WorkerId, Sender<Message>>>,
    dashcams: Mutex<Vec<Sender<Message>>>,
    next_id: AtomicU32,
    local_claimed: AtomicBool,
    stop: AtomicBool,
    fault: AtomicBool,
    started: Instant,
    trace: Option<Arc<Trace>>,
    /// Frames sent to worker 0 before it connected.
    primary_backlog: Mutex<Option<Receiver<Message>>>,
}

impl Shared {
    fn now(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    fn stopped(&self) -> bool {
        self.stop.load(Ordering::Relaxed)
    }
}

struct ChannelTransport<'a>(&'a BTreeMap<WorkerId, Sender<Message>>);

impl Transport for ChannelTransport<'_> {
    fn send_frame(&mut self, worker: WorkerId, frame: &FrameDescriptor) -> io::Result<()> {
        let tx = self
            .0
            .get(&worker)
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotConnected, format!("worker {worker}")))?;
        tx.send(Message::Frame(FramePayload::from(frame)))
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, format!("worker {worker}")))
    }
}

/// Handle to a running live coordinator.
pub struct LiveCoordinator {
    addr: SocketAddr,
    shared: Arc<Shared>,
    main: Option<JoinHandle<()>>,
    meta: ReportMeta,
}

impl LiveCoordinator {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        self.shared.work.notify_all();
    }

    pub fn is_stopped(&self) -> bool {
        self.shared.stopped()
    }

    /// True once a buffer overflow halted the run.
    pub fn faulted(&self) -> bool {
        self.shared.fault.load(Ordering::Relaxed)
    }

    pub fn current_rate(&self) -> f64 {
        lock(&self.shared.coord).current_rate()
    }

    pub fn connected_workers(&self) -> Vec<WorkerId> {
        lock(&self.shared.coord).connectivity().workers()
    }

    /// Waits for the run to end (duration, [`stop`](Self::stop) or fault)
    /// and returns the metrics report.
    pub fn join(mut self) -> MetricsReport {
        if let Some(h) = self.main.take() {
            let _ = h.join();
        }
        let end = self.shared.now();
        let coord = {
            let mut g = lock(&self.shared.coord);
            let params = g.params().clone();
            std::mem::replace(&mut *g, Coordinator::new(params, end))
        };
        coord.finish(self.meta.clone(), end, 0)
    }
}

/// Binds the listener, starts worker 0 (if configured) and all loops.
pub fn start_coordinator(cfg: CoordinatorConfig, trace: Option<Arc<Trace>>) -> Result<LiveCoordinator, LiveError> {
    cfg.params
        .validate()
        .map_err(|e| LiveError::Handshake(format!("bad parameters: {e}")))?;
    let listener = TcpListener::bind(cfg.listen)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (primary_tx, primary_rx) = mpsc::channel();
    let mut workers = BTreeMap::new();
    workers.insert(WorkerId::PRIMARY, primary_tx);
    let shared = Arc::new(Shared {
        coord: Mutex::new(Coordinator::new(cfg.params.clone(), 0.0)),
        work: Condvar::new(),
        workers: Mutex::new(workers),
        dashcams: Mutex::new(Vec::new()),
        next_id: AtomicU32::new(1),
        local_claimed: AtomicBool::new(false),
        stop: AtomicBool::new(false),
        fault: AtomicBool::new(false),
        started: Instant::now(),
        trace,
        primary_backlog: Mutex::new(Some(primary_rx)),
    });
    let meta = ReportMeta {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        scheduler: "deva".into(),
        rate_control: cfg.rate_control,
    };

    let mut loops = Vec::new();
    if let Some(local) = cfg.local_worker.clone() {
        let wcfg = WorkerConfig {
            coordinator: addr,
            name: "primary".into(),
            requested_id: 0,
            slots: cfg.params.degree_of_parallelism as usize,
        };
        let stop = Arc::new(AtomicBool::new(false));
        let trace = shared.trace.clone();
        let seed = cfg.seed;
        let sh = Arc::clone(&shared);
        loops.push(thread::spawn(move || {
            let make = |slot: usize| -> Box<dyn AnalyzerPlugin> {
                Box::new(StubAnalyzer::new(
                    local.profile.clone(),
                    seed.wrapping_add(slot as u64),
                    local.alarm_probability,
                    true,
                ))
            };
            // the worker exits when the coordinator sends BYE at shutdown
            if let Err(e) = run_worker(&wcfg, make, stop, trace) {
                if !sh.stopped() {
                    warn!("local worker failed: {e}");
                }
            }
        }));
    }
    {
        let sh = Arc::clone(&shared);
        loops.push(thread::spawn(move || dispatch_loop(&sh)));
    }
    {
        let sh = Arc::clone(&shared);
        let period = Duration::from_secs_f64(cfg.params.control_period);
        let rate_control = cfg.rate_control;
        loops.push(thread::spawn(move || rate_loop(&sh, period, rate_control)));
    }
    let sh = Arc::clone(&shared);
    let duration = cfg.duration;
    let main = thread::spawn(move || {
        let mut conns = Vec::new();
        while !sh.stopped() {
            if duration.is_some_and(|d| sh.started.elapsed() >= d) {
                break;
            }
            match listener.accept() {
                Ok((stream, peer)) => {
                    let sh2 = Arc::clone(&sh);
                    conns.push(thread::spawn(move || {
                        if let Err(e) = handle_connection(&sh2, stream, peer) {
                            debug!("connection {peer} ended: {e}");
                        }
                    }));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                Err(e) => {
                    warn!("accept failed: {e}");
                    thread::sleep(Duration::from_millis(50));
                }
            }
        }
        sh.stop.store(true, Ordering::Relaxed);
        sh.work.notify_all();
        for tx in lock(&sh.workers).values() {
            let _ = tx.send(Message::Bye);
        }
        for tx in lock(&sh.dashcams).iter() {
            let _ = tx.send(Message::Bye);
        }
        for h in loops.into_iter().chain(conns) {
            let _ = h.join();
        }
    });
    Ok(LiveCoordinator {
        addr,
        shared,
        main: Some(main),
        meta,
    })
}

fn dispatch_loop(sh: &Shared) {
    let mut coord = lock(&sh.coord);
    while !sh.stopped() {
        let now = sh.now();
        let t0 = sh.trace.as_ref().map(|t| t.now());
        let key = coord.queue().head().map(|q| FrameKey::from(&q.frame));
        let workers = lock(&sh.workers);
        let step = coord.dispatch_step(&mut ChannelTransport(&workers), now);
        drop(workers);
        match step {
            Ok(true) => {
                if let (Some(t), Some(t0), Some(key)) = (&sh.trace, t0, key) {
                    t.record(Stage::Dispatch, key, t0, t.now());
                }
                // let ingest and collection interleave between dispatches
                drop(coord);
                coord = lock(&sh.coord);
            }
            Ok(false) | Err(CoordinatorError::NoWorkers) => {
                coord = sh
                    .work
                    .wait_timeout(coord, Duration::from_millis(20))
                    .unwrap_or_else(|p| p.into_inner())
                    .0;
            }
            Err(e) => {
                // a worker vanished between selection and send; its leave
                // handler marks the frame lost
                debug!("dispatch: {e}");
                drop(coord);
                thread::sleep(Duration::from_millis(1));
                coord = lock(&sh.coord);
            }
        }
    }
}

fn rate_loop(sh: &Shared, period: Duration, rate_control: bool) {
    let mut next = Instant::now();
    while !sh.stopped() {
        next += period;
        if let Some(wait) = next.checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
        if !rate_control {
            continue;
        }
        let decision = lock(&sh.coord).control_tick(sh.now());
        match decision {
            Ok(d) => {
                let msg = Message::rate(d.per_camera_rate);
                lock(&sh.dashcams).retain(|tx| tx.send(msg.clone()).is_ok());
            }
            Err(e) => warn!("rate control: {e}"),
        }
    }
}

fn handle_connection(sh: &Arc<Shared>, stream: TcpStream, peer: SocketAddr) -> Result<(), LiveError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let hello = match read_message(&mut reader)? {
        Message::Hello(h) => h,
        other => {
            return Err(LiveError::Handshake(format!(
                "{peer}: expected HELLO, got 0x{:02x}",
                other.type_byte()
            )))
        }
    };
    match hello.role {
        Role::Dashcam => serve_dashcam(sh, stream, reader, hello),
        Role::Worker => serve_worker(sh, stream, reader, hello, peer),
    }
}

fn serve_dashcam(
    sh: &Arc<Shared>,
    stream: TcpStream,
    mut reader: BufReader<TcpStream>,
    hello: Hello,
) -> Result<(), LiveError> {
    info!("dashcam {} ({}) connected", hello.name, hello.source);
    let (tx, rx) = mpsc::channel();
    let writer = spawn_writer(stream.try_clone()?, rx);
    let rate = lock(&sh.coord).current_rate();
    let _ = tx.send(Message::rate(rate));
    lock(&sh.dashcams).push(tx.clone());
    stream.set_read_timeout(Some(Duration::from_millis(200)))?;
    while !sh.stopped() {
        match read_message(&mut reader) {
            Ok(Message::Frame(p)) => {
                let t0 = sh.now();
                let frame = FrameDescriptor::from(p);
                let key = FrameKey::from(&frame);
                let res = lock(&sh.coord).ingest_frame(frame, t0, t0);
                if let Some(t) = &sh.trace {
                    t.record(Stage::Ingest, key, t0, sh.now());
                }
                if let Err(e) = res {
                    warn!("{e}; halting");
                    sh.fault.store(true, Ordering::Relaxed);
                    sh.stop.store(true, Ordering::Relaxed);
                    break;
                }
                sh.work.notify_one();
            }
            Ok(Message::Bye) => break,
            Ok(_) => {}
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
    let _ = tx.send(Message::Bye);
    drop(tx);
    let _ = writer.join();
    Ok(())
}

fn serve_worker(
    sh: &Arc<Shared>,
    stream: TcpStream,
    mut reader: BufReader<TcpStream>,
    hello: Hello,
    peer: SocketAddr,
) -> Result<(), LiveError> {
    let local = hello.worker_id == 0
        && peer.ip().is_loopback()
        && !sh.local_claimed.swap(true, Ordering::SeqCst);
    let id = if local {
        WorkerId::PRIMARY
    } else {
        WorkerId(sh.next_id.fetch_add(1, Ordering::SeqCst))
    };
    let mut handshake = BufWriter::new(stream.try_clone()?);
    write_message(
        &mut handshake,
        &Message::Hello(Hello {
            role: Role::Worker,
            source: VideoSource::Inner,
            worker_id: id.0,
            name: hello.name.clone(),
        }),
    )?;
    handshake.flush()?;
    drop(handshake);

    let writer = if local {
        let rx = lock(&sh.primary_backlog)
            .take()
            .expect("local slot is claimed once");
        spawn_writer(stream.try_clone()?, rx)
    } else {
        let (tx, rx) = mpsc::channel();
        let handle = spawn_writer(stream.try_clone()?, rx);
        lock(&sh.workers).insert(id, tx);
        lock(&sh.coord).connectivity_event(ConnectivityEvent::Join, id, sh.now())?;
        sh.work.notify_one();
        handle
    };
    info!("worker {id} ({}) connected from {peer}", hello.name);
    stream.set_read_timeout(Some(Duration::from_millis(200)))?;
    while !sh.stopped() {
        match read_message(&mut reader) {
            Ok(Message::Result(p)) => {
                let t0 = sh.now();
                let result = p.into_result(id);
                let key = result.key();
                let outcome = lock(&sh.coord).collect_result(&result, t0);
                if let Some(t) = &sh.trace {
                    t.record(Stage::Collect, key, t0, sh.now());
                }
                if let Some(alarm) = outcome.alarm {
                    info!("ALARM {} on {} frame {}", alarm.kind.label(), alarm.source, alarm.frame_id);
                }
            }
            Ok(Message::Bye) => break,
            Ok(_) => {}
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
    if !id.is_primary() {
        if let Some(tx) = lock(&sh.workers).remove(&id) {
            let _ = tx.send(Message::Bye);
        }
        if !sh.stopped() {
            let lost = lock(&sh.coord).connectivity_event(ConnectivityEvent::Leave, id, sh.now())?;
            info!("worker {id} left; {} frames lost", lost.len());
        }
    }
    let _ = writer.join();
    let _ = stream.shutdown(Shutdown::Both);
    Ok(())
}
