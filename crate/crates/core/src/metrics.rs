//! Measurement collection and export: latency CDFs, per-camera throughput,
//! deadline-miss ratios, worker queue lengths and frame distribution per
//! sequence epoch.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{VideoSource, WorkerId};

/// Width of a latency CDF bin, seconds.
pub const CDF_BIN_WIDTH: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub frame_id: u64,
    pub source: VideoSource,
    /// Start of the dashcam transfer to result arrival, seconds.
    pub e2e_latency: f64,
    pub completed_at: f64,
}

/// One point of a cumulative distribution: fraction of samples `<= upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub upper: f64,
    pub fraction: f64,
}

/// Cumulative distribution over fixed-width bins. Bin `k` covers
/// `(k*w, (k+1)*w]`; the table runs up to the bin of the largest sample and
/// therefore ends at 1.0. Empty input gives an empty table.
pub fn cdf(samples: &[f64], bin_width: f64) -> Vec<CdfPoint> {
    if samples.is_empty() || !(bin_width > 0.0) {
        return Vec::new();
    }
    let bin_of = |x: f64| ((x / bin_width).ceil() as i64 - 1).max(0) as usize;
    let max_bin = samples.iter().map(|&x| bin_of(x)).max().unwrap_or(0);
    let mut counts = vec![0u64; max_bin + 1];
    for &x in samples {
        counts[bin_of(x)] += 1;
    }
    let n = samples.len() as f64;
    let mut acc = 0u64;
    counts
        .iter()
        .enumerate()
        .map(|(k, c)| {
            acc += c;
            CdfPoint {
                upper: (k + 1) as f64 * bin_width,
                fraction: acc as f64 / n,
            }
        })
        .collect()
}

/// Fraction of samples strictly above `deadline`; `None` when empty.
pub fn miss_ratio(samples: &[f64], deadline: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let missed = samples.iter().filter(|&&x| x > deadline).count();
    Some(missed as f64 / samples.len() as f64)
}

/// Miss ratio read off a CDF table, using the last bin edge at or below the
/// deadline. Never under-reports and is off by at most one bin of samples.
pub fn miss_ratio_from_cdf(table: &[CdfPoint], deadline: f64) -> Option<f64> {
    if table.is_empty() {
        return None;
    }
    let below = table
        .iter()
        .take_while(|p| p.upper <= deadline + 1e-12)
        .last()
        .map_or(0.0, |p| p.fraction);
    Some(1.0 - below)
}

/// One dispatch decision, tagged with the sequence epoch that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispatchRecord {
    pub source: VideoSource,
    pub epoch: u64,
    pub worker: WorkerId,
    pub at: f64,
}

/// Frames assigned to each worker within one sequence epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochShare {
    pub source: VideoSource,
    pub epoch: u64,
    pub started_at: f64,
    pub total: u32,
    pub counts: BTreeMap<WorkerId, u32>,
}

impl EpochShare {
    pub fn share(&self, worker: WorkerId) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        *self.counts.get(&worker).unwrap_or(&0) as f64 / self.total as f64
    }
}

/// Groups dispatches by `(source, epoch)` in order of first appearance.
/// Epoch 0 (dispatches outside sequence scheduling) is skipped.
pub fn distribution_ratio(dispatches: &[DispatchRecord]) -> Vec<EpochShare> {
    let mut out: Vec<EpochShare> = Vec::new();
    let mut index: BTreeMap<(VideoSource, u64), usize> = BTreeMap::new();
    for d in dispatches.iter().filter(|d| d.epoch != 0) {
        let i = *index.entry((d.source, d.epoch)).or_insert_with(|| {
            out.push(EpochShare {
                source: d.source,
                epoch: d.epoch,
                started_at: d.at,
                total: 0,
                counts: BTreeMap::new(),
            });
            out.len() - 1
        });
        out[i].total += 1;
        *out[i].counts.entry(d.worker).or_insert(0) += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub t: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    BufferOverflow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub kind: FaultKind,
    pub at: f64,
    pub queue_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectivityKind {
    Join,
    Leave,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityRecord {
    pub t: f64,
    pub worker: WorkerId,
    pub kind: ConnectivityKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmRecord {
    pub t: f64,
    pub frame_id: u64,
    pub source: VideoSource,
}

/// Frame accounting. In a finished run
/// `transferred == resolved + in_flight_at_end + lost_on_leave + dropped_by_overflow`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub captured: u64,
    pub transferred: u64,
    pub resolved: u64,
    pub deadline_missed: u64,
    pub stale_results: u64,
    pub lost_on_leave: u64,
    pub in_flight_at_end: u64,
    pub dropped_by_overflow: u64,
    pub analyzer_errors: u64,
}

#[derive(Debug, Clone, Default)]
struct QueueTrack {
    area: f64,
    observed: f64,
    last_t: f64,
    last_len: u32,
    active: bool,
    samples: Vec<(f64, u32)>,
}

/// Append-only collector fed by the coordinator and the simulator.
#[derive(Debug, Clone, Default)]
pub struct MetricsCollector {
    latencies: Vec<LatencySample>,
    residence: [Vec<f64>; 2],
    dispatches: Vec<DispatchRecord>,
    camera_seconds: Vec<(VideoSource, Vec<u32>)>,
    rate_timeline: Vec<RatePoint>,
    queues: BTreeMap<WorkerId, QueueTrack>,
    worker_completed: BTreeMap<WorkerId, u64>,
    alarms: Vec<AlarmRecord>,
    connectivity: Vec<ConnectivityRecord>,
    fault: Option<FaultRecord>,
    pub counters: Counters,
}

impl MetricsCollector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_camera(&mut self, source: VideoSource) -> usize {
        self.camera_seconds.push((source, Vec::new()));
        self.camera_seconds.len() - 1
    }

    pub fn record_admitted(&mut self, camera: usize, t: f64) {
        self.counters.transferred += 1;
        let sec = t.max(0.0) as usize;
        let bins = &mut self.camera_seconds[camera].1;
        if bins.len() <= sec {
            bins.resize(sec + 1, 0);
        }
        bins[sec] += 1;
    }

    pub fn record_latency(&mut self, sample: LatencySample, deadline: f64) {
        self.counters.resolved += 1;
        if sample.e2e_latency > deadline {
            self.counters.deadline_missed += 1;
        }
        self.latencies.push(sample);
    }

    /// Time from arrival at a worker to the end of its analysis.
    pub fn record_worker_residence(&mut self, source: VideoSource, secs: f64) {
        self.residence[source.index()].push(secs);
    }

    pub fn record_dispatch(&mut self, d: DispatchRecord) {
        self.dispatches.push(d);
    }

    pub fn record_completion(&mut self, worker: WorkerId) {
        *self.worker_completed.entry(worker).or_insert(0) += 1;
    }

    pub fn record_rate(&mut self, t: f64, rate: f64) {
        self.rate_timeline.push(RatePoint { t, rate });
    }

    pub fn record_alarm(&mut self, a: AlarmRecord) {
        self.alarms.push(a);
    }

    pub fn record_connectivity(&mut self, c: ConnectivityRecord) {
        self.connectivity.push(c);
    }

    pub fn record_fault(&mut self, f: FaultRecord) {
        if self.fault.is_none() {
            self.fault = Some(f);
        }
    }

    pub fn fault(&self) -> Option<&FaultRecord> {
        self.fault.as_ref()
    }

    /// Starts or resumes time-weighted tracking of a worker queue.
    pub fn queue_start(&mut self, worker: WorkerId, t: f64) {
        let q = self.queues.entry(worker).or_default();
        q.active = true;
        q.last_t = t;
        q.last_len = 0;
    }

    pub fn queue_changed(&mut self, worker: WorkerId, t: f64, len: u32) {
        let q = self.queues.entry(worker).or_default();
        if q.active {
            let dt = t - q.last_t;
            q.area += dt * q.last_len as f64;
            q.observed += dt;
        }
        q.active = true;
        q.last_t = t;
        q.last_len = len;
    }

    pub fn queue_stop(&mut self, worker: WorkerId, t: f64) {
        if let Some(q) = self.queues.get_mut(&worker) {
            if q.active {
                let dt = t - q.last_t;
                q.area += dt * q.last_len as f64;
                q.observed += dt;
                q.active = false;
                q.last_len = 0;
            }
        }
    }

    pub fn queue_sample(&mut self, worker: WorkerId, t: f64, len: u32) {
        self.queues.entry(worker).or_default().samples.push((t, len));
    }

    pub fn latencies(&self) -> &[LatencySample] {
        &self.latencies
    }

    pub fn dispatches(&self) -> &[DispatchRecord] {
        &self.dispatches
    }

    pub fn rate_timeline(&self) -> &[RatePoint] {
        &self.rate_timeline
    }

    pub fn finish(mut self, meta: ReportMeta, end: f64, deadline: f64) -> MetricsReport {
        let workers: Vec<WorkerId> = self.queues.keys().copied().collect();
        for w in workers {
            self.queue_stop(w, end);
        }
        let sources = VideoSource::ALL
            .iter()
            .map(|&s| {
                let lat: Vec<f64> = self
                    .latencies
                    .iter()
                    .filter(|l| l.source == s)
                    .map(|l| l.e2e_latency)
                    .collect();
                SourceReport::build(s, &lat, &self.residence[s.index()], deadline)
            })
            .collect();
        let throughput = self
            .camera_seconds
            .iter()
            .enumerate()
            .map(|(i, (source, bins))| {
                let mut per_second = bins.clone();
                let full = end.floor().max(0.0) as usize;
                if per_second.len() < full {
                    per_second.resize(full, 0);
                }
                let total: u64 = per_second.iter().map(|&c| c as u64).sum();
                CameraThroughput {
                    camera: i,
                    source: *source,
                    mean_fps: if end > 0.0 { total as f64 / end } else { 0.0 },
                    per_second,
                }
            })
            .collect();
        let mut dispatched: BTreeMap<WorkerId, u64> = BTreeMap::new();
        for d in &self.dispatches {
            *dispatched.entry(d.worker).or_insert(0) += 1;
        }
        let mut worker_ids: Vec<WorkerId> = self
            .queues
            .keys()
            .chain(dispatched.keys())
            .copied()
            .collect();
        worker_ids.sort();
        worker_ids.dedup();
        let workers = worker_ids
            .into_iter()
            .map(|w| {
                let q = self.queues.get(&w);
                WorkerReport {
                    worker: w,
                    dispatched: dispatched.get(&w).copied().unwrap_or(0),
                    completed: self.worker_completed.get(&w).copied().unwrap_or(0),
                    mean_queue_len: q
                        .filter(|q| q.observed > 0.0)
                        .map_or(0.0, |q| q.area / q.observed),
                    queue_samples: q
                        .map(|q| q.samples.iter().map(|&(t, l)| [t, l as f64]).collect())
                        .unwrap_or_default(),
                }
            })
            .collect();
        MetricsReport {
            scenario: meta.scenario,
            seed: meta.seed,
            scheduler: meta.scheduler,
            rate_control: meta.rate_control,
            duration: end,
            latency_deadline: deadline,
            fault: self.fault,
            sources,
            throughput,
            rate_timeline: self.rate_timeline,
            workers,
            distribution: distribution_ratio(&self.dispatches),
            counters: self.counters,
            alarms: self.alarms.len() as u64,
            connectivity: self.connectivity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub scenario: String,
    pub seed: u64,
    pub scheduler: String,
    pub rate_control: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceReport {
    pub source: VideoSource,
    pub samples: u64,
    pub mean_latency: Option<f64>,
    pub p50_latency: Option<f64>,
    pub p99_latency: Option<f64>,
    pub max_latency: Option<f64>,
    pub deadline_miss_ratio: Option<f64>,
    pub mean_worker_residence: Option<f64>,
    pub residence_samples: u64,
    /// `[upper_edge_seconds, cumulative_fraction]` rows, 1 ms bins.
    pub cdf: Vec<[f64; 2]>,
}

fn nearest_rank(sorted: &[f64], pct: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted.get(rank.saturating_sub(1)).copied()
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl SourceReport {
    fn build(source: VideoSource, latencies: &[f64], residence: &[f64], deadline: f64) -> Self {
        let mut sorted = latencies.to_vec();
        sorted.sort_by(f64::total_cmp);
        SourceReport {
            source,
            samples: latencies.len() as u64,
            mean_latency: mean(latencies),
            p50_latency: nearest_rank(&sorted, 50.0),
            p99_latency: nearest_rank(&sorted, 99.0),
            max_latency: sorted.last().copied(),
            deadline_miss_ratio: miss_ratio(latencies, deadline),
            mean_worker_residence: mean(residence),
            residence_samples: residence.len() as u64,
            cdf: cdf(latencies, CDF_BIN_WIDTH)
                .into_iter()
                .map(|p| [p.upper, p.fraction])
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraThroughput {
    pub camera: usize,
    pub source: VideoSource,
    pub mean_fps: f64,
    /// Frames admitted during each whole second of the run.
    pub per_second: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub worker: WorkerId,
    pub dispatched: u64,
    pub completed: u64,
    /// Time-weighted mean of waiting frames while connected.
    pub mean_queue_len: f64,
    /// `[t, queue_len]` sampled at every control tick.
    pub queue_samples: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub scheduler: String,
    pub rate_control: bool,
    /// Simulated (or wall) seconds covered; shorter than configured on a fault.
    pub duration: f64,
    pub latency_deadline: f64,
    pub fault: Option<FaultRecord>,
    pub sources: Vec<SourceReport>,
    pub throughput: Vec<CameraThroughput>,
    pub rate_timeline: Vec<RatePoint>,
    pub workers: Vec<WorkerReport>,
    pub distribution: Vec<EpochShare>,
    pub counters: Counters,
    pub alarms: u64,
    pub connectivity: Vec<ConnectivityRecord>,
}

impl MetricsReport {
    pub fn source(&self, source: VideoSource) -> &SourceReport {
        &self.sources[source.index()]
    }

    pub fn worker(&self, worker: WorkerId) -> Option<&WorkerReport> {
        self.workers.iter().find(|w| w.worker == worker)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn file_stem(&self) -> String {
        format!("{}-seed{}", self.scenario, self.seed)
    }

    /// Writes `<stem>-report.json` plus one CSV per metric into `dir`.
    pub fn write_files(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let stem = self.file_stem();
        let mut written = Vec::new();
        let json = dir.join(format!("{stem}-report.json"));
        fs::write(&json, self.to_json())?;
        written.push(json);
        for metric in Metric::ALL {
            let path = dir.join(format!("{stem}-{}.csv", metric.name()));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(metric.header())?;
            for row in self.rows(metric) {
                w.write_record(&row)?;
            }
            w.flush()?;
            written.push(path);
        }
        Ok(written)
    }

    /// Rows of one metric as strings; shared by the CSV and column exporters.
    pub fn rows(&self, metric: Metric) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        match metric {
            Metric::LatencyCdf => {
                for s in &self.sources {
                    for [upper, frac] in &s.cdf {
                        rows.push(vec![s.source.to_string(), fmt(upper * 1000.0), fmt(*frac)]);
                    }
                }
            }
            Metric::Throughput => {
                for c in &self.throughput {
                    for (sec, n) in c.per_second.iter().enumerate() {
                        rows.push(vec![
                            c.camera.to_string(),
                            c.source.to_string(),
                            sec.to_string(),
                            n.to_string(),
                        ]);
                    }
                }
            }
            Metric::Rate => {
                for p in &self.rate_timeline {
                    rows.push(vec![fmt(p.t), fmt(p.rate)]);
                }
            }
            Metric::QueueLength => {
                for w in &self.workers {
                    for [t, len] in &w.queue_samples {
                        rows.push(vec![w.worker.0.to_string(), fmt(*t), fmt(*len)]);
                    }
                }
            }
            Metric::Distribution => {
                for e in &self.distribution {
                    for (w, n) in &e.counts {
                        rows.push(vec![
                            e.source.to_string(),
                            e.epoch.to_string(),
                            fmt(e.started_at),
                            w.0.to_string(),
                            n.to_string(),
                            e.total.to_string(),
                        ]);
                    }
                }
            }
            Metric::MissRatio => {
                for s in &self.sources {
                    rows.push(vec![
                        s.source.to_string(),
                        s.samples.to_string(),
                        s.deadline_miss_ratio.map(fmt).unwrap_or_default(),
                    ]);
                }
            }
        }
        rows
    }

    /// Whitespace-separated columns with a `#` header, ready for gnuplot.
    pub fn columns(&self, metric: Metric) -> String {
        let mut out = format!("# {}\n", metric.header().join(" "));
        for row in self.rows(metric) {
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    LatencyCdf,
    Throughput,
    Rate,
    QueueLength,
    Distribution,
    MissRatio,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::LatencyCdf,
        Metric::Throughput,
        Metric::Rate,
        Metric::QueueLength,
        Metric::Distribution,
        Metric::MissRatio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::LatencyCdf => "latency_cdf",
            Metric::Throughput => "throughput",
            Metric::Rate => "rate",
            Metric::QueueLength => "queue_length",
            Metric::Distribution => "distribution",
            Metric::MissRatio => "miss_ratio",
        }
    }

    /// Accepts either `miss_ratio` or `miss-ratio`.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.replace('-', "_");
        Metric::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn header(self) -> &'static [&'static str] {
        match self {
            Metric::LatencyCdf => &["source", "latency_ms", "cdf"],
            Metric::Throughput => &["camera", "source", "second", "frames"],
            Metric::Rate => &["t", "per_camera_rate"],
            Metric::QueueLength => &["worker", "t", "queue_len"],
            Metric::Distribution => &["source", "epoch", "started_at", "worker", "frames", "total"],
            Metric::MissRatio => &["source", "samples", "miss_ratio"],
        }
    }
}
