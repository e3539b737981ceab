//! Worker weights and proportional-priority worker sequences.
//!
//! Every worker's priority grows by its weight each iteration; the worker
//! with the highest priority takes the slot and pays back the sum of all
//! weights. Slot counts therefore track weight shares, and equal weights
//! degrade to plain round-robin with a fixed gap of `M` between repeats.
//!
//! Weights are quantized to integer units (relative to the largest weight)
//! before generation, so the zero-sum priority invariant holds exactly and
//! the output only depends on weight ratios.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{PerfLog, VideoSource, WorkerId};

/// Fixed-point resolution of a normalized weight: the largest weight maps to
/// this many units.
pub const WEIGHT_UNITS: i64 = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("no workers connected")]
    NoWorkers,
    #[error("sequence length must be at least 1")]
    EmptySequence,
    #[error("{what} must be positive and finite, got {value}")]
    Domain { what: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerWeight {
    pub worker_id: WorkerId,
    /// Inverse of the expected internal latency, 1/s.
    pub weight: f64,
}

impl WorkerWeight {
    pub fn new(worker_id: WorkerId, weight: f64) -> Self {
        WorkerWeight { worker_id, weight }
    }
}

fn check_positive(what: &'static str, value: f64) -> Result<f64, SchedulerError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(SchedulerError::Domain { what, value })
    }
}

/// `1 / (T_C * (L_Q + 1))` with `T_C = (T_I + T_O) / 2`.
///
/// Absent per-source averages fall back to `default_t`; an absent queue
/// length counts as zero.
pub fn compute_weight(
    t_inner: Option<f64>,
    t_outer: Option<f64>,
    queue_len: Option<f64>,
    default_t: f64,
) -> Result<f64, SchedulerError> {
    let default_t = check_positive("default analysis time", default_t)?;
    let t_inner = check_positive("inner analysis time", t_inner.unwrap_or(default_t))?;
    let t_outer = check_positive("outer analysis time", t_outer.unwrap_or(default_t))?;
    let queue_len = queue_len.unwrap_or(0.0);
    if !(queue_len >= 0.0 && queue_len.is_finite()) {
        return Err(SchedulerError::Domain {
            what: "queue length",
            value: queue_len,
        });
    }
    let t_c = (t_inner + t_outer) / 2.0;
    Ok(1.0 / (t_c * (queue_len + 1.0)))
}

/// Converts positive real weights into integer units, the largest weight
/// mapping to [`WEIGHT_UNITS`]. Tiny weights never round below one unit.
pub fn quantize_weights(weights: &[f64]) -> Result<Vec<i64>, SchedulerError> {
    let mut max = 0.0f64;
    for &w in weights {
        check_positive("weight", w)?;
        max = max.max(w);
    }
    Ok(weights
        .iter()
        .map(|&w| ((w / max * WEIGHT_UNITS as f64).round() as i64).max(1))
        .collect())
}

/// Integer state of the priority-based slot selection.
#[derive(Debug, Clone)]
pub struct PriorityState {
    units: Vec<i64>,
    priorities: Vec<i64>,
    total: i64,
}

impl PriorityState {
    pub fn new(units: Vec<i64>) -> Self {
        let total = units.iter().sum();
        PriorityState {
            priorities: vec![0; units.len()],
            units,
            total,
        }
    }

    pub fn priorities(&self) -> &[i64] {
        &self.priorities
    }

    pub fn units(&self) -> &[i64] {
        &self.units
    }

    /// Runs one outer-loop iteration and returns the chosen index.
    pub fn step(&mut self) -> usize {
        let mut best_priority = 0i64;
        let mut next = 0usize;
        for (i, p) in self.priorities.iter_mut().enumerate() {
            *p += self.units[i];
            // strictly greater: the first (lowest index) maximum wins
            if *p > best_priority {
                best_priority = *p;
                next = i;
            }
        }
        self.priorities[next] -= self.total;
        next
    }
}

/// Builds an `n`-slot sequence. Workers are considered in ascending id order,
/// which fixes tie-breaking.
pub fn generate_sequence(
    weights: &[WorkerWeight],
    n: usize,
) -> Result<Vec<WorkerId>, SchedulerError> {
    if weights.is_empty() {
        return Err(SchedulerError::NoWorkers);
    }
    if n == 0 {
        return Err(SchedulerError::EmptySequence);
    }
    let mut ordered = weights.to_vec();
    ordered.sort_by_key(|w| w.worker_id);
    let raw: Vec<f64> = ordered.iter().map(|w| w.weight).collect();
    let mut state = PriorityState::new(quantize_weights(&raw)?);
    Ok((0..n).map(|_| ordered[state.step()].worker_id).collect())
}

/// Supplies current weights whenever a sequence has to be (re)generated.
pub trait WeightProvider {
    fn weights(&self, workers: &[WorkerId]) -> Result<Vec<WorkerWeight>, SchedulerError>;
}

/// Weights derived from the performance log.
#[derive(Debug, Clone, Copy)]
pub struct LogWeights<'a> {
    pub log: &'a PerfLog,
    pub default_analysis_time: f64,
}

impl WeightProvider for LogWeights<'_> {
    fn weights(&self, workers: &[WorkerId]) -> Result<Vec<WorkerWeight>, SchedulerError> {
        workers
            .iter()
            .map(|&id| {
                let s = self.log.snapshot(id);
                let w = compute_weight(s.inner, s.outer, s.queue_len, self.default_analysis_time)?;
                Ok(WorkerWeight::new(id, w))
            })
            .collect()
    }
}

/// Static weights; workers missing from the map get weight 1.
#[derive(Debug, Clone, Default)]
pub struct FixedWeights(pub BTreeMap<WorkerId, f64>);

impl WeightProvider for FixedWeights {
    fn weights(&self, workers: &[WorkerId]) -> Result<Vec<WorkerWeight>, SchedulerError> {
        Ok(workers
            .iter()
            .map(|&id| WorkerWeight::new(id, self.0.get(&id).copied().unwrap_or(1.0)))
            .collect())
    }
}

/// A generated sequence for one video source plus its read cursor.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerSequence {
    pub source: VideoSource,
    pub slots: Vec<WorkerId>,
    pub cursor: usize,
    /// Increments on every generation for this source.
    pub epoch: u64,
}

impl WorkerSequence {
    fn empty(source: VideoSource) -> Self {
        WorkerSequence {
            source,
            slots: Vec::new(),
            cursor: 0,
            epoch: 0,
        }
    }

    pub fn is_exhausted(&self) -> bool {
        self.cursor >= self.slots.len()
    }
}

/// Worker chosen for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub worker: WorkerId,
    /// Generation epoch of the sequence the slot came from.
    pub epoch: u64,
    /// True when this call generated a fresh sequence.
    pub regenerated: bool,
}

/// Keeps one worker sequence per video source.
#[derive(Debug, Clone)]
pub struct SequenceManager {
    length: usize,
    workers: Vec<WorkerId>,
    sequences: [WorkerSequence; 2],
}

impl SequenceManager {
    pub fn new(length: usize) -> Self {
        SequenceManager {
            length: length.max(1),
            workers: Vec::new(),
            sequences: [
                WorkerSequence::empty(VideoSource::Inner),
                WorkerSequence::empty(VideoSource::Outer),
            ],
        }
    }

    pub fn sequence_length(&self) -> usize {
        self.length
    }

    pub fn workers(&self) -> &[WorkerId] {
        &self.workers
    }

    pub fn sequence(&self, source: VideoSource) -> &WorkerSequence {
        &self.sequences[source.index()]
    }

    /// True when no worker is connected and dispatch must pause.
    pub fn is_stalled(&self) -> bool {
        self.workers.is_empty()
    }

    fn regenerate(
        &mut self,
        source: VideoSource,
        provider: &dyn WeightProvider,
    ) -> Result<(), SchedulerError> {
        let weights = provider.weights(&self.workers)?;
        let slots = generate_sequence(&weights, self.length)?;
        let seq = &mut self.sequences[source.index()];
        seq.slots = slots;
        seq.cursor = 0;
        seq.epoch += 1;
        Ok(())
    }

    /// Serves the slot under the cursor and advances it, generating a fresh
    /// sequence first when the current one is used up.
    pub fn next_worker(
        &mut self,
        source: VideoSource,
        provider: &dyn WeightProvider,
    ) -> Result<Assignment, SchedulerError> {
        if self.workers.is_empty() {
            return Err(SchedulerError::NoWorkers);
        }
        let regenerated = self.sequences[source.index()].is_exhausted();
        if regenerated {
            self.regenerate(source, provider)?;
        }
        let seq = &mut self.sequences[source.index()];
        let worker = seq.slots[seq.cursor];
        seq.cursor += 1;
        Ok(Assignment {
            worker,
            epoch: seq.epoch,
            regenerated,
        })
    }

    /// Rebuilds both sequences over the new worker set. An empty set leaves
    /// the manager stalled with no sequences.
    pub fn on_connectivity_change(
        &mut self,
        connected: &[WorkerId],
        provider: &dyn WeightProvider,
    ) -> Result<(), SchedulerError> {
        let mut workers = connected.to_vec();
        workers.sort();
        workers.dedup();
        self.workers = workers;
        for source in VideoSource::ALL {
            if self.workers.is_empty() {
                let seq = &mut self.sequences[source.index()];
                seq.slots.clear();
                seq.cursor = 0;
            } else {
                self.regenerate(source, provider)?;
            }
        }
        Ok(())
    }
}
