//! Queueing-model frame rate control.
//!
//! Each worker is treated as an M/M/1 queue whose service rate is
//! `d_p / T_C`. The admissible arrival rate for a worker is the largest rate
//! whose expected sojourn time still fits in the deadline once the two frame
//! hops and the result hop are paid for. The per-camera transfer rate is the
//! sum of those bounds spread over all cameras, capped at the native rate.
//!
//! Note on interpretation: the summed bound is a system-wide arrival rate,
//! while every dashcam emits its own stream, so the sum is divided by the
//! camera count before the native-rate cap is applied.

use std::collections::BTreeMap;

use log::warn;
use serde::Serialize;
use thiserror::Error;

use crate::model::{PerfLog, PerfSnapshot, SystemParams, WorkerId};

/// Lowest per-camera rate applied while any worker is connected, so fresh
/// measurements keep arriving.
pub const MIN_CAMERA_RATE: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum RateError {
    #[error("latency deadline leaves no processing budget ({0}s)")]
    NoBudget(f64),
    #[error("analysis time must be positive and finite, got {0}")]
    BadAnalysisTime(f64),
    #[error("arrival rate {lambda}/s saturates service rate {mu}/s")]
    Unstable { lambda: f64, mu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacityEstimate {
    pub worker_id: WorkerId,
    /// Larger of the per-source mean analysis times, seconds.
    pub t_c: f64,
    /// Copied from the slowest peer because the worker has no records yet.
    pub provisional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateDecision {
    /// Frames per second each camera should transfer.
    pub per_camera_rate: f64,
    pub per_worker_bounds: Vec<(WorkerId, f64)>,
    pub computed_at: f64,
    /// No worker estimate was available.
    pub no_capacity: bool,
}

impl RateDecision {
    pub fn total_bound(&self) -> f64 {
        self.per_worker_bounds.iter().map(|(_, b)| b).sum()
    }
}

/// Upper bound on a worker's frame arrival rate that keeps its expected
/// processing latency within the deadline; clamped at zero.
pub fn lambda_upper_bound(t_c: f64, params: &SystemParams) -> Result<f64, RateError> {
    if !(t_c > 0.0 && t_c.is_finite()) {
        return Err(RateError::BadAnalysisTime(t_c));
    }
    let budget = params.processing_budget();
    if budget <= 0.0 {
        return Err(RateError::NoBudget(budget));
    }
    let d_p = params.degree_of_parallelism as f64;
    Ok((d_p / t_c - 1.0 / budget).max(0.0))
}

/// Sums the per-worker bounds and converts them into a per-camera rate.
/// No minimum floor is applied here; see [`RateController`].
pub fn compute_frame_rate(
    estimates: &[CapacityEstimate],
    params: &SystemParams,
    now: f64,
) -> Result<RateDecision, RateError> {
    let mut bounds = Vec::with_capacity(estimates.len());
    for e in estimates {
        bounds.push((e.worker_id, lambda_upper_bound(e.t_c, params)?));
    }
    let total: f64 = bounds.iter().map(|(_, b)| b).sum();
    let per_camera = (total / params.num_cameras.max(1) as f64).min(params.native_frame_rate);
    Ok(RateDecision {
        per_camera_rate: per_camera.max(0.0),
        per_worker_bounds: bounds,
        computed_at: now,
        no_capacity: estimates.is_empty(),
    })
}

/// Expected sojourn time `1 / (d_p / T_C - lambda)`.
pub fn mm1_expected_processing_time(t_c: f64, d_p: u32, lambda: f64) -> Result<f64, RateError> {
    if !(t_c > 0.0 && t_c.is_finite()) {
        return Err(RateError::BadAnalysisTime(t_c));
    }
    let mu = d_p as f64 / t_c;
    if lambda >= mu {
        return Err(RateError::Unstable { lambda, mu });
    }
    Ok(1.0 / (mu - lambda))
}

/// `T_C = max(T_I, T_O)` over whichever averages exist.
pub fn capacity_time(snapshot: &PerfSnapshot) -> Option<f64> {
    match (snapshot.inner, snapshot.outer) {
        (Some(i), Some(o)) => Some(i.max(o)),
        (Some(t), None) | (None, Some(t)) => Some(t),
        (None, None) => None,
    }
}

/// Estimate for a worker that just connected. Without records of its own it
/// borrows the largest `T_C` among its peers.
pub fn on_device_join(
    log: &PerfLog,
    joining: WorkerId,
    existing: &[CapacityEstimate],
    default_analysis_time: f64,
) -> CapacityEstimate {
    if let Some(t_c) = capacity_time(&log.snapshot(joining)) {
        return CapacityEstimate {
            worker_id: joining,
            t_c,
            provisional: false,
        };
    }
    let slowest = existing
        .iter()
        .filter(|e| e.worker_id != joining)
        .map(|e| e.t_c)
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))));
    match slowest {
        Some(t_c) => CapacityEstimate {
            worker_id: joining,
            t_c,
            provisional: true,
        },
        None => CapacityEstimate {
            worker_id: joining,
            t_c: default_analysis_time,
            provisional: true,
        },
    }
}

/// Removes the leaving worker's estimate. Returns false (and warns) when it
/// was not present.
pub fn on_device_leave(estimates: &mut Vec<CapacityEstimate>, leaving: WorkerId) -> bool {
    let before = estimates.len();
    estimates.retain(|e| e.worker_id != leaving);
    if estimates.len() == before {
        warn!("leave for unknown worker {leaving}");
        false
    } else {
        true
    }
}

/// Stateful wrapper run once per control period.
#[derive(Debug, Clone)]
pub struct RateController {
    params: SystemParams,
    estimates: BTreeMap<WorkerId, CapacityEstimate>,
    last: Option<RateDecision>,
}

impl RateController {
    pub fn new(params: SystemParams) -> Self {
        RateController {
            params,
            estimates: BTreeMap::new(),
            last: None,
        }
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn estimates(&self) -> Vec<CapacityEstimate> {
        self.estimates.values().copied().collect()
    }

    pub fn last_decision(&self) -> Option<&RateDecision> {
        self.last.as_ref()
    }

    pub fn join(&mut self, log: &PerfLog, worker: WorkerId) -> CapacityEstimate {
        let existing = self.estimates();
        let est = on_device_join(log, worker, &existing, self.params.default_analysis_time);
        self.estimates.insert(worker, est);
        est
    }

    pub fn leave(&mut self, worker: WorkerId) -> bool {
        let mut v = self.estimates();
        let removed = on_device_leave(&mut v, worker);
        self.estimates = v.into_iter().map(|e| (e.worker_id, e)).collect();
        removed
    }

    /// Refreshes estimates from the log (workers without fresh records keep
    /// their previous estimate) and decides the new per-camera rate.
    pub fn tick(&mut self, log: &PerfLog, now: f64) -> Result<RateDecision, RateError> {
        for est in self.estimates.values_mut() {
            if let Some(t_c) = capacity_time(&log.snapshot(est.worker_id)) {
                est.t_c = t_c;
                est.provisional = false;
            }
        }
        let estimates = self.estimates();
        let mut decision = compute_frame_rate(&estimates, &self.params, now)?;
        if !decision.no_capacity {
            decision.per_camera_rate = decision
                .per_camera_rate
                .max(MIN_CAMERA_RATE.min(self.params.native_frame_rate));
        }
        self.last = Some(decision.clone());
        Ok(decision)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PerfRecord, VideoSource};

    fn params(d_p: u32, t_f: f64, t_r: f64) -> SystemParams {
        SystemParams {
            degree_of_parallelism: d_p,
            frame_transfer_time: t_f,
            result_transfer_time: t_r,
            ..SystemParams::default()
        }
    }

    fn est(id: u32, t_c: f64) -> CapacityEstimate {
        CapacityEstimate {
            worker_id: WorkerId(id),
            t_c,
            provisional: false,
        }
    }

    #[test]
    fn bound_for_strong_outer_time() {
        let p = params(2, 0.00928, 0.002);
        let b = lambda_upper_bound(0.0827, &p).unwrap();
        let expected = 2.0 / 0.0827 - 1.0 / 0.17944;
        assert!((b - expected).abs() < 1e-12);
        assert!((b - 18.611).abs() < 1e-3);
    }

    #[test]
    fn bound_clamps_slow_worker_to_zero() {
        let p = params(2, 0.00928, 0.002);
        assert_eq!(lambda_upper_bound(10.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn bound_single_slot() {
        // L_D - 2 T_F - T_R = 0.18
        let p = params(1, 0.005, 0.01);
        let b = lambda_upper_bound(0.1, &p).unwrap();
        assert!((b - (10.0 - 1.0 / 0.18)).abs() < 1e-12);
        assert!((b - 4.444_444).abs() < 1e-6);
    }

    #[test]
    fn bound_rejects_exhausted_budget() {
        let p = params(2, 0.1, 0.01);
        assert!(matches!(
            lambda_upper_bound(0.05, &p),
            Err(RateError::NoBudget(_))
        ));
    }

    #[test]
    fn three_strong_workers_rate() {
        let p = params(2, 0.00928, 0.002);
        let d = compute_frame_rate(&[est(0, 0.0827), est(1, 0.0827), est(2, 0.0827)], &p, 1.0)
            .unwrap();
        let expected = 3.0 * (2.0 / 0.0827 - 1.0 / 0.17944) / 2.0;
        assert!((d.per_camera_rate - expected).abs() < 1e-12);
        assert!((d.per_camera_rate - 27.92).abs() < 0.01);
        assert_eq!(d.per_worker_bounds.len(), 3);
    }

    #[test]
    fn one_weak_worker_rate() {
        let p = params(2, 0.00928, 0.002);
        let d = compute_frame_rate(&[est(0, 0.110)], &p, 0.0).unwrap();
        let bound = 2.0 / 0.110 - 1.0 / 0.17944;
        assert!((d.per_worker_bounds[0].1 - bound).abs() < 1e-12);
        assert!((d.per_camera_rate - bound / 2.0).abs() < 1e-12);
        assert!((d.per_camera_rate - 6.30).abs() < 0.01);
    }

    #[test]
    fn all_zero_bounds_give_zero_rate() {
        let p = params(2, 0.00928, 0.002);
        let d = compute_frame_rate(&[est(0, 5.0), est(1, 9.0)], &p, 0.0).unwrap();
        assert_eq!(d.per_camera_rate, 0.0);
    }

    #[test]
    fn rate_is_capped_at_native() {
        let p = params(2, 0.00928, 0.002);
        let many: Vec<_> = (0..10).map(|i| est(i, 0.03)).collect();
        let d = compute_frame_rate(&many, &p, 0.0).unwrap();
        assert_eq!(d.per_camera_rate, p.native_frame_rate);
    }

    #[test]
    fn empty_estimates_flag_no_capacity() {
        let d = compute_frame_rate(&[], &SystemParams::default(), 0.0).unwrap();
        assert!(d.no_capacity);
        assert_eq!(d.per_camera_rate, 0.0);
    }

    #[test]
    fn mm1_examples() {
        assert!((mm1_expected_processing_time(0.1, 2, 10.0).unwrap() - 0.1).abs() < 1e-12);
        assert!((mm1_expected_processing_time(0.1, 2, 0.0).unwrap() - 0.05).abs() < 1e-12);
        assert!(mm1_expected_processing_time(0.1, 2, 19.999_999).unwrap() > 1e5);
        assert!(matches!(
            mm1_expected_processing_time(0.1, 2, 20.0),
            Err(RateError::Unstable { .. })
        ));
    }

    #[test]
    fn join_without_records_copies_slowest_peer() {
        let log = PerfLog::new(1.0);
        let e = on_device_join(&log, WorkerId(2), &[est(0, 0.083), est(1, 0.110)], 0.2);
        assert_eq!(e.t_c, 0.110);
        assert!(e.provisional);
    }

    #[test]
    fn join_with_records_uses_own_snapshot() {
        let mut log = PerfLog::new(1.0);
        for (s, t) in [(VideoSource::Inner, 0.03), (VideoSource::Outer, 0.08)] {
            log.append(PerfRecord {
                worker_id: WorkerId(2),
                source: s,
                analysis_time: t,
                queue_len: 0,
                recorded_at: 0.0,
            })
            .unwrap();
        }
        let e = on_device_join(&log, WorkerId(2), &[est(0, 0.2)], 0.11);
        assert_eq!(e.t_c, 0.08);
        assert!(!e.provisional);
    }

    #[test]
    fn first_device_uses_default() {
        let e = on_device_join(&PerfLog::new(1.0), WorkerId(0), &[], 0.110);
        assert_eq!(e.t_c, 0.110);
    }

    #[test]
    fn leave_removes_estimate() {
        let mut v = vec![est(0, 0.1), est(1, 0.1), est(2, 0.1)];
        assert!(on_device_leave(&mut v, WorkerId(1)));
        assert_eq!(
            v.iter().map(|e| e.worker_id).collect::<Vec<_>>(),
            vec![WorkerId(0), WorkerId(2)]
        );
        assert!(!on_device_leave(&mut v, WorkerId(9)));
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn leave_last_then_rejoin() {
        let p = SystemParams::default();
        let log = PerfLog::new(1.0);
        let mut ctl = RateController::new(p);
        ctl.join(&log, WorkerId(0));
        ctl.leave(WorkerId(0));
        let d = ctl.tick(&log, 1.0).unwrap();
        assert_eq!(d.per_camera_rate, 0.0);
        assert!(d.no_capacity);
        let e = ctl.join(&log, WorkerId(0));
        assert!(e.provisional);
        assert_eq!(e.t_c, p_default());
    }

    fn p_default() -> f64 {
        SystemParams::default().default_analysis_time
    }

    #[test]
    fn tick_applies_floor_for_slow_system() {
        let log = PerfLog::new(1.0);
        let mut ctl = RateController::new(SystemParams {
            default_analysis_time: 5.0,
            ..SystemParams::default()
        });
        ctl.join(&log, WorkerId(0));
        let d = ctl.tick(&log, 0.5).unwrap();
        assert_eq!(d.per_camera_rate, MIN_CAMERA_RATE);
    }
}
