//! Walk the frame-rate controller through devices joining and leaving, and
//! check its decision against the queueing model.
//!
//!     cargo run --example rate_control

use evs::model::{PerfLog, PerfRecord, SystemParams, VideoSource, WorkerId};
use evs::ratectl::{mm1_expected_processing_time, RateController};

fn feed(log: &mut PerfLog, worker: u32, t_outer: f64, t: f64) -> Result<(), evs::model::ModelError> {
    for (source, a) in [(VideoSource::Inner, t_outer * 0.45), (VideoSource::Outer, t_outer)] {
        log.append(PerfRecord { worker_id: WorkerId(worker), source, analysis_time: a, queue_len: 0, recorded_at: t })?;
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = SystemParams::default();
    params.validate()?;
    println!(
        "deadline {:.0} ms, frame transfer {:.2} ms, result transfer {:.3} ms, d_p {}",
        params.latency_deadline * 1e3,
        params.frame_transfer_time * 1e3,
        params.result_transfer_time * 1e3,
        params.degree_of_parallelism
    );

    let mut log = PerfLog::new(params.log_window);
    let mut ctl = RateController::new(params.clone());
    let speeds = [(0u32, 0.0827), (1, 0.0827), (2, 0.160)];

    let mut t = 0.0;
    for &(w, t_outer) in &speeds {
        // A newcomer starts with a provisional estimate until it reports.
        let est = ctl.join(&log, WorkerId(w));
        let d = ctl.tick(&log, t)?;
        println!("t={t:>4.1} join w{w} (provisional {}): {:.2} fps per camera", est.provisional, d.per_camera_rate);
        t += params.control_period;
        feed(&mut log, w, t_outer, t)?;
        for &(other, o) in speeds.iter().filter(|(o, _)| *o < w) {
            feed(&mut log, other, o, t)?;
        }
        let d = ctl.tick(&log, t)?;
        println!("t={t:>4.1} measured:               {:.2} fps per camera", d.per_camera_rate);
        t += params.control_period;
    }

    let d = ctl.last_decision().expect("ticked").clone();
    for (w, lambda) in &d.per_worker_bounds {
        let t_c = speeds.iter().find(|(id, _)| WorkerId(*id) == *w).unwrap().1;
        if *lambda > 0.0 {
            let spent = mm1_expected_processing_time(t_c, params.degree_of_parallelism, *lambda)?
                + 2.0 * params.frame_transfer_time
                + params.result_transfer_time;
            println!("  {w}: bound {lambda:.2} fps, expected latency at the bound {:.1} ms", spent * 1e3);
        } else {
            println!("  {w}: too slow to meet the deadline, bound 0");
        }
    }

    ctl.leave(WorkerId(1));
    log.remove_worker(WorkerId(1));
    let d = ctl.tick(&log, t)?;
    println!("t={t:>4.1} leave w1: {:.2} fps per camera", d.per_camera_rate);
    Ok(())
}
