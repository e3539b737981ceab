//! Build per-worker weights from observed performance and print the frame
//! assignment sequence they produce.
//!
//!     cargo run --example sequence_generation -- [length]

use evs::model::{PerfLog, PerfRecord, VideoSource, WorkerId};
use evs::scheduler::{compute_weight, generate_sequence, WorkerWeight};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(18);

    // Three workers with fixed weights 2:3:4.
    let fixed: Vec<WorkerWeight> = [2.0, 3.0, 4.0]
        .iter()
        .enumerate()
        .map(|(i, &w)| WorkerWeight::new(WorkerId(i as u32), w))
        .collect();
    let seq = generate_sequence(&fixed, n)?;
    println!("weights 2:3:4 -> {}", render(&seq));

    // Weights derived from a performance log: a fast idle phone, a slower
    // one, and a fast one with a backlog.
    let mut log = PerfLog::new(1.0);
    let observed = [(0, 0.040, 0.080, 0), (1, 0.070, 0.140, 0), (2, 0.040, 0.080, 2)];
    for (w, inner, outer, q) in observed {
        for (k, (source, t)) in [(VideoSource::Inner, inner), (VideoSource::Outer, outer)].into_iter().enumerate() {
            log.append(PerfRecord {
                worker_id: WorkerId(w),
                source,
                analysis_time: t,
                queue_len: q,
                recorded_at: 0.1 * k as f64,
            })?;
        }
    }
    let derived = (0..3)
        .map(|w| {
            let s = log.snapshot(WorkerId(w));
            let weight = compute_weight(s.inner, s.outer, s.queue_len, 0.110)?;
            println!("worker {w}: T_I {:?}, T_O {:?}, queue {:?} -> weight {weight:.2}", s.inner, s.outer, s.queue_len);
            Ok(WorkerWeight::new(WorkerId(w), weight))
        })
        .collect::<Result<Vec<_>, evs::scheduler::SchedulerError>>()?;
    let seq = generate_sequence(&derived, n)?;
    println!("derived weights -> {}", render(&seq));
    for w in 0..3 {
        let c = seq.iter().filter(|x| x.0 == w).count();
        println!("  worker {w}: {c}/{n} slots");
    }
    Ok(())
}

fn render(seq: &[WorkerId]) -> String {
    seq.iter().map(|w| w.0.to_string()).collect::<Vec<_>>().join(" ")
}
