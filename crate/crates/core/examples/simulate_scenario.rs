//! Run a scenario file through the simulator and summarize the report.
//!
//!     cargo run --release --example simulate_scenario -- scenarios/sp-se-se.toml [seed]

use std::path::PathBuf;

use evs::model::VideoSource;
use evs::sim::{run_scenario_seeded, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "scenarios/sp-se-se.toml".into()));
    let cfg = ScenarioConfig::load(&path)?;
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(cfg.seed);
    let report = run_scenario_seeded(&cfg, seed)?;

    println!("{} (seed {seed}, {}, rate control {})", report.scenario, report.scheduler, report.rate_control);
    println!("simulated {:.1} s", report.duration);
    if let Some(f) = &report.fault {
        println!("FAULT: {:?} at {:.2} s with {} queued frames", f.kind, f.at, f.queue_len);
    }
    for t in &report.throughput {
        println!("camera {} ({}): {:.2} fps admitted", t.camera, t.source, t.mean_fps);
    }
    for s in VideoSource::ALL {
        let r = report.source(s);
        if r.samples == 0 {
            continue;
        }
        println!(
            "{s:>5}: {} frames, mean {:.1} ms, p99 {:.1} ms, miss ratio {:.4}, worker residence {:.1} ms",
            r.samples,
            r.mean_latency.unwrap_or(0.0) * 1e3,
            r.p99_latency.unwrap_or(0.0) * 1e3,
            r.deadline_miss_ratio.unwrap_or(0.0),
            r.mean_worker_residence.unwrap_or(0.0) * 1e3,
        );
    }
    for w in &report.workers {
        println!(
            "worker {}: dispatched {}, completed {}, mean queue {:.3}",
            w.worker, w.dispatched, w.completed, w.mean_queue_len
        );
    }
    if let Some(last) = report.rate_timeline.last() {
        println!("final decided rate {:.2} fps", last.rate);
    }
    println!("counters: {:?}", report.counters);
    Ok(())
}
