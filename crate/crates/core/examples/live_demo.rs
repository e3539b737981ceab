//! Everything in one process over loopback TCP: a coordinator with its local
//! worker, one remote worker and two dashcam emulators.
//!
//!     cargo run --release --example live_demo -- [seconds]

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use evs::live::{run_worker, start_coordinator, CoordinatorConfig, Stage, Trace, WorkerConfig, ASSIGN_ID};
use evs::model::{SystemParams, VideoSource, INNER_FRAME_BYTES, OUTER_FRAME_BYTES};
use evs::wire::dashcam::{dashcam_source_run, DashcamConfig, FrameSet};
use evs::worker::{AnalysisProfile, AnalyzerPlugin, StubAnalyzer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EVS_LOG_LEVEL", "info")).init();
    let secs: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(8.0);

    let listen: SocketAddr = "127.0.0.1:0".parse()?;
    let mut cfg = CoordinatorConfig::new(listen, SystemParams::default());
    cfg.duration = Some(Duration::from_secs_f64(secs));
    let trace = Trace::new();
    let coordinator = start_coordinator(cfg, Some(trace.clone()))?;
    let addr = coordinator.local_addr();
    println!("coordinator listening on {addr}");

    let stop = Arc::new(AtomicBool::new(false));
    let worker = {
        let stop = Arc::clone(&stop);
        let trace = trace.clone();
        thread::spawn(move || {
            let cfg = WorkerConfig { coordinator: addr, name: "phone-b".into(), requested_id: ASSIGN_ID, slots: 2 };
            let make = |slot: usize| -> Box<dyn AnalyzerPlugin> {
                Box::new(StubAnalyzer::new(AnalysisProfile::strong(), 100 + slot as u64, 0.01, true))
            };
            run_worker(&cfg, make, stop, Some(trace))
        })
    };

    let cams: Vec<_> = [(VideoSource::Inner, INNER_FRAME_BYTES), (VideoSource::Outer, OUTER_FRAME_BYTES)]
        .into_iter()
        .map(|(source, size)| {
            let stop = Arc::clone(&stop);
            thread::spawn(move || {
                let cfg = DashcamConfig::new(addr, source, FrameSet::synthetic(size, 0.05, 30, 1));
                dashcam_source_run(&cfg, stop)
            })
        })
        .collect();

    let report = coordinator.join();
    stop.store(true, Ordering::Relaxed);
    for c in cams {
        println!("dashcam: {:?}", c.join().expect("dashcam thread"));
    }
    println!("worker: {:?}", worker.join().expect("worker thread"));

    for s in VideoSource::ALL {
        let r = report.source(s);
        println!(
            "{s}: {} frames, mean latency {:.1} ms, miss ratio {:.3}",
            r.samples,
            r.mean_latency.unwrap_or(0.0) * 1e3,
            r.deadline_miss_ratio.unwrap_or(0.0)
        );
    }
    if let Some(p) = report.rate_timeline.last() {
        println!("last decided rate: {:.2} fps", p.rate);
    }
    println!(
        "pipelining: ingest||analyze {}, dispatch||analyze {}, collect||analyze {}",
        trace.stages_overlap(Stage::Ingest, Stage::Analyze),
        trace.stages_overlap(Stage::Dispatch, Stage::Analyze),
        trace.stages_overlap(Stage::Collect, Stage::Analyze),
    );
    Ok(())
}
