//! Compare two device configurations and export their reports as JSON and
//! CSV files.
//!
//!     cargo run --release --example metrics_report -- [out_dir]

use std::path::PathBuf;

use evs::metrics::Metric;
use evs::model::VideoSource;
use evs::sim::{run_scenario, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/evs-reports".into()));
    std::fs::create_dir_all(&out)?;
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");

    println!("{:<10} {:>8} {:>10} {:>10} {:>10}", "config", "fps", "outer p99", "miss", "max queue");
    for name in ["sp-se-se", "wp-we-we"] {
        let mut cfg = ScenarioConfig::load(&root.join(format!("{name}.toml")))?;
        cfg.duration = 120.0;
        let report = run_scenario(&cfg)?;
        let outer = report.source(VideoSource::Outer);
        let fps = report.throughput.iter().map(|t| t.mean_fps).sum::<f64>() / report.throughput.len() as f64;
        let queue = report.workers.iter().map(|w| w.mean_queue_len).fold(0.0, f64::max);
        println!(
            "{name:<10} {fps:>8.2} {:>8.1}ms {:>10.4} {queue:>10.3}",
            outer.p99_latency.unwrap_or(0.0) * 1e3,
            outer.deadline_miss_ratio.unwrap_or(0.0),
        );
        for f in report.write_files(&out)? {
            println!("  wrote {}", f.display());
        }
    }
    println!("metrics: {}", Metric::ALL.map(Metric::name).join(", "));
    Ok(())
}
