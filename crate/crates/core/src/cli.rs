//! Command-line entry points behind the `evs` binary.
//!
//! Exit codes: 0 success, 1 runtime/io failure, 2 configuration or usage
//! error, 3 simulation fault (buffer overflow halt).

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::live::{run_worker, start_coordinator, CoordinatorConfig, LocalWorker, WorkerConfig, ASSIGN_ID};
use crate::metrics::{Metric, MetricsReport};
use crate::model::{SystemParams, VideoSource};
use crate::sim::{run_scenario_seeded, ScenarioConfig, ScenarioError, SchedulerMode, SimError};
use crate::wire::dashcam::{dashcam_source_run, DashcamConfig, FrameSet};
use crate::worker::{AnalysisProfile, AnalyzerPlugin, DeviceClass, ExternalCommandAnalyzer, StubAnalyzer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FAULT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "evs", version, about = "Edge video scheduling: simulator and live mode")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchedulerArg {
    Deva,
    WorkStealing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Directory for report files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the run length, seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long, value_enum)]
    pub scheduler: Option<SchedulerArg>,
    #[arg(long, value_enum)]
    pub rate_control: Option<OnOff>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario through the discrete-event simulator.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Accept dashcams and workers over TCP and coordinate them.
    LiveCoordinator {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "0.0.0.0:7700")]
        listen: SocketAddr,
        /// Do not start the co-located worker 0.
        #[arg(long)]
        no_local_worker: bool,
    },
    /// Analyze frames for a coordinator.
    LiveWorker {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:7700")]
        connect: SocketAddr,
        #[arg(long, default_value = "worker")]
        name: String,
        #[arg(long, value_enum, default_value_t = ClassArg::Strong)]
        class: ClassArg,
        /// Concurrent analyses (d_p).
        #[arg(long, default_value_t = 2)]
        slots: usize,
        #[arg(long, default_value_t = 0.0)]
        alarm_probability: f64,
        /// External analyzer program; frame bytes on stdin, labels on stdout.
        #[arg(long)]
        analyzer_cmd: Option<String>,
    },
    /// Stream frames from an emulated dashcam.
    LiveDashcam {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:7700")]
        connect: SocketAddr,
        #[arg(long, value_enum)]
        source: SourceArg,
        /// Directory of frame files to loop over; synthetic frames otherwise.
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Synthetic frame size, bytes.
        #[arg(long)]
        frame_size: Option<u32>,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
    },
    /// Print one metric of a JSON report as CSV or gnuplot columns.
    Report {
        #[command(flatten)]
        common: Common,
        /// Report JSON written by `simulate` or `live-coordinator`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "miss_ratio")]
        metric: String,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
    },
    /// Check a scenario file without running it.
    ValidateConfig {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassArg {
    Strong,
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Inner,
    Outer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Columns,
}

fn load_scenario(common: &Common) -> Result<ScenarioConfig, ScenarioError> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| ScenarioError::Invalid("--config is required".into()))?;
    let mut cfg = ScenarioConfig::load(path)?;
    apply_overrides(&mut cfg, common);
    cfg.validate()?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut ScenarioConfig, common: &Common) {
    cfg.seed = common.seed;
    if let Some(d) = common.duration {
        cfg.duration = d;
    }
    if let Some(s) = common.scheduler {
        cfg.scheduler = match s {
            SchedulerArg::Deva => SchedulerMode::Deva,
            SchedulerArg::WorkStealing => SchedulerMode::WorkStealing,
        };
    }
    if let Some(r) = common.rate_control {
        cfg.rate_control = r == OnOff::On;
    }
}

fn write_report(report: &MetricsReport, out: Option<&Path>) -> Result<(), i32> {
    if let Some(dir) = out {
        match report.write_files(dir) {
            Ok(files) => {
                for f in files {
                    println!("wrote {}", f.display());
                }
            }
            Err(e) => {
                eprintln!("error: writing report to {}: {e}", dir.display());
                return Err(EXIT_RUNTIME);
            }
        }
    }
    Ok(())
}

fn summarize(report: &MetricsReport) {
    println!(
        "{}: seed {}, scheduler {}, rate control {}, {:.1} s simulated",
        report.scenario,
        report.seed,
        report.scheduler,
        if report.rate_control { "on" } else { "off" },
        report.duration
    );
    for t in &report.throughput {
        println!("  camera {} ({}): {:.2} fps", t.camera, t.source, t.mean_fps);
    }
    for s in VideoSource::ALL {
        let r = report.source(s);
        if r.samples > 0 {
            println!(
                "  {s}: {} frames, mean {:.1} ms, p99 {:.1} ms, deadline miss {:.2}%",
                r.samples,
                r.mean_latency.unwrap_or(0.0) * 1e3,
                r.p99_latency.unwrap_or(0.0) * 1e3,
                r.deadline_miss_ratio.unwrap_or(0.0) * 100.0
            );
        }
    }
}

fn simulate(common: &Common) -> i32 {
    let cfg = match load_scenario(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let report = match run_scenario_seeded(&cfg, cfg.seed) {
        Ok(r) => r,
        Err(SimError::Config(e)) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    summarize(&report);
    if let Err(code) = write_report(&report, common.out.as_deref()) {
        return code;
    }
    if let Some(f) = &report.fault {
        eprintln!(
            "fault: {:?} at t={:.3} s with {} frames queued; run halted",
            f.kind, f.at, f.queue_len
        );
        return EXIT_FAULT;
    }
    EXIT_OK
}

fn live_coordinator(common: &Common, listen: SocketAddr, no_local_worker: bool) -> i32 {
    let (params, profile, name, rate_control) = match &common.config {
        Some(_) => match load_scenario(common) {
            Ok(cfg) => {
                let profile = cfg.device_profiles().remove(0).analysis;
                (cfg.effective_params(), profile, cfg.name.clone(), cfg.rate_control)
            }
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
        },
        None => {
            let mut profile = AnalysisProfile::strong();
            profile.overhead = crate::sim::PRIMARY_OVERHEAD;
            (SystemParams::default(), profile, "live".to_string(), true)
        }
    };
    let mut cfg = CoordinatorConfig::new(listen, params);
    cfg.rate_control = common.rate_control.map_or(rate_control, |r| r == OnOff::On);
    cfg.duration = common.duration.map(Duration::from_secs_f64);
    cfg.name = name;
    cfg.seed = common.seed;
    cfg.local_worker = (!no_local_worker).then_some(LocalWorker {
        profile,
        alarm_probability: 0.0,
    });
    let coordinator = match start_coordinator(cfg, None) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    println!("listening on {}", coordinator.local_addr());
    let report = coordinator.join();
    summarize(&report);
    if let Err(code) = write_report(&report, common.out.as_deref()) {
        return code;
    }
    if report.fault.is_some() {
        eprintln!("fault: buffer overflow; coordinator halted");
        return EXIT_FAULT;
    }
    EXIT_OK
}

fn live_worker(
    common: &Common,
    connect: SocketAddr,
    name: String,
    class: ClassArg,
    slots: usize,
    alarm_probability: f64,
    analyzer_cmd: Option<String>,
) -> i32 {
    let profile = AnalysisProfile::for_class(match class {
        ClassArg::Strong => DeviceClass::Strong,
        ClassArg::Weak => DeviceClass::Weak,
    })
    .expect("preset class");
    let seed = common.seed;
    let cfg = WorkerConfig {
        coordinator: connect,
        name,
        requested_id: ASSIGN_ID,
        slots,
    };
    let make = move |slot: usize| -> Box<dyn AnalyzerPlugin> {
        match &analyzer_cmd {
            Some(cmd) => {
                let mut parts = cmd.split_whitespace().map(str::to_string);
                let program = parts.next().unwrap_or_default();
                Box::new(ExternalCommandAnalyzer::new(program, parts.collect()))
            }
            None => Box::new(StubAnalyzer::new(
                profile.clone(),
                seed.wrapping_add(slot as u64),
                alarm_probability,
                true,
            )),
        }
    };
    match run_worker(&cfg, make, Arc::new(AtomicBool::new(false)), None) {
        Ok(stats) => {
            println!("worker {} analyzed {} frames ({} errors)", stats.assigned_id, stats.analyzed, stats.errors);
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn live_dashcam(
    common: &Common,
    connect: SocketAddr,
    source: SourceArg,
    frames: Option<PathBuf>,
    frame_size: Option<u32>,
    fps: f64,
) -> i32 {
    let source = match source {
        SourceArg::Inner => VideoSource::Inner,
        SourceArg::Outer => VideoSource::Outer,
    };
    let set = match frames {
        Some(dir) => match FrameSet::from_dir(&dir) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
        },
        None => {
            let size = frame_size.unwrap_or(match source {
                VideoSource::Inner => crate::model::INNER_FRAME_BYTES,
                VideoSource::Outer => crate::model::OUTER_FRAME_BYTES,
            });
            FrameSet::synthetic(size, 0.05, 64, common.seed)
        }
    };
    if !(fps > 0.0) {
        eprintln!("error: --fps must be positive");
        return EXIT_CONFIG;
    }
    let mut cfg = DashcamConfig::new(connect, source, set);
    cfg.native_fps = fps;
    cfg.initial_rate = fps;
    cfg.max_captures = common.duration.map(|d| (d * fps).round() as u64);
    match dashcam_source_run(&cfg, Arc::new(AtomicBool::new(false))) {
        Ok(stats) => {
            println!(
                "captured {}, sent {}, rate updates {}, reconnects {}",
                stats.captured, stats.sent, stats.rate_updates, stats.reconnects
            );
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn report(input: &Path, metric: &str, format: ReportFormat) -> i32 {
    let Some(metric) = Metric::parse(metric) else {
        let names: Vec<_> = Metric::ALL.iter().map(|m| m.name()).collect();
        eprintln!("error: unknown metric {metric:?}; expected one of {}", names.join(", "));
        return EXIT_CONFIG;
    };
    let text = match std::fs::read_to_string(input) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: reading {}: {e}", input.display());
            return EXIT_CONFIG;
        }
    };
    let report = match MetricsReport::from_json(&text) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {} is not a report: {e}", input.display());
            return EXIT_CONFIG;
        }
    };
    match format {
        ReportFormat::Columns => print!("{}", report.columns(metric)),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            let _ = w.write_record(metric.header());
            for row in report.rows(metric) {
                let _ = w.write_record(&row);
            }
            if w.flush().is_err() {
                return EXIT_RUNTIME;
            }
        }
    }
    EXIT_OK
}

fn validate(common: &Common) -> i32 {
    match load_scenario(common) {
        Ok(cfg) => {
            let p = cfg.effective_params();
            println!(
                "{}: ok ({} cameras, {} devices, {:.0} s, processing budget {:.1} ms)",
                cfg.name,
                cfg.cameras.len(),
                cfg.devices.len(),
                cfg.duration,
                p.processing_budget() * 1e3
            );
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("EVS_LOG_LEVEL", "warn"))
        .format_timestamp_millis()
        .try_init();
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    init_logging();
    match cli.command {
        Command::Simulate { common } => simulate(&common),
        Command::LiveCoordinator {
            common,
            listen,
            no_local_worker,
        } => live_coordinator(&common, listen, no_local_worker),
        Command::LiveWorker {
            common,
            connect,
            name,
            class,
            slots,
            alarm_probability,
            analyzer_cmd,
        } => live_worker(&common, connect, name, class, slots, alarm_probability, analyzer_cmd),
        Command::LiveDashcam {
            common,
            connect,
            source,
            frames,
            frame_size,
            fps,
        } => live_dashcam(&common, connect, source, frames, frame_size, fps),
        Command::Report {
            input,
            metric,
            format,
            ..
        } => report(&input, &metric, format),
        Command::ValidateConfig { common } => validate(&common),
    }
}
