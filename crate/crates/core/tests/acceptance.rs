//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evs::metrics::MetricsReport;
use evs::model::{SystemParams, VideoSource, WorkerId};
use evs::ratectl::{compute_frame_rate, mm1_expected_processing_time, CapacityEstimate};
use evs::scheduler::{generate_sequence, WorkerWeight};
use evs::sim::{run_scenario, ScenarioConfig};
use evs::wire::{self, Message};

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn scenario(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"));
    ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn run(name: &str) -> MetricsReport {
    run_scenario(&scenario(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn weights(ws: &[f64]) -> Vec<WorkerWeight> {
    ws.iter()
        .enumerate()
        .map(|(i, &w)| WorkerWeight::new(WorkerId(i as u32), w))
        .collect()
}

fn ids(seq: &[WorkerId]) -> Vec<u32> {
    seq.iter().map(|w| w.0).collect()
}

fn c1_golden_sequence() -> Outcome {
    let t = Instant::now();
    let seq = generate_sequence(&weights(&[2.0, 3.0, 4.0]), 9).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let got = ids(&seq);
    ensure(got == [2, 1, 0, 2, 1, 2, 0, 1, 2], format!("sequence {got:?}"))?;
    let counts: Vec<usize> = (0..3).map(|i| got.iter().filter(|&&w| w == i).count()).collect();
    ensure(counts == [2, 3, 4], format!("slot counts {counts:?}"))?;
    ensure(elapsed < Duration::from_millis(1), format!("took {elapsed:?}"))?;
    Ok(format!("{got:?}, counts {counts:?}, {elapsed:?}"))
}

fn c2_slot_bounds() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = Vec::new();
    for case in 0..1000 {
        let m = rng.random_range(1..=16usize);
        let n = rng.random_range(1..=200usize);
        // weights in (0, 100]
        let ws: Vec<f64> = (0..m).map(|_| 100.0 - rng.random_range(0.0..100.0)).collect();
        let total: f64 = ws.iter().sum();
        let seq = generate_sequence(&weights(&ws), n).map_err(|e| e.to_string())?;
        for (i, &w) in ws.iter().enumerate() {
            let s = seq.iter().filter(|x| x.0 == i as u32).count() as f64;
            let expected = n as f64 * w / total;
            let lo = (expected - 1.0).floor();
            let hi = (expected + 1.0).ceil();
            if !(lo <= s && s < hi) {
                violations.push(format!("case {case}: worker {i} s={s} expected {expected:.3}"));
            }
        }
    }
    let elapsed = t.elapsed();
    ensure(violations.is_empty(), format!("{} violations, first: {:?}", violations.len(), violations.first()))?;
    ensure(elapsed < Duration::from_secs(5), format!("took {elapsed:?}"))?;
    Ok(format!("1000 vectors, 0 violations, {elapsed:?}"))
}

fn c3_equal_weight_gap() -> Outcome {
    for m in 2..=8usize {
        let seq = generate_sequence(&weights(&vec![1.0; m]), m * 12).map_err(|e| e.to_string())?;
        for w in 0..m as u32 {
            let pos: Vec<usize> = seq.iter().enumerate().filter(|(_, x)| x.0 == w).map(|(i, _)| i).collect();
            for g in pos.windows(2) {
                ensure(g[1] - g[0] == m, format!("M={m}, worker {w}: gap {}", g[1] - g[0]))?;
            }
        }
    }
    Ok("M=2..8, every gap equals M".into())
}

fn c4_rate_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let params = SystemParams {
            degree_of_parallelism: rng.random_range(1..=4),
            latency_deadline: rng.random_range(0.1..1.0),
            ..SystemParams::default()
        };
        let estimates: Vec<CapacityEstimate> = (0..rng.random_range(1..=6u32))
            .map(|i| CapacityEstimate {
                worker_id: WorkerId(i),
                t_c: rng.random_range(0.01..0.5),
                provisional: false,
            })
            .collect();
        let d = compute_frame_rate(&estimates, &params, 0.0).map_err(|e| e.to_string())?;
        for (w, lambda) in &d.per_worker_bounds {
            if *lambda <= 0.0 {
                continue;
            }
            let t_c = estimates.iter().find(|e| e.worker_id == *w).unwrap().t_c;
            let lhs = mm1_expected_processing_time(t_c, params.degree_of_parallelism, *lambda)
                .map_err(|e| e.to_string())?
                + 2.0 * params.frame_transfer_time
                + params.result_transfer_time;
            let rel = (lhs - params.latency_deadline).abs() / params.latency_deadline;
            worst = worst.max(rel);
            checked += 1;
        }
    }
    ensure(checked > 0, "no positive bounds generated")?;
    ensure(worst <= 1e-9, format!("worst relative error {worst:e}"))?;
    Ok(format!("{checked} bounds, worst relative error {worst:.1e}"))
}

fn c5_mm1_oracle() -> Outcome {
    let t = Instant::now();
    let r = run("mm1-oracle");
    let elapsed = t.elapsed();
    let s = r.source(VideoSource::Outer);
    let mean = s.mean_worker_residence.ok_or("no samples")?;
    let expected = 1.0 / (10.0 - 7.0);
    let err = (mean - expected).abs() / expected;
    ensure(s.residence_samples >= 50_000, format!("only {} frames", s.residence_samples))?;
    ensure(err <= 0.10, format!("mean {mean:.4} s vs {expected:.4} s ({:.1}%)", err * 100.0))?;
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} frames, mean {:.4} s vs {expected:.4} s ({:.2}% off), {elapsed:.1?}",
        s.residence_samples,
        mean,
        err * 100.0
    ))
}

/// Per-camera rate the controller settles on for three strong devices whose
/// outer analysis time dominates.
fn closed_form_three_strong(cfg: &ScenarioConfig) -> f64 {
    let params = cfg.effective_params();
    let est: Vec<CapacityEstimate> = (0..3)
        .map(|i| CapacityEstimate { worker_id: WorkerId(i), t_c: 0.0827, provisional: false })
        .collect();
    compute_frame_rate(&est, &params, 0.0).unwrap().per_camera_rate
}

fn c6_throughput_band(r: &MetricsReport, target: f64) -> Outcome {
    ensure(r.fault.is_none(), "unexpected fault")?;
    ensure(r.duration >= 600.0, format!("ran {:.0} s", r.duration))?;
    let (lo, hi) = (target * 0.85, target * 1.15);
    let mut min: f64 = f64::INFINITY;
    let mut max: f64 = 0.0;
    for cam in &r.throughput {
        // 10-second windows after a 10-second warm-up
        for w in cam.per_second[10..].chunks_exact(10) {
            let fps = w.iter().sum::<u32>() as f64 / 10.0;
            min = min.min(fps);
            max = max.max(fps);
        }
    }
    ensure(min >= lo && max <= hi, format!("window fps in [{min:.1}, {max:.1}], band [{lo:.1}, {hi:.1}]"))?;
    Ok(format!("window fps in [{min:.1}, {max:.1}] within ±15% of {target:.2}"))
}

fn c7_deadlines(strong: &MetricsReport) -> Outcome {
    let weak = run("wp-we-we");
    let outer = strong.source(VideoSource::Outer).deadline_miss_ratio.ok_or("no outer frames")?;
    let inner = strong.source(VideoSource::Inner).deadline_miss_ratio.ok_or("no inner frames")?;
    let weak_outer = weak.source(VideoSource::Outer).deadline_miss_ratio.ok_or("no weak outer frames")?;
    ensure(1.0 - outer >= 0.90, format!("outer on time {:.3}", 1.0 - outer))?;
    ensure(1.0 - inner >= 0.99, format!("inner on time {:.3}", 1.0 - inner))?;
    ensure(weak_outer > outer, format!("wp-we-we outer miss {weak_outer:.4} not above {outer:.4}"))?;
    Ok(format!(
        "on time: outer {:.4}, inner {:.4}; outer miss wp-we-we {weak_outer:.4} > sp-se-se {outer:.4}",
        1.0 - outer,
        1.0 - inner
    ))
}

fn c8_overflow() -> Outcome {
    let ws = run("work-stealing-sp-se");
    let fault = ws.fault.as_ref().ok_or("work stealing never overflowed")?;
    ensure(fault.at < 300.0, format!("overflow only at {:.1} s", fault.at))?;
    let rc = run("ratecontrol-sp-se");
    ensure(rc.fault.is_none(), format!("rate-controlled run faulted: {:?}", rc.fault))?;
    ensure(rc.duration >= 1800.0, format!("rate-controlled run ended at {:.0} s", rc.duration))?;
    Ok(format!("work stealing overflowed at {:.1} s; rate control ran 1800 s clean", fault.at))
}

fn c9_step_response() -> Outcome {
    let cfg = scenario("join-leave-two-phase");
    let r = run_scenario(&cfg).map_err(|e| e.to_string())?;
    let period = cfg.params.control_period;
    let mut details = Vec::new();
    for ev in r.connectivity.iter().filter(|c| c.t > 0.0) {
        let before = r
            .rate_timeline
            .iter()
            .rfind(|p| p.t < ev.t)
            .ok_or("no rate before event")?
            .rate;
        let after = r
            .rate_timeline
            .iter()
            .find(|p| p.t >= ev.t && p.t <= ev.t + period + 1e-9)
            .ok_or(format!("no decision within {period} s of {:?} at {}", ev.kind, ev.t))?
            .rate;
        ensure(after != before, format!("{:?} at {}: rate unchanged at {before:.2}", ev.kind, ev.t))?;
        if format!("{:?}", ev.kind) == "Join" {
            ensure(after > before, format!("join at {}: {before:.2} -> {after:.2}", ev.t))?;
        }
        details.push(format!("{:?}@{}: {before:.1}->{after:.1}", ev.kind, ev.t));
    }
    ensure(details.len() == 4, format!("expected 4 events, saw {}", details.len()))?;
    Ok(details.join(", "))
}

fn c10_distribution() -> Outcome {
    let r = run("frame-distribution");
    let third = |w: u32, e: &evs::metrics::EpochShare| e.share(WorkerId(w));
    // stationary: after warm-up, before the interaction window
    let steady: Vec<_> = r
        .distribution
        .iter()
        .filter(|e| e.started_at >= 20.0 && e.started_at < 59.0 && e.total == 9)
        .collect();
    ensure(steady.len() >= 20, format!("only {} steady epochs", steady.len()))?;
    for e in &steady {
        let counts: Vec<u32> = (0..3).map(|w| *e.counts.get(&WorkerId(w)).unwrap_or(&0)).collect();
        ensure(counts == [2, 3, 4], format!("{} epoch {} at {:.1}: {counts:?}", e.source, e.epoch, e.started_at))?;
    }
    let during: Vec<f64> = r
        .distribution
        .iter()
        .filter(|e| e.started_at >= 62.0 && e.started_at < 120.0 && e.total == 9)
        .map(|e| third(1, e))
        .collect();
    ensure(!during.is_empty(), "no epochs during the interaction window")?;
    let mean_during = during.iter().sum::<f64>() / during.len() as f64;
    ensure(mean_during < 3.0 / 9.0, format!("worker 1 share during window {mean_during:.3}"))?;
    Ok(format!(
        "{} steady epochs at exactly 2/9, 3/9, 4/9; worker 1 share during slowdown {mean_during:.3} < {:.3}",
        steady.len(),
        3.0 / 9.0
    ))
}

fn c11_queue(r: &MetricsReport) -> Outcome {
    let worst = r.workers.iter().map(|w| w.mean_queue_len).fold(0.0, f64::max);
    ensure(!r.workers.is_empty(), "no workers")?;
    ensure(worst <= 1.0, format!("worst time-averaged queue {worst:.3}"))?;
    Ok(format!("worst time-averaged worker queue {worst:.3}"))
}

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    let source = if rng.random() { VideoSource::Inner } else { VideoSource::Outer };
    match rng.random_range(0..6) {
        0 => Message::Hello(wire::Hello {
            role: if rng.random() { wire::Role::Dashcam } else { wire::Role::Worker },
            source,
            worker_id: rng.random(),
            name: (0..rng.random_range(0..20)).map(|_| rng.random_range('a'..='z')).collect(),
        }),
        1 => Message::Frame(wire::FramePayload {
            frame_id: rng.random(),
            source,
            capture_ts_us: rng.random(),
            blob: (0..rng.random_range(0..2048)).map(|_| rng.random()).collect(),
        }),
        2 => Message::Result(wire::ResultPayload {
            frame_id: rng.random(),
            source,
            analysis_time_us: rng.random(),
            queue_len_after: rng.random(),
            flags: rng.random_range(0..4),
            detections: (0..rng.random_range(0..256)).map(|_| rng.random()).collect(),
        }),
        3 => Message::Rate(wire::RatePayload { per_camera_rate_millifps: rng.random() }),
        4 => Message::Bye,
        _ => Message::Ping,
    }
}

fn c12_wire() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..10_000 {
        let m = random_message(&mut rng);
        let bytes = wire::encode(&m);
        let (back, used) = wire::decode(&bytes).map_err(|e| format!("message {i}: {e}"))?;
        ensure(used == bytes.len(), format!("message {i}: consumed {used} of {}", bytes.len()))?;
        ensure(back == m, format!("message {i}: round trip mismatch"))?;
    }
    let golden = include_str!("golden/wire_vectors.txt");
    let mut n = 0;
    for line in golden.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
        let (name, hex) = line.split_once(char::is_whitespace).ok_or("bad golden line")?;
        let expected: Vec<u8> = (0..hex.trim().len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex.trim()[i..i + 2], 16).unwrap())
            .collect();
        let msg = golden_message(name).ok_or(format!("unknown golden vector {name}"))?;
        ensure(wire::encode(&msg) == expected, format!("golden {name} mismatch"))?;
        ensure(wire::decode(&expected).map(|(m, _)| m).ok() == Some(msg), format!("golden {name} decode"))?;
        n += 1;
    }
    ensure(n >= 6, format!("only {n} golden vectors"))?;
    Ok(format!("10000 round trips, {n} golden vectors bit-exact"))
}

fn golden_message(name: &str) -> Option<Message> {
    Some(match name {
        "rate-27920" => Message::Rate(wire::RatePayload { per_camera_rate_millifps: 27920 }),
        "ping" => Message::Ping,
        "bye" => Message::Bye,
        "frame-empty" => Message::Frame(wire::FramePayload {
            frame_id: 1,
            source: VideoSource::Outer,
            capture_ts_us: 2,
            blob: Vec::new(),
        }),
        "result-hazard" => Message::Result(wire::ResultPayload {
            frame_id: 7,
            source: VideoSource::Inner,
            analysis_time_us: 31_500,
            queue_len_after: 2,
            flags: wire::FLAG_ALARM,
            detections: b"hazard".to_vec(),
        }),
        "hello-worker" => Message::Hello(wire::Hello {
            role: wire::Role::Worker,
            source: VideoSource::Inner,
            worker_id: u32::MAX,
            name: "b".into(),
        }),
        _ => return None,
    })
}

fn c13_determinism() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut names: Vec<String> = std::fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for name in &names {
        let a = run(name).to_json();
        let b = run(name).to_json();
        ensure(a == b, format!("{name}: reports differ"))?;
    }
    Ok(format!("{} shipped scenarios byte-identical across two runs", names.len()))
}

fn main() {
    let t = Instant::now();
    let strong = run("sp-se-se");
    let target = closed_form_three_strong(&scenario("sp-se-se"));
    let criteria: Vec<(&str, Check)> = vec![
        ("golden sequence", Box::new(c1_golden_sequence)),
        ("slot-count bound", Box::new(c2_slot_bounds)),
        ("equal-weight gap", Box::new(c3_equal_weight_gap)),
        ("rate algebra", Box::new(c4_rate_algebra)),
        ("M/M/1 oracle", Box::new(c5_mm1_oracle)),
        ("throughput band", Box::new(|| c6_throughput_band(&strong, target))),
        ("deadline behavior", Box::new(|| c7_deadlines(&strong))),
        ("overflow reproduction", Box::new(c8_overflow)),
        ("step response", Box::new(c9_step_response)),
        ("frame distribution", Box::new(c10_distribution)),
        ("queue discipline", Box::new(|| c11_queue(&strong))),
        ("wire codec", Box::new(c12_wire)),
        ("determinism", Box::new(c13_determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed ({:.1?})",
        criteria.len() - failed,
        t.elapsed()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
