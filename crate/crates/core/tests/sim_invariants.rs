use std::path::PathBuf;

use proptest::prelude::*;

use evs::metrics::MetricsReport;
use evs::sim::{run_scenario, run_scenario_seeded, ScenarioConfig};

fn scenario(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"));
    ScenarioConfig::load(&path).unwrap()
}

fn short(name: &str, duration: f64) -> ScenarioConfig {
    let mut cfg = scenario(name);
    cfg.duration = duration;
    cfg
}

fn conserved(r: &MetricsReport) -> bool {
    let c = &r.counters;
    c.transferred == c.resolved + c.in_flight_at_end + c.lost_on_leave + c.dropped_by_overflow
        && c.captured >= c.transferred
}

#[test]
fn every_shipped_scenario_conserves_frames() {
    for name in ["sp-se-se", "wp-se-we", "join-leave-random", "user-interaction", "work-stealing-sp-se", "thermal-drift"] {
        let r = run_scenario(&short(name, 120.0)).unwrap();
        assert!(conserved(&r), "{name}: {:?}", r.counters);
        assert!(r.counters.resolved > 0, "{name}");
    }
}

#[test]
fn zero_duration_is_empty() {
    let r = run_scenario(&short("sp-se-se", 0.0)).unwrap();
    assert_eq!(r.counters.transferred, 0);
    assert_eq!(r.counters.resolved, 0);
    assert!(r.fault.is_none());
}

#[test]
fn seeds_change_the_run_but_not_its_repeatability() {
    let cfg = short("sp-se-we", 60.0);
    let a = run_scenario_seeded(&cfg, 1).unwrap().to_json();
    assert_eq!(a, run_scenario_seeded(&cfg, 1).unwrap().to_json());
    assert_ne!(a, run_scenario_seeded(&cfg, 2).unwrap().to_json());
}

#[test]
fn latencies_are_causal() {
    let cfg = short("wp-we-we", 120.0);
    let r = run_scenario(&cfg).unwrap();
    let p = cfg.effective_params();
    for s in &r.sources {
        if s.samples == 0 {
            continue;
        }
        let min_cdf_edge = s.cdf.iter().find(|row| row[1] > 0.0).unwrap()[0];
        assert!(min_cdf_edge > 0.0);
        assert!(s.p50_latency.unwrap() <= s.p99_latency.unwrap());
        assert!(s.p99_latency.unwrap() <= s.max_latency.unwrap());
        // a frame at least crosses the camera link before anything else
        assert!(s.mean_latency.unwrap() > p.frame_transfer_time);
        assert!(s.cdf.windows(2).all(|w| w[0][1] <= w[1][1]));
    }
}

#[test]
fn admitted_rate_tracks_the_decided_rate() {
    let r = run_scenario(&short("sp-se-se", 120.0)).unwrap();
    let decided: Vec<f64> = r.rate_timeline.iter().filter(|p| p.t >= 30.0).map(|p| p.rate).collect();
    let decided = decided.iter().sum::<f64>() / decided.len() as f64;
    for t in &r.throughput {
        let admitted = t.per_second[30..120].iter().sum::<u32>() as f64 / 90.0;
        assert!((admitted - decided).abs() / decided < 0.05, "camera {}: {admitted} vs {decided}", t.camera);
    }
    let cap = scenario("sp-se-se").params.native_frame_rate;
    assert!(r.rate_timeline.iter().all(|p| p.rate >= 0.0 && p.rate <= cap));
}

#[test]
fn control_ticks_are_periodic() {
    let cfg = short("sp-se", 30.0);
    let r = run_scenario(&cfg).unwrap();
    let period = cfg.params.control_period;
    assert!((r.rate_timeline[0].t).abs() < 1e-12);
    for w in r.rate_timeline.windows(2) {
        assert!((w[1].t - w[0].t - period).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn conservation_holds_for_any_seed(seed in any::<u64>()) {
        let r = run_scenario_seeded(&short("join-leave-random", 90.0), seed).unwrap();
        prop_assert!(conserved(&r), "{:?}", r.counters);
    }
}
