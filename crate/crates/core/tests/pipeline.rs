mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use comove::evolving::{detect_batch, Members};
use comove::geo::offset_degrees;
use comove::pipeline::testing::TablePredictor;
use comove::pipeline::{make_predictor, run_online, run_with_predictor, MetricsRecorder, PipelineConfig, PredictorKind, Replay, ReplaySpeed};
use comove::synth::generate;
use comove::{DetectionParams, Execution, Mode, TimeSlice, TimestampedPoint};

use common::*;

fn records_of(slices: &[TimeSlice]) -> Vec<TimestampedPoint> {
    slices
        .iter()
        .flat_map(|s| s.positions.iter().map(move |(id, &(lon, lat))| TimestampedPoint::new(id.clone(), lon, lat, s.t as f64).unwrap()))
        .collect()
}

fn config(delta_t: i64, c: usize, d: usize, predictor: PredictorKind) -> PipelineConfig {
    PipelineConfig {
        delta_t,
        detection: DetectionParams::new(c, 1500.0, d, Mode::Both).unwrap(),
        predictor,
        ..PipelineConfig::default()
    }
}

#[test]
fn scripted_forecast_reproduces_the_walkthrough() {
    let slices = walkthrough_slices();
    let records = records_of(&slices[..3]);
    let cfg = config(180, 3, 2, PredictorKind::Identity);
    let predictor = Arc::new(TablePredictor::from_slices(&slices));
    let out = run_with_predictor(&cfg, records, predictor, 2).unwrap();
    assert_eq!(out.detection.predicted_slices.len(), 6);
    for s in &slices {
        assert_eq!(&out.detection.predicted_slices[&s.t], s, "predicted slice at {}", s.t);
    }
    assert_eq!(out.predicted_clusters, walkthrough_derived());
    assert_eq!(out.detection.actual_slices.len(), 3);
}

/// Three objects 300 m apart steaming east, one fix every 20 s.
fn lockstep(ids: &[&str], minutes: usize) -> Vec<TimestampedPoint> {
    let mut pts = Vec::new();
    for k in 0..minutes * 3 {
        let t = k as f64 * 20.0;
        for (i, id) in ids.iter().enumerate() {
            let (dlon, dlat) = offset_degrees(37.0, 5.0 * t, 300.0 * i as f64);
            pts.push(TimestampedPoint::new(*id, 24.0 + dlon, 37.0 + dlat, t).unwrap());
        }
    }
    pts
}

#[test]
fn lockstep_fleet_is_one_cluster_in_both_streams() {
    let cfg = config(300, 3, 3, PredictorKind::Cv);
    let out = run_online(&cfg, Replay::from_points(lockstep(&["a", "b", "c"], 30), Default::default()), None).unwrap();
    let abc = Members::new(["a", "b", "c"]);
    assert_eq!(out.actual_clusters.len(), 2);
    for c in &out.actual_clusters {
        assert_eq!(c.members, abc);
        assert_eq!((c.t_start, c.t_end), (0, 29 * 60));
    }
    assert!(out.predicted_clusters.iter().all(|c| c.members == abc));
    assert_eq!(out.report.pairs.len(), out.predicted_clusters.len());
    for p in &out.report.pairs {
        assert_eq!(p.predicted.tp, p.actual.tp);
        assert!(p.sim_star > 0.9, "{p:?}");
    }
}

#[test]
fn single_object_yields_nothing() {
    let cfg = config(300, 2, 2, PredictorKind::Cv);
    let out = run_online(&cfg, Replay::from_points(lockstep(&["a"], 20), Default::default()), None).unwrap();
    assert!(out.actual_clusters.is_empty() && out.predicted_clusters.is_empty());
    assert!(out.report.pairs.is_empty() && out.report.unmatched_predicted.is_empty());
    assert_eq!(out.ingest.records, 60);
}

fn convoy_records(seed: u64) -> Vec<TimestampedPoint> {
    let mut s = convoy_scenario(seed);
    s.noise_sigma = 0.0;
    generate(&s).unwrap().points
}

#[test]
fn identity_forecast_matches_perfectly() {
    let mut cfg = config(300, 3, 3, PredictorKind::Identity);
    cfg.threaded = false;
    let out = run_online(&cfg, Replay::from_points(convoy_records(3), Default::default()), None).unwrap();
    assert!(!out.report.pairs.is_empty());
    let median = out.summary.sim_star.as_ref().unwrap().median;
    assert_eq!(median, 1.0);
}

#[test]
fn streaming_slices_equal_batch_alignment() {
    let records = convoy_records(4);
    let cfg = config(300, 3, 3, PredictorKind::Cv);
    let batch = aligned_slices(records.clone(), &cfg.preprocess);
    let out = run_online(&cfg, Replay::from_points(records, Default::default()), None).unwrap();
    assert_eq!(out.detection.actual_slices, batch);
    let v: Vec<TimeSlice> = batch.values().cloned().collect();
    let mut expect = detect_batch(&v, &cfg.detection, 60, Execution::Sequential).unwrap();
    expect.sort();
    assert_eq!(out.actual_clusters, expect);
}

#[test]
fn output_independent_of_layout_and_pace() {
    let records = convoy_records(5);
    let cfg = config(300, 3, 3, PredictorKind::Cv);
    let base = run_online(&cfg, Replay::from_points(records.clone(), Default::default()), None).unwrap();
    for (threaded, exec) in [(false, Execution::Sequential), (true, Execution::Sequential), (false, Execution::Parallel)] {
        let c = PipelineConfig { threaded, execution: exec, ..cfg.clone() };
        let o = run_online(&c, Replay::from_points(records.clone(), Default::default()), None).unwrap();
        assert_eq!(o.actual_clusters, base.actual_clusters);
        assert_eq!(o.predicted_clusters, base.predicted_clusters);
        assert_eq!(o.report, base.report);
    }
    // first ten minutes at 6000x take about 0.1 s
    let head: Vec<_> = records.iter().filter(|p| p.t < 600.0).cloned().collect();
    let fast = run_online(&cfg, Replay::from_points(head.clone(), Default::default()), None).unwrap();
    let paced = PipelineConfig { speed: ReplaySpeed::Multiplier(6000.0), ..cfg.clone() };
    let slow = run_online(&paced, Replay::from_points(head, Default::default()), None).unwrap();
    assert_eq!(fast.predicted_clusters, slow.predicted_clusters);
    assert_eq!(fast.detection.predicted_slices, slow.detection.predicted_slices);
}

#[test]
fn paced_replay_follows_data_time() {
    // one minute of data at 60x
    let records: Vec<_> = lockstep(&["a", "b", "c"], 2).into_iter().filter(|p| p.t <= 60.0).collect();
    let cfg = PipelineConfig { speed: ReplaySpeed::Multiplier(60.0), ..config(60, 3, 2, PredictorKind::Cv) };
    let t0 = Instant::now();
    let out = run_online(&cfg, Replay::from_points(records, Default::default()), None).unwrap();
    let wall = t0.elapsed().as_secs_f64();
    assert!((0.8..=1.2).contains(&out.metrics.elapsed_s), "consumer span {}", out.metrics.elapsed_s);
    assert!(wall < 2.0);
    assert_eq!(out.metrics.final_lag, 0);
    assert!(out.metrics.record_lag.median <= 1.0);
}

#[test]
fn max_speed_drains_the_topic() {
    let records = convoy_records(6);
    let n = records.len() as u64;
    let cfg = config(300, 3, 3, PredictorKind::Cv);
    let out = run_online(&cfg, Replay::from_points(records, Default::default()), None).unwrap();
    assert_eq!(out.metrics.records, n);
    assert_eq!(out.metrics.final_lag, 0);
    assert_eq!(out.metrics.window_counts.iter().sum::<u64>(), n);
}

#[test]
fn recorder_windows_and_rates() {
    let mut rec = MetricsRecorder::new(Duration::from_secs(1));
    let start = Instant::now();
    // a burst of 100 queued records consumed over half a second, then 10 more
    for i in 0..100u64 {
        rec.record(start + Duration::from_millis(5 * i), 99 - i);
    }
    for i in 0..10u64 {
        rec.record(start + Duration::from_millis(1000 + 50 * i), 0);
    }
    let m = rec.finish();
    assert_eq!(m.records, 110);
    assert_eq!(m.window_counts, vec![100, 10]);
    assert_eq!(m.final_lag, 0);
    assert_eq!(m.record_lag.max, 99.0);
    assert!((m.elapsed_s - 1.45).abs() < 1e-9);
    assert!((m.overall_rate - 110.0 / 1.45).abs() < 1e-6);
    // second window covered 0.45 s
    assert!((m.consumption_rate.max - 100.0).abs() < 1e-9);
    assert!((m.consumption_rate.min - 10.0 / 0.45).abs() < 1e-6);
}

#[test]
fn gru_needs_a_model_and_cv_needs_two_points() {
    let cfg = config(300, 3, 3, PredictorKind::Gru);
    assert!(run_online(&cfg, Replay::from_points(lockstep(&["a"], 2), Default::default()), None).is_err());
    let (p, history) = make_predictor(PredictorKind::Cv, None, &[], &cfg.preprocess).unwrap();
    assert_eq!(p.name(), "cv");
    assert_eq!(history, 2);
    let bad = PipelineConfig { delta_t: 90, ..config(300, 3, 3, PredictorKind::Cv) };
    assert!(bad.validate().is_err());
}
