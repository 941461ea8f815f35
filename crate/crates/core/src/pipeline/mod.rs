//! Online engine: replay, per-object buffering, forecasting at lookahead
//! `delta_t`, detection on the observed and on the forecast slices, and
//! matching of the two cluster sets.
//!
//! Threaded layout: a producer thread replays the file into a bounded
//! topic; the ingest worker consumes it and sends slices over a second
//! queue to the detection worker. The single-threaded layout runs the same
//! stages inline.

mod engine;
mod metrics;
mod replay;
pub mod testing;

use std::sync::mpsc::sync_channel;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{cluster_matching, summarize, ClusterSet, EvalError, MatchOptions, MatchReport, MatchSummary, SimWeights, SpatialScope};
use crate::evolving::{sort_canonical, DetectError, DetectionParams, EvolvingCluster};
use crate::exec::Execution;
use crate::flp::{ConstantVelocity, FlpModel, GruPredictor, LocationPredictor};
use crate::geo::TimestampedPoint;
use crate::io::group_trajectories;
use crate::preprocess::{preprocess_all, PreprocessConfig, PreprocessError};

pub use engine::{DetectionOutput, DetectionStage, IngestCounters, IngestStage, SliceMsg};
pub use metrics::{ConsumerMetrics, Counters, MetricsRecorder};
pub use replay::{load_replay, replay_stream, spawn_producer, topic, Pacer, Replay, ReplaySpeed, StreamRecord, DEFAULT_TOPIC_CAPACITY};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("the gru predictor needs a model file")]
    MissingModel,
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("worker thread panicked")]
    Worker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    #[default]
    Gru,
    Cv,
    /// Looks the true future position up in the replayed file (test hook).
    Identity,
}

impl std::str::FromStr for PredictorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(PredictorKind::Gru),
            "cv" | "constant_velocity" | "constant-velocity" => Ok(PredictorKind::Cv),
            "identity" => Ok(PredictorKind::Identity),
            other => Err(format!("unknown predictor {other:?} (expected gru, cv or identity)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    /// Lookahead in seconds; a positive multiple of the grid spacing.
    pub delta_t: i64,
    pub detection: DetectionParams,
    pub weights: SimWeights,
    #[serde(default)]
    pub spatial: SpatialScope,
    pub predictor: PredictorKind,
    pub speed: ReplaySpeed,
    pub queue_capacity: usize,
    /// Event-time delay before a slice is closed. Defaults to the gap
    /// threshold, the smallest delay that makes every slice final.
    #[serde(default)]
    pub slice_lateness: Option<f64>,
    /// Run producer and consumers on separate threads.
    pub threaded: bool,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            preprocess: PreprocessConfig::default(),
            delta_t: 300,
            detection: DetectionParams::default(),
            weights: SimWeights::default(),
            spatial: SpatialScope::Lifetime,
            predictor: PredictorKind::Gru,
            speed: ReplaySpeed::Max,
            queue_capacity: DEFAULT_TOPIC_CAPACITY,
            slice_lateness: None,
            threaded: true,
            execution: Execution::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.preprocess.validate()?;
        self.detection.validate()?;
        self.weights.validate()?;
        let rate = self.preprocess.align_rate;
        if self.delta_t <= 0 || self.delta_t % rate != 0 {
            return Err(PipelineError::InvalidConfig(format!(
                "delta_t must be a positive multiple of align_rate ({rate}), got {}",
                self.delta_t
            )));
        }
        if self.queue_capacity == 0 {
            return Err(PipelineError::InvalidConfig("queue_capacity must be positive".into()));
        }
        if let Some(l) = self.slice_lateness {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(PipelineError::InvalidConfig(format!("slice_lateness must be non-negative, got {l}")));
            }
        }
        Ok(())
    }

    pub fn lateness(&self) -> f64 {
        self.slice_lateness.unwrap_or(self.preprocess.gap_dt)
    }
}

/// Builds the predictor selected in `cfg`. The identity hook needs the
/// replayed records to know the truth.
pub fn make_predictor(
    kind: PredictorKind,
    model: Option<FlpModel>,
    records: &[TimestampedPoint],
    preprocess: &PreprocessConfig,
) -> Result<(Arc<dyn LocationPredictor>, usize), PipelineError> {
    Ok(match kind {
        PredictorKind::Gru => {
            let model = model.ok_or(PipelineError::MissingModel)?;
            let history = model.window_len + 1;
            let p = GruPredictor::new(model).map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
            (Arc::new(p), history)
        }
        PredictorKind::Cv => (Arc::new(ConstantVelocity), 2),
        PredictorKind::Identity => {
            let (trajs, _) = group_trajectories(records.to_vec());
            let aligned = preprocess_all(&trajs, preprocess, Execution::default());
            (Arc::new(testing::TablePredictor::from_trajectories(&aligned)), 2)
        }
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub actual_clusters: Vec<EvolvingCluster>,
    pub predicted_clusters: Vec<EvolvingCluster>,
    pub report: MatchReport,
    pub summary: MatchSummary,
    pub metrics: ConsumerMetrics,
    pub ingest: IngestCounters,
    pub detection: DetectionOutput,
}

/// Runs the full online workflow over `records` (replay order) with an
/// explicit predictor.
pub fn run_with_predictor(
    cfg: &PipelineConfig,
    records: Vec<TimestampedPoint>,
    predictor: Arc<dyn LocationPredictor>,
    history_len: usize,
) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    let rate = cfg.preprocess.align_rate;
    let mut ingest = IngestStage::new(cfg.preprocess.clone(), cfg.delta_t, cfg.lateness(), history_len, predictor, cfg.execution);
    let mut detect = DetectionStage::new(cfg.detection.clone(), rate, cfg.execution)?;
    let counters = Counters::new();

    let (metrics, ingest_counters, detection) = if cfg.threaded {
        let (tx, rx) = topic(cfg.queue_capacity);
        let producer = spawn_producer(records, cfg.speed, tx, counters.clone());
        let (stx, srx) = sync_channel::<Vec<SliceMsg>>(1024);
        let detector = std::thread::spawn(move || -> Result<DetectionOutput, DetectError> {
            for batch in srx {
                for m in batch {
                    detect.handle(m)?;
                }
            }
            Ok(detect.finish())
        });
        let mut rec = MetricsRecorder::default();
        let mut detector_gone = false;
        for r in rx {
            let lag = counters.mark_consumed();
            rec.record(Instant::now(), lag);
            let mut out = Vec::new();
            ingest.push(r.point, &mut out);
            if !out.is_empty() && stx.send(out).is_err() {
                detector_gone = true;
                break;
            }
        }
        let mut out = Vec::new();
        ingest.finish(&mut out);
        if !detector_gone {
            let _ = stx.send(out);
        }
        drop(stx);
        producer.join().map_err(|_| PipelineError::Worker)?;
        let detection = detector.join().map_err(|_| PipelineError::Worker)??;
        (rec.finish(), ingest.counters(), detection)
    } else {
        let mut rec = MetricsRecorder::default();
        let mut out = Vec::new();
        for r in replay_stream(records, cfg.speed) {
            counters.mark_produced();
            let lag = counters.mark_consumed();
            rec.record(Instant::now(), lag);
            ingest.push(r.point, &mut out);
            for m in out.drain(..) {
                detect.handle(m)?;
            }
        }
        ingest.finish(&mut out);
        for m in out.drain(..) {
            detect.handle(m)?;
        }
        (rec.finish(), ingest.counters(), detect.finish())
    };

    let mut actual_clusters = detection.actual_clusters.clone();
    let mut predicted_clusters = detection.predicted_clusters.clone();
    sort_canonical(&mut actual_clusters);
    sort_canonical(&mut predicted_clusters);

    let window = match (detection.predicted_slices.keys().next(), detection.predicted_slices.keys().next_back()) {
        (Some(&a), Some(&b)) => Some((a, b)),
        _ => None,
    };
    let in_window: Vec<EvolvingCluster> = actual_clusters
        .iter()
        .filter(|c| window.is_some_and(|(a, b)| c.t_end >= a && c.t_start <= b))
        .cloned()
        .collect();
    let opts = MatchOptions { weights: cfg.weights, spatial: cfg.spatial, align_rate: rate, execution: cfg.execution };
    let report = cluster_matching(
        ClusterSet { clusters: &predicted_clusters, slices: &detection.predicted_slices },
        ClusterSet { clusters: &in_window, slices: &detection.actual_slices },
        &opts,
    )?;
    let summary = summarize(&report);
    Ok(RunOutput { actual_clusters, predicted_clusters, report, summary, metrics, ingest: ingest_counters, detection })
}

/// [`run_with_predictor`] with the predictor chosen by `cfg.predictor`.
pub fn run_online(cfg: &PipelineConfig, replay: Replay, model: Option<FlpModel>) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    let (predictor, history) = make_predictor(cfg.predictor, model, &replay.records, &cfg.preprocess)?;
    run_with_predictor(cfg, replay.records, predictor, history)
}
