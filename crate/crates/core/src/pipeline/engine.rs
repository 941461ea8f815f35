//! The two consumer stages.
//!
//! [`IngestStage`] turns raw records into aligned timeslices, closes a slice
//! once no later record can still change it, and forecasts every object of
//! the closed slice. [`DetectionStage`] owns one detector per stream.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::Serialize;

use crate::evaluation::SliceMap;
use crate::evolving::{DetectError, DetectionParams, EvolvingCluster, EvolvingClusters, TimeSlice};
use crate::exec::Execution;
use crate::flp::LocationPredictor;
use crate::geo::{ObjectId, TimestampedPoint, Trajectory};
use crate::preprocess::{PreprocessConfig, StreamingPreprocessor};

#[derive(Debug, Clone, PartialEq)]
pub enum SliceMsg {
    Actual(TimeSlice),
    Predicted(TimeSlice),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestCounters {
    pub records: u64,
    pub aligned_points: u64,
    pub actual_slices: u64,
    pub predicted_slices: u64,
    pub forecasts: u64,
    pub failed_forecasts: u64,
}

struct ObjectState {
    pre: StreamingPreprocessor,
    segment: u64,
    buf: VecDeque<(u64, TimestampedPoint)>,
}

pub struct IngestStage {
    cfg: PreprocessConfig,
    delta_t: i64,
    lateness: f64,
    history_len: usize,
    predictor: Arc<dyn LocationPredictor>,
    exec: Execution,
    objects: BTreeMap<ObjectId, ObjectState>,
    pending: BTreeMap<i64, TimeSlice>,
    watermark: f64,
    predicted_until: Option<i64>,
    counters: IngestCounters,
}

impl IngestStage {
    /// `history_len` aligned points per object are kept for forecasting.
    pub fn new(
        cfg: PreprocessConfig,
        delta_t: i64,
        lateness: f64,
        history_len: usize,
        predictor: Arc<dyn LocationPredictor>,
        exec: Execution,
    ) -> Self {
        IngestStage {
            cfg,
            delta_t,
            lateness,
            history_len: history_len.max(2),
            predictor,
            exec,
            objects: BTreeMap::new(),
            pending: BTreeMap::new(),
            watermark: f64::NEG_INFINITY,
            predicted_until: None,
            counters: IngestCounters::default(),
        }
    }

    pub fn counters(&self) -> IngestCounters {
        self.counters
    }

    pub fn push(&mut self, p: TimestampedPoint, out: &mut Vec<SliceMsg>) {
        self.counters.records += 1;
        self.watermark = self.watermark.max(p.t);
        let cfg = &self.cfg;
        let st = self.objects.entry(p.object_id.clone()).or_insert_with(|| ObjectState {
            pre: StreamingPreprocessor::new(cfg.clone()),
            segment: 0,
            buf: VecDeque::new(),
        });
        let (aligned, new_segment) = st.pre.push(p);
        if new_segment {
            st.segment += 1;
        }
        for q in aligned {
            let t = q.t as i64;
            self.pending.entry(t).or_insert_with(|| TimeSlice::new(t)).insert(q.object_id.clone(), q.lon, q.lat);
            st.buf.push_back((st.segment, q));
            self.counters.aligned_points += 1;
        }
        // A later record of any object is at least `watermark`, so it can only
        // add a point at T if it joins a segment whose last fix was within
        // `lateness` of it.
        while let Some((&t, _)) = self.pending.first_key_value() {
            if self.watermark > t as f64 + self.lateness {
                self.close(t, out);
            } else {
                break;
            }
        }
    }

    pub fn finish(&mut self, out: &mut Vec<SliceMsg>) {
        while let Some((&t, _)) = self.pending.first_key_value() {
            self.close(t, out);
        }
    }

    fn history_at(&self, id: &ObjectId, t: f64) -> Option<Trajectory> {
        let st = self.objects.get(id)?;
        let end = st.buf.iter().rposition(|(_, q)| q.t <= t)?;
        let seg = st.buf[end].0;
        let mut pts: Vec<TimestampedPoint> = Vec::with_capacity(self.history_len);
        for (s, q) in st.buf.range(..=end).rev() {
            if *s != seg || pts.len() == self.history_len {
                break;
            }
            pts.push(q.clone());
        }
        pts.reverse();
        Trajectory::new(id.clone(), pts).ok()
    }

    fn close(&mut self, t: i64, out: &mut Vec<SliceMsg>) {
        let slice = self.pending.remove(&t).expect("pending slice");
        let rate = self.cfg.align_rate;
        out.push(SliceMsg::Actual(slice.clone()));
        self.counters.actual_slices += 1;

        let from = match self.predicted_until {
            Some(u) if u >= t => u + rate,
            _ => {
                // nothing forecast for this slice: the predicted run sees the
                // observed positions
                out.push(SliceMsg::Predicted(slice.clone()));
                self.counters.predicted_slices += 1;
                t + rate
            }
        };
        let until = t + self.delta_t;
        if from <= until {
            let times: Vec<f64> = (0..).map(|k| from + k * rate).take_while(|&x| x <= until).map(|x| x as f64).collect();
            let histories: Vec<Trajectory> =
                slice.positions.keys().filter_map(|id| self.history_at(id, t as f64)).collect();
            let predictor = &self.predictor;
            let forecasts = self.exec.map(&histories, |h| predictor.predict_path(h, &times));
            let mut predicted: BTreeMap<i64, TimeSlice> = BTreeMap::new();
            for f in forecasts {
                match f {
                    Ok(points) => {
                        self.counters.forecasts += 1;
                        for q in points {
                            let tq = q.t as i64;
                            if tq > t && tq <= until && q.t.fract() == 0.0 {
                                predicted.entry(tq).or_insert_with(|| TimeSlice::new(tq)).insert(q.object_id, q.lon, q.lat);
                            }
                        }
                    }
                    Err(e) => {
                        log::debug!("forecast at t={t} failed: {e}");
                        self.counters.failed_forecasts += 1;
                    }
                }
            }
            for (_, s) in predicted {
                out.push(SliceMsg::Predicted(s));
                self.counters.predicted_slices += 1;
            }
            self.predicted_until = Some(until);
        }
        self.trim(t as f64);
    }

    fn trim(&mut self, t: f64) {
        let keep = self.history_len;
        for st in self.objects.values_mut() {
            let closed = st.buf.iter().take_while(|(_, q)| q.t <= t).count();
            for _ in keep..closed {
                st.buf.pop_front();
            }
        }
    }
}

/// Clusters of both runs plus the slices they were found in.
#[derive(Debug, Clone, Default)]
pub struct DetectionOutput {
    pub actual_clusters: Vec<EvolvingCluster>,
    pub predicted_clusters: Vec<EvolvingCluster>,
    pub actual_slices: SliceMap,
    pub predicted_slices: SliceMap,
}

pub struct DetectionStage {
    actual: EvolvingClusters,
    predicted: EvolvingClusters,
    out: DetectionOutput,
}

impl DetectionStage {
    pub fn new(params: DetectionParams, align_rate: i64, exec: Execution) -> Result<Self, DetectError> {
        Ok(DetectionStage {
            actual: EvolvingClusters::new(params.clone(), align_rate)?.with_execution(exec),
            predicted: EvolvingClusters::new(params, align_rate)?.with_execution(exec),
            out: DetectionOutput::default(),
        })
    }

    pub fn handle(&mut self, msg: SliceMsg) -> Result<(), DetectError> {
        match msg {
            SliceMsg::Actual(s) => {
                let found = self.actual.step(&s)?;
                self.out.actual_clusters.extend(found);
                self.out.actual_slices.insert(s.t, s);
            }
            SliceMsg::Predicted(s) => {
                let found = self.predicted.step(&s)?;
                self.out.predicted_clusters.extend(found);
                self.out.predicted_slices.insert(s.t, s);
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> DetectionOutput {
        self.out.actual_clusters.extend(self.actual.flush());
        self.out.predicted_clusters.extend(self.predicted.flush());
        self.out
    }
}
