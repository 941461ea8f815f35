//! Trained model bundle, persistence and the predictor interface.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gru::{forward_trace, GruParams, INPUT_SIZE, OUTPUT_SIZE};
use super::{denormalize_output, featurize, normalize_features, FlpError, NormStats};
use crate::geo::{TimestampedPoint, Trajectory};

pub const MODEL_FORMAT: &str = "comove-gru-v1";

/// Network weights plus the scaling fitted on its training set.
#[derive(Debug, Clone, PartialEq)]
pub struct FlpModel {
    pub params: GruParams,
    pub norm: NormStats,
    pub window_len: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    input_size: usize,
    hidden_size: usize,
    dense_size: usize,
    output_size: usize,
    window_len: usize,
    norm: NormStats,
    params: GruParams,
}

impl FlpModel {
    pub fn validate(&self) -> Result<(), FlpError> {
        self.params.validate()?;
        if !self.norm.is_finite() {
            return Err(FlpError::Model("normalisation stats must be finite with positive std".into()));
        }
        if self.window_len == 0 {
            return Err(FlpError::Model("window_len must be positive".into()));
        }
        Ok(())
    }

    /// Predicted displacement (degrees) after `horizon` seconds, from the
    /// last `window_len + 1` points of `history`.
    pub fn displacement(&self, history: &Trajectory, horizon: f64) -> Result<[f64; OUTPUT_SIZE], FlpError> {
        let seq = featurize(&history.tail(self.window_len + 1), horizon)?;
        let x = normalize_features(&seq, &self.norm);
        let y = forward_trace(&x, &self.params).output;
        Ok(denormalize_output(&y, &self.norm))
    }
}

pub fn save_model(model: &FlpModel, path: &Path) -> Result<(), FlpError> {
    model.validate()?;
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        input_size: INPUT_SIZE,
        hidden_size: model.params.hidden_size(),
        dense_size: model.params.dense_size(),
        output_size: OUTPUT_SIZE,
        window_len: model.window_len,
        norm: model.norm.clone(),
        params: model.params.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &file).map_err(|e| FlpError::Model(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FlpModel, FlpError> {
    let r = BufReader::new(File::open(path)?);
    let file: ModelFile = serde_json::from_reader(r).map_err(|e| FlpError::Model(e.to_string()))?;
    if file.format != MODEL_FORMAT {
        return Err(FlpError::Model(format!("unknown format {:?}, expected {MODEL_FORMAT:?}", file.format)));
    }
    if file.input_size != INPUT_SIZE || file.output_size != OUTPUT_SIZE {
        return Err(FlpError::Model(format!(
            "network is {}->{}, expected {INPUT_SIZE}->{OUTPUT_SIZE}",
            file.input_size, file.output_size
        )));
    }
    if file.params.hidden_size() != file.hidden_size || file.params.dense_size() != file.dense_size {
        return Err(FlpError::Model("declared layer sizes do not match the stored weights".into()));
    }
    let model = FlpModel { params: file.params, norm: file.norm, window_len: file.window_len };
    model.validate()?;
    Ok(model)
}

fn check_horizon(horizon: f64) -> Result<(), FlpError> {
    if horizon > 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(FlpError::InvalidConfig(format!("horizon must be positive, got {horizon}")))
    }
}

fn shifted(last: &TimestampedPoint, d_lon: f64, d_lat: f64, horizon: f64) -> TimestampedPoint {
    TimestampedPoint {
        object_id: last.object_id.clone(),
        lon: (last.lon + d_lon).clamp(-180.0, 180.0),
        lat: (last.lat + d_lat).clamp(-90.0, 90.0),
        t: last.t + horizon,
    }
}

/// Extrapolates the velocity of the last two points. A single point is
/// only moved in time.
pub fn constant_velocity_predict(traj: &Trajectory, horizon: f64) -> Result<TimestampedPoint, FlpError> {
    check_horizon(horizon)?;
    let pts = traj.points();
    let last = pts.last().ok_or(FlpError::InsufficientHistory)?;
    if pts.len() < 2 {
        return Ok(shifted(last, 0.0, 0.0, horizon));
    }
    let prev = &pts[pts.len() - 2];
    let k = horizon / (last.t - prev.t);
    Ok(shifted(last, (last.lon - prev.lon) * k, (last.lat - prev.lat) * k, horizon))
}

/// Position after `horizon` seconds. Histories shorter than
/// `window_len + 1` points use constant-velocity extrapolation.
pub fn predict_location(traj: &Trajectory, horizon: f64, model: &FlpModel) -> Result<TimestampedPoint, FlpError> {
    check_horizon(horizon)?;
    if traj.len() < model.window_len + 1 {
        return constant_velocity_predict(traj, horizon);
    }
    let [d_lon, d_lat] = model.displacement(traj, horizon)?;
    Ok(shifted(traj.last().expect("non-empty"), d_lon, d_lat, horizon))
}

/// Points at `times` on the straight segment from `from` to `to`.
pub fn interpolate_path(from: &TimestampedPoint, to: &TimestampedPoint, times: &[f64]) -> Vec<TimestampedPoint> {
    let span = to.t - from.t;
    times
        .iter()
        .map(|&t| {
            let w = if span > 0.0 { (t - from.t) / span } else { 1.0 };
            TimestampedPoint {
                object_id: from.object_id.clone(),
                lon: from.lon + w * (to.lon - from.lon),
                lat: from.lat + w * (to.lat - from.lat),
                t,
            }
        })
        .collect()
}

/// Anything that can forecast an object's position from its aligned history.
pub trait LocationPredictor: Send + Sync {
    fn name(&self) -> &str;

    fn predict(&self, history: &Trajectory, horizon: f64) -> Result<TimestampedPoint, FlpError>;

    /// Forecasts at each of the absolute `times` (ascending, after the last
    /// history point). Default: one forecast at the last time, linearly
    /// interpolated from the last known position.
    fn predict_path(&self, history: &Trajectory, times: &[f64]) -> Result<Vec<TimestampedPoint>, FlpError> {
        let (Some(last), Some(&t_end)) = (history.last(), times.last()) else {
            return if times.is_empty() { Ok(Vec::new()) } else { Err(FlpError::InsufficientHistory) };
        };
        let end = self.predict(history, t_end - last.t)?;
        Ok(interpolate_path(last, &end, times))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantVelocity;

impl LocationPredictor for ConstantVelocity {
    fn name(&self) -> &str {
        "cv"
    }

    fn predict(&self, history: &Trajectory, horizon: f64) -> Result<TimestampedPoint, FlpError> {
        constant_velocity_predict(history, horizon)
    }
}

#[derive(Debug, Clone)]
pub struct GruPredictor {
    pub model: FlpModel,
}

impl GruPredictor {
    pub fn new(model: FlpModel) -> Result<Self, FlpError> {
        model.validate()?;
        Ok(GruPredictor { model })
    }
}

impl LocationPredictor for GruPredictor {
    fn name(&self) -> &str {
        "gru"
    }

    fn predict(&self, history: &Trajectory, horizon: f64) -> Result<TimestampedPoint, FlpError> {
        predict_location(history, horizon, &self.model)
    }
}
