//! Future location prediction.
//!
//! An object's recent aligned history becomes a sequence of per-step
//! displacements (each tagged with the prediction horizon). A GRU consumes
//! the sequence and a small head maps its final state to the displacement
//! expected over the horizon, which is added to the last known position.
//! A constant-velocity extrapolator serves as baseline and as fallback for
//! short histories.

mod gru;
mod model;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::geo::Trajectory;

pub use gru::{forward_normalized, gru_cell_step, GruParams, Matrix, BLOCK_NAMES, INPUT_SIZE, OUTPUT_SIZE};
pub use model::{
    constant_velocity_predict, interpolate_path, load_model, predict_location, save_model, ConstantVelocity, FlpModel,
    GruPredictor, LocationPredictor, MODEL_FORMAT,
};
pub use train::{build_dataset, loss_and_gradients, train_bptt, Adam, DatasetSpec, TrainOutcome, TrainingSample};

#[derive(Debug, Error)]
pub enum FlpError {
    #[error("insufficient history")]
    InsufficientHistory,
    #[error("configuration error: {0}")]
    Dimension(String),
    #[error("invalid predictor config: {0}")]
    InvalidConfig(String),
    #[error("empty training dataset")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("model file: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One step of model input: displacement between consecutive aligned
/// points, their time difference and the prediction horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub d_lon: f64,
    pub d_lat: f64,
    pub d_t: f64,
    pub horizon: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; INPUT_SIZE] {
        [self.d_lon, self.d_lat, self.d_t, self.horizon]
    }
}

/// One feature vector per consecutive pair of points.
pub fn featurize(traj: &Trajectory, horizon: f64) -> Result<Vec<FeatureVector>, FlpError> {
    if traj.len() < 2 {
        return Err(FlpError::InsufficientHistory);
    }
    Ok(traj
        .points()
        .windows(2)
        .map(|w| FeatureVector { d_lon: w[1].lon - w[0].lon, d_lat: w[1].lat - w[0].lat, d_t: w[1].t - w[0].t, horizon })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub hidden_size: usize,
    pub dense_size: usize,
    /// Feature vectors fed to the network per prediction (history points
    /// needed: `window_len + 1`).
    pub window_len: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            hidden_size: 150,
            dense_size: 50,
            window_len: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            epochs: 30,
            batch_size: 32,
            rng_seed: 42,
            execution: Execution::default(),
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<(), FlpError> {
        let bad = |m: String| Err(FlpError::InvalidConfig(m));
        if self.hidden_size == 0 || self.dense_size == 0 || self.window_len == 0 || self.batch_size == 0 {
            return bad("hidden_size, dense_size, window_len and batch_size must be positive".into());
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad(format!("betas must lie in (0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.eps_adam > 0.0) {
            return bad(format!("eps_adam must be positive, got {}", self.eps_adam));
        }
        Ok(())
    }
}

/// Per-feature affine scaling fitted on a training set.
///
/// A feature whose training values are all equal is centred but not
/// scaled (its std is stored as 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input_mean: [f64; INPUT_SIZE],
    pub input_std: [f64; INPUT_SIZE],
    pub output_mean: [f64; OUTPUT_SIZE],
    pub output_std: [f64; OUTPUT_SIZE],
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats {
            input_mean: [0.0; INPUT_SIZE],
            input_std: [1.0; INPUT_SIZE],
            output_mean: [0.0; OUTPUT_SIZE],
            output_std: [1.0; OUTPUT_SIZE],
        }
    }

    pub fn fit(samples: &[TrainingSample]) -> Result<Self, FlpError> {
        if samples.is_empty() {
            return Err(FlpError::EmptyDataset);
        }
        let inputs: Vec<[f64; INPUT_SIZE]> = samples.iter().flat_map(|s| s.seq.iter().map(|f| f.as_array())).collect();
        let targets: Vec<[f64; OUTPUT_SIZE]> = samples.iter().map(|s| s.target).collect();
        let (input_mean, input_std) = mean_std(&inputs);
        let (output_mean, output_std) = mean_std(&targets);
        Ok(NormStats { input_mean, input_std, output_mean, output_std })
    }

    pub fn is_finite(&self) -> bool {
        self.input_mean.iter().chain(&self.input_std).chain(&self.output_mean).chain(&self.output_std).all(|v| v.is_finite())
            && self.input_std.iter().chain(&self.output_std).all(|v| *v > 0.0)
    }

    pub fn normalize_target(&self, y: &[f64; OUTPUT_SIZE]) -> [f64; OUTPUT_SIZE] {
        std::array::from_fn(|j| (y[j] - self.output_mean[j]) / self.output_std[j])
    }
}

fn mean_std<const N: usize>(rows: &[[f64; N]]) -> ([f64; N], [f64; N]) {
    let n = rows.len() as f64;
    let mut mean = [0.0; N];
    for r in rows {
        for j in 0..N {
            mean[j] += r[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; N];
    for r in rows {
        for j in 0..N {
            var[j] += (r[j] - mean[j]).powi(2);
        }
    }
    let std = std::array::from_fn(|j| {
        let s = (var[j] / n).sqrt();
        // relative guard: spread below rounding noise counts as constant
        if s > 1e-12 * mean[j].abs().max(1e-300) {
            s
        } else {
            1.0
        }
    });
    (mean, std)
}

pub fn normalize_features(seq: &[FeatureVector], stats: &NormStats) -> Vec<[f64; INPUT_SIZE]> {
    seq.iter()
        .map(|f| {
            let a = f.as_array();
            std::array::from_fn(|j| (a[j] - stats.input_mean[j]) / stats.input_std[j])
        })
        .collect()
}

pub fn denormalize_features(seq: &[[f64; INPUT_SIZE]], stats: &NormStats) -> Vec<FeatureVector> {
    seq.iter()
        .map(|a| {
            let v: [f64; INPUT_SIZE] = std::array::from_fn(|j| a[j] * stats.input_std[j] + stats.input_mean[j]);
            FeatureVector { d_lon: v[0], d_lat: v[1], d_t: v[2], horizon: v[3] }
        })
        .collect()
}

pub fn denormalize_output(y: &[f64; OUTPUT_SIZE], stats: &NormStats) -> [f64; OUTPUT_SIZE] {
    std::array::from_fn(|j| y[j] * stats.output_std[j] + stats.output_mean[j])
}
