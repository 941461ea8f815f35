//! Mini-batch BPTT with Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gru::{backward, forward_trace, GruParams, INPUT_SIZE, OUTPUT_SIZE};
use super::model::FlpModel;
use super::{featurize, normalize_features, FeatureVector, FlpError, NormStats, PredictorConfig};
use crate::exec::Execution;
use crate::geo::Trajectory;

/// Per-sample gradients are summed in fixed-size chunks, then the chunk sums
/// are added in order. The split does not depend on the thread count, so
/// both execution paths produce identical bits.
const GRAD_CHUNK: usize = 4;

/// A history window (raw units) and the displacement observed after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub seq: Vec<FeatureVector>,
    pub target: [f64; OUTPUT_SIZE],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: GruParams,
    pub norm: NormStats,
    pub window_len: usize,
    /// Mean training loss of each epoch (normalised space).
    pub loss_history: Vec<f64>,
}

impl TrainOutcome {
    pub fn into_model(self) -> FlpModel {
        FlpModel { params: self.params, norm: self.norm, window_len: self.window_len }
    }
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: GruParams,
    v: GruParams,
}

impl Adam {
    pub fn new(params: &GruParams, cfg: &PredictorConfig) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps_adam,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut GruParams, grad: &GruParams) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let blocks = params.blocks_mut().into_iter().zip(grad.blocks()).zip(self.m.blocks_mut()).zip(self.v.blocks_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in blocks {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

type Normalized = (Vec<[f64; INPUT_SIZE]>, [f64; OUTPUT_SIZE]);

fn batch_gradient(params: &GruParams, data: &[Normalized], idx: &[usize], exec: Execution) -> (f64, GruParams) {
    let weight = 1.0 / idx.len() as f64;
    let chunks: Vec<&[usize]> = idx.chunks(GRAD_CHUNK).collect();
    let partial = exec.map(&chunks, |chunk| {
        let mut g = params.zeros_like();
        let mut loss = 0.0;
        for &i in chunk.iter() {
            let (seq, target) = &data[i];
            let trace = forward_trace(seq, params);
            loss += backward(&trace, target, weight, params, &mut g);
        }
        (loss, g)
    });
    let mut it = partial.into_iter();
    let (mut loss, mut grad) = it.next().expect("non-empty batch");
    for (l, g) in it {
        loss += l;
        grad.add_assign(&g);
    }
    (loss, grad)
}

/// Mean squared error over the two outputs, averaged over the batch, and its
/// gradient with respect to every parameter. Inputs are already normalised.
pub fn loss_and_gradients(
    params: &GruParams,
    batch: &[(Vec<[f64; INPUT_SIZE]>, [f64; OUTPUT_SIZE])],
    exec: Execution,
) -> Result<(f64, GruParams), FlpError> {
    if batch.is_empty() {
        return Err(FlpError::EmptyDataset);
    }
    if batch.iter().any(|(s, _)| s.is_empty()) {
        return Err(FlpError::InsufficientHistory);
    }
    params.validate()?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    Ok(batch_gradient(params, batch, &idx, exec))
}

pub fn train_bptt(dataset: &[TrainingSample], cfg: &PredictorConfig) -> Result<TrainOutcome, FlpError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(FlpError::EmptyDataset);
    }
    if dataset.iter().any(|s| s.seq.is_empty()) {
        return Err(FlpError::InsufficientHistory);
    }
    let norm = NormStats::fit(dataset)?;
    let data: Vec<Normalized> =
        dataset.iter().map(|s| (normalize_features(&s.seq, &norm), norm.normalize_target(&s.target))).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut params = GruParams::init(cfg.hidden_size, cfg.dense_size, &mut rng);
    let mut adam = Adam::new(&params, cfg);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) = batch_gradient(&params, &data, batch, cfg.execution);
            if !loss.is_finite() {
                return Err(FlpError::Diverged { epoch, loss });
            }
            total += loss * batch.len() as f64;
            adam.step(&mut params, &grad);
        }
        let mean = total / data.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.6e}");
        loss_history.push(mean);
    }
    if params.blocks().iter().any(|(_, b)| b.iter().any(|v| !v.is_finite())) {
        return Err(FlpError::Diverged { epoch: cfg.epochs.saturating_sub(1), loss: f64::NAN });
    }
    Ok(TrainOutcome { params, norm, window_len: cfg.window_len, loss_history })
}

/// How training windows are cut from aligned trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub window_len: usize,
    pub align_rate: i64,
    /// Horizons used are `k * align_rate` for `k` in `1..=max_horizon_steps`.
    pub max_horizon_steps: usize,
    /// Distance in points between consecutive window ends.
    pub stride: usize,
    /// Keep a seeded random subset when more samples are available.
    pub max_samples: Option<usize>,
    pub seed: u64,
}

/// Cuts `(window, displacement)` pairs out of aligned trajectories. Only
/// targets that lie exactly `k` grid steps after the window end are used.
pub fn build_dataset(trajs: &[Trajectory], spec: &DatasetSpec) -> Result<Vec<TrainingSample>, FlpError> {
    if spec.window_len == 0 || spec.stride == 0 || spec.max_horizon_steps == 0 || spec.align_rate <= 0 {
        return Err(FlpError::InvalidConfig("window_len, stride, max_horizon_steps and align_rate must be positive".into()));
    }
    let rate = spec.align_rate as f64;
    let mut out = Vec::new();
    for traj in trajs {
        let pts = traj.points();
        let mut end = spec.window_len;
        while end + 1 < pts.len() {
            let window = Trajectory::from_valid(traj.object_id().clone(), pts[end - spec.window_len..=end].to_vec());
            for k in 1..=spec.max_horizon_steps {
                let Some(target) = pts.get(end + k) else { break };
                let horizon = k as f64 * rate;
                if (target.t - pts[end].t - horizon).abs() > 1e-6 {
                    break;
                }
                out.push(TrainingSample {
                    seq: featurize(&window, horizon)?,
                    target: [target.lon - pts[end].lon, target.lat - pts[end].lat],
                });
            }
            end += spec.stride;
        }
    }
    if let Some(max) = spec.max_samples {
        if out.len() > max {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            out.shuffle(&mut rng);
            out.truncate(max);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::TimestampedPoint;

    fn line(id: &str, n: usize, vx: f64, vy: f64) -> Trajectory {
        let pts = (0..n).map(|k| TimestampedPoint::new(id, k as f64 * vx, k as f64 * vy, k as f64 * 60.0).unwrap()).collect();
        Trajectory::new(id, pts).unwrap()
    }

    #[test]
    fn dataset_windows_and_targets() {
        let spec = DatasetSpec { window_len: 3, align_rate: 60, max_horizon_steps: 2, stride: 1, max_samples: None, seed: 0 };
        let ds = build_dataset(&[line("a", 6, 0.01, 0.0)], &spec).unwrap();
        // window ends at 3 and 4; end 3 has horizons 1, 2; end 4 has horizon 1
        assert_eq!(ds.len(), 3);
        assert_eq!(ds[0].seq.len(), 3);
        assert_eq!(ds[0].seq[0].horizon, 60.0);
        assert!((ds[1].target[0] - 0.02).abs() < 1e-12);
        assert_eq!(ds[1].seq[0].horizon, 120.0);
        let capped = build_dataset(
            &[line("a", 40, 0.01, 0.0)],
            &DatasetSpec { max_samples: Some(5), ..spec.clone() },
        )
        .unwrap();
        assert_eq!(capped.len(), 5);
    }

    #[test]
    fn training_errors() {
        let cfg = PredictorConfig { hidden_size: 4, dense_size: 3, epochs: 2, ..PredictorConfig::default() };
        assert!(matches!(train_bptt(&[], &cfg), Err(FlpError::EmptyDataset)));
        let bad = TrainingSample { seq: vec![], target: [0.0, 0.0] };
        assert!(matches!(train_bptt(&[bad], &cfg), Err(FlpError::InsufficientHistory)));
    }

    #[test]
    fn divergence_names_the_epoch() {
        let s = TrainingSample {
            seq: vec![FeatureVector { d_lon: 1.0, d_lat: 0.0, d_t: 60.0, horizon: 60.0 }],
            target: [1.0, 2.0],
        };
        let s2 = TrainingSample {
            seq: vec![FeatureVector { d_lon: 2.0, d_lat: 1.0, d_t: 60.0, horizon: 60.0 }],
            target: [3.0, -2.0],
        };
        let cfg = PredictorConfig { hidden_size: 4, dense_size: 3, epochs: 50, learning_rate: 1e300, ..PredictorConfig::default() };
        match train_bptt(&[s, s2], &cfg) {
            Err(FlpError::Diverged { epoch, .. }) => assert!(epoch < 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn sequential_and_parallel_gradients_agree_bitwise() {
        let ds = build_dataset(
            &[line("a", 30, 0.01, 0.002), line("b", 30, -0.003, 0.004)],
            &DatasetSpec { window_len: 4, align_rate: 60, max_horizon_steps: 3, stride: 2, max_samples: None, seed: 0 },
        )
        .unwrap();
        let norm = NormStats::fit(&ds).unwrap();
        let batch: Vec<_> = ds.iter().map(|s| (normalize_features(&s.seq, &norm), norm.normalize_target(&s.target))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = GruParams::init(6, 5, &mut rng);
        let (l1, g1) = loss_and_gradients(&p, &batch, Execution::Sequential).unwrap();
        let (l2, g2) = loss_and_gradients(&p, &batch, Execution::Parallel).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }
}
