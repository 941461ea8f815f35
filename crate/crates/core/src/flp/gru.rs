//! GRU layer with a tanh dense head and a linear two-unit output, plus the
//! matching backward pass.
//!
//! Per step, with input `x` and previous state `h`:
//!
//! ```text
//! z  = sigmoid(W_xz x + W_hz h + b_z)
//! r  = sigmoid(W_xr x + W_hr h + b_r)
//! h~ = tanh(W_xh x + W_hh (r * h) + b_h)
//! h' = z * h + (1 - z) * h~
//! ```
//!
//! After the last step: `q = tanh(W_d h + b_d)`, `y = W_o q + b_o`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FlpError;

pub const INPUT_SIZE: usize = 4;
pub const OUTPUT_SIZE: usize = 2;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Glorot-uniform initialisation in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Matrix { rows, cols, data: (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect() }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `out += self * v`
    fn mul_add(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        for (row, o) in self.data.chunks_exact(self.cols).zip(out.iter_mut()) {
            *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `out += self^T * v`
    fn mul_t_add(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        for (row, &s) in self.data.chunks_exact(self.cols).zip(v) {
            if s != 0.0 {
                for (o, a) in out.iter_mut().zip(row) {
                    *o += a * s;
                }
            }
        }
    }

    /// `self += u v^T`
    fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        for (row, &s) in self.data.chunks_exact_mut(self.cols).zip(u) {
            if s != 0.0 {
                for (a, b) in row.iter_mut().zip(v) {
                    *a += s * b;
                }
            }
        }
    }
}

/// All weights and biases of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_xz: Matrix,
    pub w_xr: Matrix,
    pub w_xh: Matrix,
    pub w_hz: Matrix,
    pub w_hr: Matrix,
    pub w_hh: Matrix,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
    pub w_dense: Matrix,
    pub b_dense: Vec<f64>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

pub const BLOCK_NAMES: [&str; 13] =
    ["w_xz", "w_xr", "w_xh", "w_hz", "w_hr", "w_hh", "b_z", "b_r", "b_h", "w_dense", "b_dense", "w_out", "b_out"];

impl GruParams {
    pub fn zeros(hidden: usize, dense: usize) -> Self {
        GruParams {
            w_xz: Matrix::zeros(hidden, INPUT_SIZE),
            w_xr: Matrix::zeros(hidden, INPUT_SIZE),
            w_xh: Matrix::zeros(hidden, INPUT_SIZE),
            w_hz: Matrix::zeros(hidden, hidden),
            w_hr: Matrix::zeros(hidden, hidden),
            w_hh: Matrix::zeros(hidden, hidden),
            b_z: vec![0.0; hidden],
            b_r: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
            w_dense: Matrix::zeros(dense, hidden),
            b_dense: vec![0.0; dense],
            w_out: Matrix::zeros(OUTPUT_SIZE, dense),
            b_out: vec![0.0; OUTPUT_SIZE],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(hidden: usize, dense: usize, rng: &mut R) -> Self {
        GruParams {
            w_xz: Matrix::glorot(hidden, INPUT_SIZE, rng),
            w_xr: Matrix::glorot(hidden, INPUT_SIZE, rng),
            w_xh: Matrix::glorot(hidden, INPUT_SIZE, rng),
            w_hz: Matrix::glorot(hidden, hidden, rng),
            w_hr: Matrix::glorot(hidden, hidden, rng),
            w_hh: Matrix::glorot(hidden, hidden, rng),
            b_z: vec![0.0; hidden],
            b_r: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
            w_dense: Matrix::glorot(dense, hidden, rng),
            b_dense: vec![0.0; dense],
            w_out: Matrix::glorot(OUTPUT_SIZE, dense, rng),
            b_out: vec![0.0; OUTPUT_SIZE],
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.b_z.len()
    }

    pub fn dense_size(&self) -> usize {
        self.b_dense.len()
    }

    pub fn zeros_like(&self) -> Self {
        GruParams::zeros(self.hidden_size(), self.dense_size())
    }

    /// Checks every block against the hidden/dense sizes implied by the biases.
    pub fn validate(&self) -> Result<(), FlpError> {
        let (h, d) = (self.hidden_size(), self.dense_size());
        let shapes: [(&str, &Matrix, usize, usize); 8] = [
            ("w_xz", &self.w_xz, h, INPUT_SIZE),
            ("w_xr", &self.w_xr, h, INPUT_SIZE),
            ("w_xh", &self.w_xh, h, INPUT_SIZE),
            ("w_hz", &self.w_hz, h, h),
            ("w_hr", &self.w_hr, h, h),
            ("w_hh", &self.w_hh, h, h),
            ("w_dense", &self.w_dense, d, h),
            ("w_out", &self.w_out, OUTPUT_SIZE, d),
        ];
        for (name, m, rows, cols) in shapes {
            if m.rows != rows || m.cols != cols || m.data.len() != rows * cols {
                return Err(FlpError::Dimension(format!(
                    "{name} is {}x{} ({} values), expected {rows}x{cols}",
                    m.rows,
                    m.cols,
                    m.data.len()
                )));
            }
        }
        if self.b_r.len() != h || self.b_h.len() != h || self.b_out.len() != OUTPUT_SIZE {
            return Err(FlpError::Dimension("bias length mismatch".into()));
        }
        if self.blocks().iter().any(|(_, b)| b.iter().any(|v| !v.is_finite())) {
            return Err(FlpError::Dimension("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 13] {
        [
            (BLOCK_NAMES[0], &self.w_xz.data),
            (BLOCK_NAMES[1], &self.w_xr.data),
            (BLOCK_NAMES[2], &self.w_xh.data),
            (BLOCK_NAMES[3], &self.w_hz.data),
            (BLOCK_NAMES[4], &self.w_hr.data),
            (BLOCK_NAMES[5], &self.w_hh.data),
            (BLOCK_NAMES[6], &self.b_z),
            (BLOCK_NAMES[7], &self.b_r),
            (BLOCK_NAMES[8], &self.b_h),
            (BLOCK_NAMES[9], &self.w_dense.data),
            (BLOCK_NAMES[10], &self.b_dense),
            (BLOCK_NAMES[11], &self.w_out.data),
            (BLOCK_NAMES[12], &self.b_out),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut [f64]); 13] {
        [
            (BLOCK_NAMES[0], &mut self.w_xz.data),
            (BLOCK_NAMES[1], &mut self.w_xr.data),
            (BLOCK_NAMES[2], &mut self.w_xh.data),
            (BLOCK_NAMES[3], &mut self.w_hz.data),
            (BLOCK_NAMES[4], &mut self.w_hr.data),
            (BLOCK_NAMES[5], &mut self.w_hh.data),
            (BLOCK_NAMES[6], &mut self.b_z),
            (BLOCK_NAMES[7], &mut self.b_r),
            (BLOCK_NAMES[8], &mut self.b_h),
            (BLOCK_NAMES[9], &mut self.w_dense.data),
            (BLOCK_NAMES[10], &mut self.b_dense),
            (BLOCK_NAMES[11], &mut self.w_out.data),
            (BLOCK_NAMES[12], &mut self.b_out),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    /// `self += other`, block by block.
    pub fn add_assign(&mut self, other: &GruParams) {
        for ((_, a), (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, a) in self.blocks_mut() {
            for x in a.iter_mut() {
                *x *= s;
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediate values of one cell step, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub x: [f64; INPUT_SIZE],
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub h_tilde: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn cell_forward(x: &[f64; INPUT_SIZE], h_prev: &[f64], p: &GruParams) -> StepCache {
    let n = p.hidden_size();
    let mut a_z = p.b_z.clone();
    p.w_xz.mul_add(x, &mut a_z);
    p.w_hz.mul_add(h_prev, &mut a_z);
    let z: Vec<f64> = a_z.into_iter().map(sigmoid).collect();

    let mut a_r = p.b_r.clone();
    p.w_xr.mul_add(x, &mut a_r);
    p.w_hr.mul_add(h_prev, &mut a_r);
    let r: Vec<f64> = a_r.into_iter().map(sigmoid).collect();

    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut a_h = p.b_h.clone();
    p.w_xh.mul_add(x, &mut a_h);
    p.w_hh.mul_add(&rh, &mut a_h);
    let h_tilde: Vec<f64> = a_h.into_iter().map(f64::tanh).collect();

    let h: Vec<f64> = (0..n).map(|i| z[i] * h_prev[i] + (1.0 - z[i]) * h_tilde[i]).collect();
    StepCache { x: *x, h_prev: h_prev.to_vec(), z, r, h_tilde, h }
}

/// One GRU step on a normalised input.
pub fn gru_cell_step(x: &[f64; INPUT_SIZE], h_prev: &[f64], params: &GruParams) -> Result<Vec<f64>, FlpError> {
    params.validate()?;
    if h_prev.len() != params.hidden_size() {
        return Err(FlpError::Dimension(format!(
            "hidden state has {} entries, network expects {}",
            h_prev.len(),
            params.hidden_size()
        )));
    }
    Ok(cell_forward(x, h_prev, params).h)
}

/// Full forward pass with everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub steps: Vec<StepCache>,
    pub dense: Vec<f64>,
    pub output: [f64; OUTPUT_SIZE],
}

pub(crate) fn forward_trace(seq: &[[f64; INPUT_SIZE]], p: &GruParams) -> ForwardTrace {
    let mut h = vec![0.0; p.hidden_size()];
    let mut steps = Vec::with_capacity(seq.len());
    for x in seq {
        let s = cell_forward(x, &h, p);
        h.clone_from(&s.h);
        steps.push(s);
    }
    let mut a_d = p.b_dense.clone();
    p.w_dense.mul_add(&h, &mut a_d);
    let dense: Vec<f64> = a_d.into_iter().map(f64::tanh).collect();
    let mut y = p.b_out.clone();
    p.w_out.mul_add(&dense, &mut y);
    ForwardTrace { steps, dense, output: [y[0], y[1]] }
}

/// Network output (normalised displacement) for a normalised input sequence.
pub fn forward_normalized(seq: &[[f64; INPUT_SIZE]], params: &GruParams) -> Result<[f64; OUTPUT_SIZE], FlpError> {
    if seq.is_empty() {
        return Err(FlpError::InsufficientHistory);
    }
    params.validate()?;
    Ok(forward_trace(seq, params).output)
}

/// Accumulates into `grad` the gradient of `0.5 * sum((y - target)^2) * weight`
/// given a forward trace. Returns that weighted loss term.
pub(crate) fn backward(
    trace: &ForwardTrace,
    target: &[f64; OUTPUT_SIZE],
    weight: f64,
    p: &GruParams,
    grad: &mut GruParams,
) -> f64 {
    let n = p.hidden_size();
    let dy: Vec<f64> = (0..OUTPUT_SIZE).map(|j| (trace.output[j] - target[j]) * weight).collect();
    let loss = 0.5 * weight * (0..OUTPUT_SIZE).map(|j| (trace.output[j] - target[j]).powi(2)).sum::<f64>();

    grad.w_out.add_outer(&dy, &trace.dense);
    for (g, d) in grad.b_out.iter_mut().zip(&dy) {
        *g += d;
    }
    let mut dq = vec![0.0; p.dense_size()];
    p.w_out.mul_t_add(&dy, &mut dq);
    let da_d: Vec<f64> = dq.iter().zip(&trace.dense).map(|(g, q)| g * (1.0 - q * q)).collect();
    let h_last = &trace.steps.last().expect("non-empty sequence").h;
    grad.w_dense.add_outer(&da_d, h_last);
    for (g, d) in grad.b_dense.iter_mut().zip(&da_d) {
        *g += d;
    }
    let mut dh = vec![0.0; n];
    p.w_dense.mul_t_add(&da_d, &mut dh);

    let mut da_z = vec![0.0; n];
    let mut da_r = vec![0.0; n];
    let mut da_h = vec![0.0; n];
    let mut rh = vec![0.0; n];
    for s in trace.steps.iter().rev() {
        let mut dh_prev = vec![0.0; n];
        for i in 0..n {
            let dz = dh[i] * (s.h_prev[i] - s.h_tilde[i]);
            let dht = dh[i] * (1.0 - s.z[i]);
            da_h[i] = dht * (1.0 - s.h_tilde[i] * s.h_tilde[i]);
            da_z[i] = dz * s.z[i] * (1.0 - s.z[i]);
            dh_prev[i] = dh[i] * s.z[i];
            rh[i] = s.r[i] * s.h_prev[i];
        }
        grad.w_xh.add_outer(&da_h, &s.x);
        grad.w_hh.add_outer(&da_h, &rh);
        let mut d_rh = vec![0.0; n];
        p.w_hh.mul_t_add(&da_h, &mut d_rh);
        for i in 0..n {
            let dr = d_rh[i] * s.h_prev[i];
            dh_prev[i] += d_rh[i] * s.r[i];
            da_r[i] = dr * s.r[i] * (1.0 - s.r[i]);
            grad.b_h[i] += da_h[i];
            grad.b_z[i] += da_z[i];
            grad.b_r[i] += da_r[i];
        }
        grad.w_xz.add_outer(&da_z, &s.x);
        grad.w_hz.add_outer(&da_z, &s.h_prev);
        grad.w_xr.add_outer(&da_r, &s.x);
        grad.w_hr.add_outer(&da_r, &s.h_prev);
        p.w_hz.mul_t_add(&da_z, &mut dh_prev);
        p.w_hr.mul_t_add(&da_r, &mut dh_prev);
        dh = dh_prev;
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_is_a_fixed_point() {
        let p = GruParams::zeros(5, 3);
        let h = gru_cell_step(&[0.3, -1.0, 2.0, 0.5], &[0.0; 5], &p).unwrap();
        assert_eq!(h, vec![0.0; 5]);
        // z = 0.5, h~ = 0  =>  h = 0.5 * h_prev
        let prev = [1.0, -2.0, 0.25, 4.0, -0.5];
        let h = gru_cell_step(&[0.3, -1.0, 2.0, 0.5], &prev, &p).unwrap();
        for (a, b) in h.iter().zip(prev) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
        assert_eq!(forward_normalized(&[[1.0, 2.0, 3.0, 4.0]], &p).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn dimension_errors() {
        let p = GruParams::zeros(5, 3);
        assert!(matches!(gru_cell_step(&[0.0; 4], &[0.0; 4], &p), Err(FlpError::Dimension(_))));
        let mut bad = p.clone();
        bad.w_hh = Matrix::zeros(4, 5);
        assert!(matches!(bad.validate(), Err(FlpError::Dimension(_))));
        assert!(matches!(forward_normalized(&[], &p), Err(FlpError::InsufficientHistory)));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GruParams::init(16, 8, &mut rng);
        let seq = [[0.1, 0.2, -0.3, 1.0], [0.0, -0.5, 0.7, 1.0]];
        assert_eq!(forward_normalized(&seq, &p).unwrap(), forward_normalized(&seq, &p).unwrap());
    }

    #[test]
    fn init_respects_glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = GruParams::init(150, 50, &mut rng);
        let lim = (6.0f64 / (150.0 + 4.0)).sqrt();
        assert!(p.w_xz.data.iter().all(|v| v.abs() <= lim));
        let lim = (6.0f64 / 300.0).sqrt();
        assert!(p.w_hh.data.iter().all(|v| v.abs() <= lim));
        assert!(p.b_z.iter().all(|v| *v == 0.0));
        assert_eq!(p.param_count(), 3 * 150 * 4 + 3 * 150 * 150 + 3 * 150 + 50 * 150 + 50 + 2 * 50 + 2);
    }
}
