//! Tiny dense networks with hand-written gradients.
//!
//! Both learned components (mask predictor and proxy encoder) are per-pixel
//! two-layer perceptrons: `out = W2 · tanh(W1 · x̃ + b1) + b2`, where
//! `x̃ = (x − shift) · scale` is a fixed input standardization. Parameters
//! live in one flat vector so optimizers and finite-difference checks can
//! treat them uniformly.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense affine map `y = W x + b`, W stored row-major (out × in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl AffineMap {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "affine map {in_dim}->{out_dim} needs {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weights.len(),
                bias.len()
            )));
        }
        Ok(AffineMap {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            weights[i * n + i] = 1.0;
        }
        AffineMap {
            in_dim: n,
            out_dim: n,
            weights,
            bias: vec![0.0; n],
        }
    }

    /// Uniform(±1/√in) weights, zero bias, reproducible from `seed`.
    pub fn random(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        AffineMap {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::Shape(format!(
                "affine map expects {} inputs, got {}",
                self.in_dim,
                x.len()
            )));
        }
        Ok(self
            .weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect())
    }
}

/// Two-layer tanh perceptron with a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    /// Layout: W1 (hidden×input), b1, W2 (output×hidden), b2.
    pub params: Vec<f64>,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
}

/// Per-pixel activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub x: Vec<f64>,
    pub hidden: Vec<f64>,
    pub out: Vec<f64>,
}

impl Mlp {
    pub fn param_count(input: usize, hidden: usize, output: usize) -> usize {
        hidden * input + hidden + output * hidden + output
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            input,
            hidden,
            output,
            params: vec![0.0; Self::param_count(input, hidden, output)],
            input_shift: vec![0.0; input],
            input_scale: vec![1.0; input],
        }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(input, hidden, output);
        let b1 = (6.0 / (input + hidden) as f64).sqrt();
        let b2 = (6.0 / (hidden + output) as f64).sqrt();
        let (w1_end, w2_start) = (hidden * input, hidden * input + hidden);
        for v in &mut m.params[..w1_end] {
            *v = rng.random_range(-b1..b1);
        }
        for v in &mut m.params[w2_start..w2_start + output * hidden] {
            *v = rng.random_range(-b2..b2);
        }
        m
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        (b1, w2, b2)
    }

    /// Sets the fixed standardization from per-feature mean and std.
    pub fn set_standardization(&mut self, mean: &[f64], std: &[f64]) {
        self.input_shift = mean.to_vec();
        self.input_scale = std.iter().map(|&s| if s > 1e-12 { 1.0 / s } else { 1.0 }).collect();
    }

    pub fn forward(&self, features: &[f64]) -> MlpTrace {
        let (b1o, w2o, b2o) = self.offsets();
        let p = &self.params;
        let x: Vec<f64> = features
            .iter()
            .zip(self.input_shift.iter().zip(&self.input_scale))
            .map(|(v, (s, k))| (v - s) * k)
            .collect();
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &p[h * self.input..(h + 1) * self.input];
                let z = row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + p[b1o + h];
                z.tanh()
            })
            .collect();
        let out = (0..self.output)
            .map(|o| {
                let row = &p[w2o + o * self.hidden..w2o + (o + 1) * self.hidden];
                row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>() + p[b2o + o]
            })
            .collect();
        MlpTrace { x, hidden, out }
    }

    /// Accumulates ∂L/∂params into `grad` given ∂L/∂out for one pixel.
    pub fn backward(&self, trace: &MlpTrace, d_out: &[f64], grad: &mut [f64]) {
        let (b1o, w2o, b2o) = self.offsets();
        let p = &self.params;
        let mut d_hidden = vec![0.0; self.hidden];
        for (o, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[b2o + o] += g;
            let base = w2o + o * self.hidden;
            for h in 0..self.hidden {
                grad[base + h] += g * trace.hidden[h];
                d_hidden[h] += g * p[base + h];
            }
        }
        for h in 0..self.hidden {
            let dz = d_hidden[h] * (1.0 - trace.hidden[h] * trace.hidden[h]);
            if dz == 0.0 {
                continue;
            }
            grad[b1o + h] += dz;
            let base = h * self.input;
            for (i, &xi) in trace.x.iter().enumerate() {
                grad[base + i] += dz * xi;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}

/// Serialized form: shapes plus base64 little-endian f64 blobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpDoc {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub params_b64: String,
    pub input_shift_b64: String,
    pub input_scale_b64: String,
}

pub fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

pub fn decode_f64s(text: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::Format(format!("{what}: bad base64: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Format(format!(
            "{what}: expected {expected} f64 values, found {} bytes",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format(format!("{what}: value {i} is not finite")));
    }
    Ok(values)
}

impl From<&Mlp> for MlpDoc {
    fn from(m: &Mlp) -> Self {
        MlpDoc {
            input: m.input,
            hidden: m.hidden,
            output: m.output,
            params_b64: encode_f64s(&m.params),
            input_shift_b64: encode_f64s(&m.input_shift),
            input_scale_b64: encode_f64s(&m.input_scale),
        }
    }
}

impl TryFrom<&MlpDoc> for Mlp {
    type Error = Error;
    fn try_from(d: &MlpDoc) -> Result<Self> {
        Ok(Mlp {
            input: d.input,
            hidden: d.hidden,
            output: d.output,
            params: decode_f64s(
                &d.params_b64,
                Mlp::param_count(d.input, d.hidden, d.output),
                "params",
            )?,
            input_shift: decode_f64s(&d.input_shift_b64, d.input, "input_shift")?,
            input_scale: decode_f64s(&d.input_scale_b64, d.input, "input_scale")?,
        })
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Central-difference gradient of `f` at `params` with step `h`.
pub fn numeric_gradient(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = params.to_vec();
    (0..params.len())
        .map(|k| {
            work[k] = params[k] + h;
            let plus = f(&work);
            work[k] = params[k] - h;
            let minus = f(&work);
            work[k] = params[k];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Denominator floor for [`max_relative_error`]; components smaller than
/// this are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// `max_k |a_k − n_k| / max(|a_k|, |n_k|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(GRAD_CHECK_FLOOR))
        .fold(0.0, f64::max)
}

/// Gradient descent whose step is halved whenever a trial step would raise
/// the objective, and grown by `growth` after each accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub lr: f64,
    pub growth: f64,
    pub min_lr: f64,
}

impl StepSchedule {
    /// Tries `params − lr·grad`; `accept` decides given the trial loss.
    /// Returns the accepted loss or `None` once the step underflows `min_lr`.
    pub fn step(
        &mut self,
        params: &mut Vec<f64>,
        grad: &[f64],
        mut evaluate: impl FnMut(&[f64]) -> Result<Option<f64>>,
    ) -> Result<Option<f64>> {
        while self.lr >= self.min_lr {
            let trial: Vec<f64> = params.iter().zip(grad).map(|(p, g)| p - self.lr * g).collect();
            if let Some(loss) = evaluate(&trial)? {
                *params = trial;
                self.lr *= self.growth;
                return Ok(Some(loss));
            }
            self.lr *= 0.5;
        }
        Ok(None)
    }
}
