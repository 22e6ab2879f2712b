//! Minimal fully-connected networks with manual backpropagation.
//!
//! The networks here are deliberately small and self-contained: everything in
//! the crate is f64 and sequential, so training and sampling replay
//! bit-identically from a seed. `Mlp::backward` returns both parameter
//! gradients and the gradient with respect to the input, which guidance needs
//! to differentiate critics through their inputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::standard_normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully-connected network. Hidden layers use `activation`, the output layer
/// is linear. Parameters are stored flat (per layer: row-major weights, then
/// biases) so optimizers and checkpoints treat them as a single vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
}

/// Cached activations from a forward pass, consumed by `backward`.
pub struct MlpTrace {
    /// Layer inputs: activations[0] is the network input.
    activations: Vec<Vec<f64>>,
    /// Pre-activation values per layer.
    preacts: Vec<Vec<f64>>,
}

impl Mlp {
    /// Xavier-style initialization.
    pub fn new(dims: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut params = Vec::with_capacity(Self::param_count(dims));
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let scale = (2.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(standard_normal(rng) * scale);
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Mlp {
            dims: dims.to_vec(),
            activation,
            params,
        }
    }

    pub fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        Self::param_count(&self.dims[..=layer])
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_traced(x).0
    }

    /// Forward pass retaining intermediate values for backpropagation.
    pub fn forward_traced(&self, x: &[f64]) -> (Vec<f64>, MlpTrace) {
        assert_eq!(x.len(), self.dims[0], "mlp input dim mismatch");
        let n_layers = self.dims.len() - 1;
        let mut activations = Vec::with_capacity(n_layers + 1);
        let mut preacts = Vec::with_capacity(n_layers);
        activations.push(x.to_vec());
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let off = self.layer_offset(l);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let a_prev = &activations[l];
            let mut z = vec![0.0; fan_out];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut acc = b[o];
                for (wi, ai) in row.iter().zip(a_prev.iter()) {
                    acc += wi * ai;
                }
                *zo = acc;
            }
            let a = if l + 1 == n_layers {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            preacts.push(z);
            activations.push(a);
        }
        (
            activations.last().unwrap().clone(),
            MlpTrace {
                activations,
                preacts,
            },
        )
    }

    /// Backpropagate `d_out` (gradient of a scalar loss with respect to the
    /// network output). Accumulates parameter gradients into `grads` (same
    /// layout as `params`) and returns the gradient with respect to the input.
    pub fn backward(&self, trace: &MlpTrace, d_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(grads.len(), self.params.len());
        let n_layers = self.dims.len() - 1;
        let mut delta = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let off = self.layer_offset(l);
            // Output layer is linear; hidden layers apply the activation.
            if l + 1 != n_layers {
                for (d, z) in delta.iter_mut().zip(trace.preacts[l].iter()) {
                    *d *= self.activation.derivative(*z);
                }
            }
            let a_prev = &trace.activations[l];
            let (gw, gb) = grads[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for o in 0..fan_out {
                let d = delta[o];
                gb[o] += d;
                let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                for (gwi, ai) in row.iter_mut().zip(a_prev.iter()) {
                    *gwi += d * ai;
                }
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let mut d_prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (dp, wi) in d_prev.iter_mut().zip(row.iter()) {
                    *dp += d * wi;
                }
            }
            delta = d_prev;
        }
        delta
    }

    /// Gradient of a scalar-output network with respect to its input.
    pub fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.output_dim(), 1, "input_gradient expects scalar output");
        let (_, trace) = self.forward_traced(x);
        let mut scratch = vec![0.0; self.params.len()];
        self.backward(&trace, &[1.0], &mut scratch)
    }
}

/// Adam optimizer over a flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Scale `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// Sinusoidal embedding of a diffusion step index, scaled to [0, 1] by `t_max`.
pub fn time_embedding(t: usize, t_max: usize, dim: usize) -> Vec<f64> {
    assert!(dim % 2 == 0, "time embedding dim must be even");
    let pos = t as f64 / t_max.max(1) as f64;
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = 10f64.powf(4.0 * i as f64 / half.max(1) as f64);
        out.push((pos * freq).sin());
        out.push((pos * freq).cos());
    }
    out
}
