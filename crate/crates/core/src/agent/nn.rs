//! Minimal fully-connected network with hand-rolled reverse-mode gradients,
//! plus the Adam optimizer used by the actor, critics, and temperature.
//!
//! Parameters live in one flat vector (per-layer weights then biases) so the
//! optimizer, soft target updates, and finite-difference checks all operate
//! on plain slices. Hidden activations are rectified linear; the output layer
//! is affine.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Feed-forward network: dims = [input, hidden..., output].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Layer inputs: activations[0] is the network input.
    activations: Vec<Vec<f64>>,
    /// Pre-activation values per layer.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(dims: &[usize], rng: &mut ChaCha12Rng) -> Self {
        assert!(dims.len() >= 2, "network needs input and output dims");
        let mut params = Vec::with_capacity(Self::param_count_for(dims));
        for layer in 0..dims.len() - 1 {
            let fan_in = dims[layer];
            let fan_out = dims[layer + 1];
            let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push((rng.gen::<f64>() * 2.0 - 1.0) * scale);
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Mlp { dims: dims.to_vec(), params }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn param_count_for(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offset of layer `l`'s weight block; biases follow the weights.
    fn layer_offset(&self, layer: usize) -> usize {
        self.dims
            .windows(2)
            .take(layer)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_traced(input).0
    }

    pub fn forward_traced(&self, input: &[f64]) -> (Vec<f64>, ForwardTrace) {
        assert_eq!(input.len(), self.dims[0], "input dimension mismatch");
        let layers = self.dims.len() - 1;
        let mut activations = Vec::with_capacity(layers + 1);
        let mut pre = Vec::with_capacity(layers);
        activations.push(input.to_vec());
        for layer in 0..layers {
            let (fan_in, fan_out) = (self.dims[layer], self.dims[layer + 1]);
            let off = self.layer_offset(layer);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let x = &activations[layer];
            let mut z = vec![0.0; fan_out];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                *zo = b[o] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
            }
            let out = if layer + 1 == layers {
                z.clone()
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            pre.push(z);
            activations.push(out);
        }
        (activations.last().unwrap().clone(), ForwardTrace { activations, pre })
    }

    /// Accumulates parameter gradients for one sample into `grads` (same
    /// layout as `params`) and returns the gradient w.r.t. the input.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_output: &[f64],
        grads: &mut [f64],
    ) -> Vec<f64> {
        assert_eq!(grads.len(), self.params.len());
        let layers = self.dims.len() - 1;
        let mut delta = grad_output.to_vec();
        for layer in (0..layers).rev() {
            let (fan_in, fan_out) = (self.dims[layer], self.dims[layer + 1]);
            let off = self.layer_offset(layer);
            if layer + 1 != layers {
                for (d, z) in delta.iter_mut().zip(&trace.pre[layer]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x = &trace.activations[layer];
            let w = &self.params[off..off + fan_in * fan_out];
            {
                let (gw, gb) = grads[off..off + fan_in * fan_out + fan_out]
                    .split_at_mut(fan_in * fan_out);
                for o in 0..fan_out {
                    let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                    for (gi, xi) in row.iter_mut().zip(x) {
                        *gi += delta[o] * xi;
                    }
                    gb[o] += delta[o];
                }
            }
            let mut prev = vec![0.0; fan_in];
            for (o, d) in delta.iter().enumerate() {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += d * wi;
                }
            }
            delta = prev;
        }
        delta
    }

    /// Moves this network toward `online`: params = nu*online + (1-nu)*self.
    pub fn soft_update_from(&mut self, online: &Mlp, nu: f64) {
        for (t, o) in self.params.iter_mut().zip(online.params()) {
            *t = nu * o + (1.0 - nu) * *t;
        }
    }
}

/// Rescales gradients in place when their global norm exceeds `max_norm`.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// Adaptive moment estimation over a flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, dim: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; dim], v: vec![0.0; dim] }
    }

    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
