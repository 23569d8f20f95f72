//! Two-hidden-layer Q network over encoded agent states, with batched
//! forward and backward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::NUM_ACTIONS;
use crate::nn::layers::{relu_backward, relu_forward, Linear};
use crate::nn::linalg::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use crate::nn::{Param, Parameters};

pub const HIDDEN: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub input_dim: usize,
    pub hidden: usize,
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

/// Activations of a batched forward pass.
#[derive(Debug, Clone)]
pub struct QCache {
    pub batch: usize,
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    /// `[batch][NUM_ACTIONS]`
    pub q: Vec<f64>,
}

/// `y (b x out) = x (b x in) W^T + bias`
fn linear_batch(l: &Linear, x: &[f64], b: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(b * l.outputs);
    for _ in 0..b {
        y.extend_from_slice(&l.bias.value);
    }
    gemm_nt_acc(x, &l.weight.value, &mut y, b, l.inputs, l.outputs);
    y
}

/// Accumulates parameter gradients; returns `dx` when asked.
fn linear_batch_backward(
    l: &mut Linear,
    x: &[f64],
    dy: &[f64],
    b: usize,
    need_dx: bool,
) -> Option<Vec<f64>> {
    for row in dy.chunks_exact(l.outputs) {
        for (g, d) in l.bias.grad.iter_mut().zip(row) {
            *g += d;
        }
    }
    gemm_tn_acc(dy, x, &mut l.weight.grad, b, l.outputs, l.inputs);
    need_dx.then(|| {
        let mut dx = vec![0.0; b * l.inputs];
        gemm_acc(dy, &l.weight.value, &mut dx, b, l.outputs, l.inputs);
        dx
    })
}

impl QNetwork {
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        QNetwork {
            input_dim,
            hidden,
            l1: Linear::new("q.l1", input_dim, hidden, &mut rng),
            l2: Linear::new("q.l2", hidden, hidden, &mut rng),
            l3: Linear::new("q.l3", hidden, NUM_ACTIONS, &mut rng),
        }
    }

    /// Forward `batch` states stored row after row in `x`.
    pub fn forward(&self, x: &[f64], batch: usize) -> QCache {
        assert_eq!(x.len(), batch * self.input_dim, "state width");
        let mut h1 = linear_batch(&self.l1, x, batch);
        relu_forward(&mut h1);
        let mut h2 = linear_batch(&self.l2, &h1, batch);
        relu_forward(&mut h2);
        let q = linear_batch(&self.l3, &h2, batch);
        QCache {
            batch,
            x: x.to_vec(),
            h1,
            h2,
            q,
        }
    }

    pub fn q_values(&self, state: &[f64]) -> Vec<f64> {
        self.forward(state, 1).q
    }

    /// Backpropagate `dq` (same layout as `cache.q`), accumulating gradients.
    pub fn backward(&mut self, cache: &QCache, dq: &[f64]) {
        let b = cache.batch;
        let mut d2 = linear_batch_backward(&mut self.l3, &cache.h2, dq, b, true).expect("dx");
        relu_backward(&cache.h2, &mut d2);
        let mut d1 = linear_batch_backward(&mut self.l2, &cache.h1, &d2, b, true).expect("dx");
        relu_backward(&cache.h1, &mut d1);
        linear_batch_backward(&mut self.l1, &cache.x, &d1, b, false);
    }
}

impl Parameters for QNetwork {
    fn params(&self) -> Vec<&Param> {
        vec![
            &self.l1.weight,
            &self.l1.bias,
            &self.l2.weight,
            &self.l2.bias,
            &self.l3.weight,
            &self.l3.bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.l1.weight,
            &mut self.l1.bias,
            &mut self.l2.weight,
            &mut self.l2.bias,
            &mut self.l3.weight,
            &mut self.l3.bias,
        ]
    }
}
