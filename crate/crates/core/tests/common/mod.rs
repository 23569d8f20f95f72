//! Finite-difference helpers shared by the gradient checks.
#![allow(dead_code)]

use neuroloop::lod::ContextVector;
use neuroloop::nn::layers::{cross_entropy, softmax, softmax_ce_grad};
use neuroloop::nn::{CnnModel, CnnShape, LodConfig, Parameters};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-6;
pub const TOL: f64 = 1e-4;
pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-2)
}

pub fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Largest error over every coordinate of `x`.
pub fn max_err(x: &[f64], analytic: &[f64], loss: impl Fn(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + H;
        let up = loss(&xp);
        xp[i] = x[i] - H;
        let down = loss(&xp);
        xp[i] = x[i];
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * H)));
    }
    worst
}

pub fn tiny_model(lod: LodConfig, seed: u64) -> CnnModel {
    let shape = CnnShape {
        time_len: 8,
        loops: 4,
        in_channels: 2,
        hidden: 3,
        classes: 4,
    };
    let mut m = CnnModel::new(shape, lod, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xFACE);
    for p in m.params_mut() {
        if p.name.starts_with("lod.") || p.name.ends_with("bias") {
            p.value = randn(&mut rng, p.len())
                .iter()
                .map(|v| 0.5 * v + 0.2)
                .collect();
        }
    }
    m
}

pub fn model_loss(m: &CnnModel, x: &[f64], ctx: &ContextVector, target: &[f64]) -> f64 {
    let cache = m.forward(x, ctx);
    cross_entropy(&softmax(&cache.logits), target) + m.lod.aux_sse_weight * m.pooling_sse(&cache)
}

/// Worst finite-difference error of the full model's input and parameter
/// gradients, with the parameter it occurred in.
pub fn model_grad_error(lod: LodConfig, seed: u64) -> (String, f64) {
    let mut m = tiny_model(lod, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = randn(&mut rng, 2 * 8 * 4);
    let ctx = ContextVector {
        attention: 40.0,
        meditation: 70.0,
    };
    let target = [0.7, 0.3, 0.0, 0.0];

    let cache = m.forward(&x, &ctx);
    let dlogits = softmax_ce_grad(&softmax(&cache.logits), &target, 1.0);
    m.zero_grad();
    let dx = m
        .backward(&cache, &dlogits, lod.aux_sse_weight, true)
        .unwrap();
    let mut worst = (
        "input".to_string(),
        max_err(&x, &dx, |xp| model_loss(&m, xp, &ctx, &target)),
    );
    let grads: Vec<(String, Vec<f64>, Vec<f64>)> = m
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.value.clone(), p.grad.clone()))
        .collect();
    for (pi, (name, value, grad)) in grads.into_iter().enumerate() {
        let err = max_err(&value, &grad, |vp| {
            let mut probe = m.clone();
            probe.params_mut()[pi].value = vp.to_vec();
            model_loss(&probe, &x, &ctx, &target)
        });
        if err > worst.1 {
            worst = (name, err);
        }
    }
    worst
}

/// Every gate position, both pool modes and several window sizes.
pub fn lod_variants() -> [LodConfig; 4] {
    use neuroloop::lod::PoolMode;
    use neuroloop::nn::GatePosition;
    [
        LodConfig::default(),
        LodConfig {
            k: 2,
            pool_mode: PoolMode::Mean,
            gate: GatePosition::AfterConv1,
            aux_sse_weight: 0.3,
        },
        LodConfig {
            k: 3,
            pool_mode: PoolMode::Max,
            gate: GatePosition::AfterPool,
            aux_sse_weight: 0.5,
        },
        LodConfig {
            k: 2,
            pool_mode: PoolMode::Max,
            gate: GatePosition::None,
            aux_sse_weight: 0.0,
        },
    ]
}
