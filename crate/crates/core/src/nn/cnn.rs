//! The cycle classifier.
//!
//! ```text
//! input [2][T][L]
//!   conv 1x1 -> 32, ReLU              (optional context gate)
//!   conv 3x3 same -> 32, ReLU, 2x2 max pool
//!   importance weights (per channel)
//!   time pooling, window k            (identity at k = 1)
//!   context gate                      (default position)
//!   fully connected -> 4 logits
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, softmax, Conv2d, Linear,
};
use super::param::{Param, Parameters};
use crate::labels::NUM_STATES;
use crate::lod::{
    dynamic_gate, dynamic_gate_backward, importance_weight, importance_weight_backward, pool_time,
    pool_time_backward, pooling_fidelity, pooling_fidelity_backward, ContextVector, FeatureBlock,
    ImportanceWeights, PoolMode,
};
use crate::session::{CycleTensor, CHANNELS, LOOPS_PER_CYCLE};
use crate::signal::SAMPLES_PER_LOOP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GatePosition {
    None,
    AfterConv1,
    #[default]
    AfterPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LodConfig {
    pub k: usize,
    pub pool_mode: PoolMode,
    pub gate: GatePosition,
    pub aux_sse_weight: f64,
}

impl Default for LodConfig {
    fn default() -> Self {
        LodConfig {
            k: 1,
            pool_mode: PoolMode::Max,
            gate: GatePosition::AfterPool,
            aux_sse_weight: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnnShape {
    pub time_len: usize,
    pub loops: usize,
    pub in_channels: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for CnnShape {
    fn default() -> Self {
        CnnShape {
            time_len: SAMPLES_PER_LOOP,
            loops: LOOPS_PER_CYCLE,
            in_channels: CHANNELS,
            hidden: 32,
            classes: NUM_STATES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub shape: CnnShape,
    pub lod: LodConfig,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    /// Per-channel importance weights, shape `[hidden, 1, 1]`.
    pub importance: Param,
    /// Gate matrix `[hidden][2]`.
    pub gate: Param,
    pub fc: Linear,
}

/// Activations kept from `forward` for `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    cols1: Vec<f64>,
    relu1: Vec<f64>,
    cols2: Vec<f64>,
    relu2: Vec<f64>,
    pool_arg: Vec<usize>,
    pooled: Vec<f64>,
    weighted: Vec<f64>,
    coarse: Vec<f64>,
    features: Vec<f64>,
    ctx: ContextVector,
    pub logits: Vec<f64>,
}

/// What one forward pass produces for downstream use.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    /// Channel means of the final feature map, the compact CNN feature vector.
    pub features: Vec<f64>,
}

/// Convert a `[time][loop][channel]` cycle into `[channel][time][loop]`.
pub fn cycle_to_chw(t: &CycleTensor) -> Vec<f64> {
    let hw = SAMPLES_PER_LOOP * LOOPS_PER_CYCLE;
    let mut out = vec![0.0; CHANNELS * hw];
    for (i, &v) in t.data.iter().enumerate() {
        let c = i % CHANNELS;
        let tl = i / CHANNELS;
        out[c * hw + tl] = v;
    }
    out
}

impl CnnModel {
    pub fn new(shape: CnnShape, lod: LodConfig, seed: u64) -> Self {
        assert!(
            shape.time_len % 2 == 0 && shape.loops % 2 == 0,
            "input dims must be even"
        );
        assert!(lod.k >= 1, "pool window must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = Conv2d::new("conv1", shape.in_channels, shape.hidden, 1, &mut rng);
        let conv2 = Conv2d::new("conv2", shape.hidden, shape.hidden, 3, &mut rng);
        let mut model = CnnModel {
            shape,
            lod,
            conv1,
            conv2,
            importance: Param::new(
                "lod.importance",
                vec![shape.hidden, 1, 1],
                vec![1.0; shape.hidden],
            ),
            gate: Param::zeros("lod.gate", vec![shape.hidden, 2]),
            fc: Linear::new("fc", 1, shape.classes, &mut rng),
        };
        model.fc = Linear::new("fc", model.flat_len(), shape.classes, &mut rng);
        model
    }

    fn pooled_dims(&self) -> (usize, usize) {
        (self.shape.time_len / 2, self.shape.loops / 2)
    }

    fn coarse_time(&self) -> usize {
        self.pooled_dims().0.div_ceil(self.lod.k)
    }

    /// Length of the flattened feature map entering the fully connected layer.
    pub fn flat_len(&self) -> usize {
        self.shape.hidden * self.coarse_time() * self.pooled_dims().1
    }

    pub fn feature_len(&self) -> usize {
        self.shape.hidden
    }

    fn block(&self, data: Vec<f64>, h: usize, w: usize) -> FeatureBlock {
        FeatureBlock {
            shape: vec![self.shape.hidden, h, w],
            data,
            time_axis: 1,
        }
    }

    fn importance_weights(&self) -> ImportanceWeights {
        ImportanceWeights {
            shape: self.importance.shape.clone(),
            values: self.importance.value.clone(),
        }
    }

    /// Forward one `[channel][time][loop]` input.
    pub fn forward(&self, x: &[f64], ctx: &ContextVector) -> ForwardCache {
        let (h, w) = (self.shape.time_len, self.shape.loops);
        let (ph, pw) = self.pooled_dims();

        let (mut relu1, cols1) = self.conv1.forward(x, h, w);
        relu_forward(&mut relu1);
        let gated1 = if self.lod.gate == GatePosition::AfterConv1 {
            let b = self.block(relu1.clone(), h, w);
            dynamic_gate(&b, ctx, &self.gate.value, 0)
                .expect("gate shape")
                .data
        } else {
            relu1.clone()
        };

        let (mut relu2, cols2) = self.conv2.forward(&gated1, h, w);
        relu_forward(&mut relu2);
        let (pooled, pool_arg) = maxpool2_forward(&relu2, self.shape.hidden, h, w);

        let weighted = importance_weight(
            &self.block(pooled.clone(), ph, pw),
            &self.importance_weights(),
        )
        .expect("importance shape")
        .data;
        let coarse = pool_time(
            &self.block(weighted.clone(), ph, pw),
            self.lod.k,
            self.lod.pool_mode,
        )
        .expect("pool window")
        .data;
        let features = if self.lod.gate == GatePosition::AfterPool {
            let b = self.block(coarse.clone(), self.coarse_time(), pw);
            dynamic_gate(&b, ctx, &self.gate.value, 0)
                .expect("gate shape")
                .data
        } else {
            coarse.clone()
        };
        let logits = self.fc.forward(&features);

        ForwardCache {
            cols1,
            relu1,
            cols2,
            relu2,
            pool_arg,
            pooled,
            weighted,
            coarse,
            features,
            ctx: *ctx,
            logits,
        }
    }

    pub fn predict(&self, x: &[f64], ctx: &ContextVector) -> Prediction {
        let cache = self.forward(x, ctx);
        Prediction {
            probs: softmax(&cache.logits),
            features: self.channel_means(&cache.features),
        }
    }

    pub fn predict_cycle(&self, t: &CycleTensor) -> Prediction {
        let ctx = ContextVector {
            attention: t.attention,
            meditation: t.meditation,
        };
        self.predict(&cycle_to_chw(t), &ctx)
    }

    fn channel_means(&self, map: &[f64]) -> Vec<f64> {
        let per = map.len() / self.shape.hidden;
        map.chunks_exact(per)
            .map(|c| c.iter().sum::<f64>() / per as f64)
            .collect()
    }

    /// Auxiliary pooling-fidelity loss for a cached pass, before weighting.
    pub fn pooling_sse(&self, cache: &ForwardCache) -> f64 {
        let (ph, pw) = self.pooled_dims();
        pooling_fidelity(
            &self.block(cache.weighted.clone(), ph, pw),
            self.lod.k,
            self.lod.pool_mode,
        )
        .expect("pool window")
    }

    /// Accumulate parameter gradients for one sample given `dlogits`.
    ///
    /// `aux_scale` multiplies the pooling-fidelity term's gradient (the loss
    /// weight divided by the batch size). Returns the input gradient when
    /// `need_dx` is set.
    pub fn backward(
        &mut self,
        cache: &ForwardCache,
        dlogits: &[f64],
        aux_scale: f64,
        need_dx: bool,
    ) -> Option<Vec<f64>> {
        let (h, w) = (self.shape.time_len, self.shape.loops);
        let (ph, pw) = self.pooled_dims();
        let ctx = cache.ctx;

        let mut d_features = self
            .fc
            .backward(&cache.features, dlogits, true)
            .expect("dx");

        let d_coarse = if self.lod.gate == GatePosition::AfterPool {
            let b = self.block(cache.coarse.clone(), self.coarse_time(), pw);
            let (dx, dw) = dynamic_gate_backward(&b, &ctx, &self.gate.value, 0, &d_features)
                .expect("gate shape");
            add_into(&mut self.gate.grad, &dw);
            dx
        } else {
            std::mem::take(&mut d_features)
        };

        let weighted = self.block(cache.weighted.clone(), ph, pw);
        let mut d_weighted =
            pool_time_backward(&weighted, self.lod.k, self.lod.pool_mode, &d_coarse)
                .expect("pool window");
        if aux_scale != 0.0 && self.lod.k > 1 {
            let g = pooling_fidelity_backward(&weighted, self.lod.k, self.lod.pool_mode)
                .expect("pool window");
            for (d, gi) in d_weighted.iter_mut().zip(g) {
                *d += aux_scale * gi;
            }
        }

        let pooled = self.block(cache.pooled.clone(), ph, pw);
        let (d_pooled, d_imp) =
            importance_weight_backward(&pooled, &self.importance_weights(), &d_weighted)
                .expect("importance shape");
        add_into(&mut self.importance.grad, &d_imp);

        let mut d_relu2 = maxpool2_backward(&cache.pool_arg, &d_pooled, cache.relu2.len());
        relu_backward(&cache.relu2, &mut d_relu2);
        let mut d_gated1 = self
            .conv2
            .backward(&cache.cols2, &d_relu2, h, w, true)
            .expect("dx");

        if self.lod.gate == GatePosition::AfterConv1 {
            let b = self.block(cache.relu1.clone(), h, w);
            let (dx, dw) = dynamic_gate_backward(&b, &ctx, &self.gate.value, 0, &d_gated1)
                .expect("gate shape");
            add_into(&mut self.gate.grad, &dw);
            d_gated1 = dx;
        }
        relu_backward(&cache.relu1, &mut d_gated1);
        self.conv1.backward(&cache.cols1, &d_gated1, h, w, need_dx)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Parameters for CnnModel {
    fn params(&self) -> Vec<&Param> {
        vec![
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.importance,
            &self.gate,
            &self.fc.weight,
            &self.fc.bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.importance,
            &mut self.gate,
            &mut self.fc.weight,
            &mut self.fc.bias,
        ]
    }
}
