//! Level-of-detail feature operators: importance weighting, time pooling,
//! context gating and the screen-space error fidelity metric.
//!
//! Each differentiable operator has a matching `*_backward` used by the
//! classifier.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LodError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("pool window must be positive, got {0}")]
    InvalidWindow(usize),
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("non-finite feature value")]
    NonFinite,
}

/// A dense feature array with a designated time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub time_axis: usize,
}

/// `(outer, len, inner)` strides around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl FeatureBlock {
    pub fn new(shape: Vec<usize>, data: Vec<f64>, time_axis: usize) -> Result<Self, LodError> {
        if time_axis >= shape.len() {
            return Err(LodError::InvalidAxis {
                axis: time_axis,
                rank: shape.len(),
            });
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(LodError::ShapeMismatch(shape, vec![data.len()]));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(LodError::NonFinite);
        }
        Ok(FeatureBlock {
            shape,
            data,
            time_axis,
        })
    }

    /// A 1-D series whose only axis is time.
    pub fn series(data: Vec<f64>) -> Self {
        FeatureBlock {
            shape: vec![data.len()],
            data,
            time_axis: 0,
        }
    }

    pub fn time_len(&self) -> usize {
        self.shape[self.time_axis]
    }

    fn with_data(&self, data: Vec<f64>) -> Self {
        FeatureBlock {
            shape: self.shape.clone(),
            data,
            time_axis: self.time_axis,
        }
    }
}

/// Learned per-feature scale, broadcast against a [`FeatureBlock`] of equal
/// rank where each dimension either matches or is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceWeights {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Map each element of `x` to the flat index of its broadcast weight.
fn broadcast_index(x_shape: &[usize], w_shape: &[usize]) -> Result<Vec<usize>, LodError> {
    if x_shape.len() != w_shape.len()
        || x_shape.iter().zip(w_shape).any(|(&a, &b)| b != 1 && b != a)
    {
        return Err(LodError::ShapeMismatch(x_shape.to_vec(), w_shape.to_vec()));
    }
    let n: usize = x_shape.iter().product();
    let rank = x_shape.len();
    let mut w_strides = vec![0usize; rank];
    let mut s = 1;
    for d in (0..rank).rev() {
        w_strides[d] = if w_shape[d] == 1 { 0 } else { s };
        s *= w_shape[d];
    }
    let mut idx = Vec::with_capacity(n);
    let mut coord = vec![0usize; rank];
    for _ in 0..n {
        idx.push(coord.iter().zip(&w_strides).map(|(c, s)| c * s).sum());
        for d in (0..rank).rev() {
            coord[d] += 1;
            if coord[d] < x_shape[d] {
                break;
            }
            coord[d] = 0;
        }
    }
    Ok(idx)
}

/// Elementwise `x * w` with broadcasting.
pub fn importance_weight(
    x: &FeatureBlock,
    w: &ImportanceWeights,
) -> Result<FeatureBlock, LodError> {
    let idx = broadcast_index(&x.shape, &w.shape)?;
    Ok(x.with_data(
        x.data
            .iter()
            .zip(&idx)
            .map(|(v, &i)| v * w.values[i])
            .collect(),
    ))
}

/// Returns `(dx, dw)`.
pub fn importance_weight_backward(
    x: &FeatureBlock,
    w: &ImportanceWeights,
    dy: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), LodError> {
    let idx = broadcast_index(&x.shape, &w.shape)?;
    let mut dw = vec![0.0; w.values.len()];
    let dx = dy
        .iter()
        .zip(&x.data)
        .zip(&idx)
        .map(|((g, v), &i)| {
            dw[i] += g * v;
            g * w.values[i]
        })
        .collect();
    Ok((dx, dw))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Max,
    Mean,
}

/// Pool the time axis in windows of `k`. A length that `k` does not divide is
/// padded on the right by repeating the last sample.
pub fn pool_time(x: &FeatureBlock, k: usize, mode: PoolMode) -> Result<FeatureBlock, LodError> {
    pool_time_indexed(x, k, mode).map(|(y, _)| y)
}

/// Source time index of every input sample of each output window, right-padded.
fn window_sources(len: usize, k: usize, out_len: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..out_len).flat_map(move |o| (0..k).map(move |j| (o, (o * k + j).min(len - 1))))
}

fn pool_time_indexed(
    x: &FeatureBlock,
    k: usize,
    mode: PoolMode,
) -> Result<(FeatureBlock, Vec<usize>), LodError> {
    if k == 0 {
        return Err(LodError::InvalidWindow(k));
    }
    let (outer, len, inner) = split_axis(&x.shape, x.time_axis);
    let out_len = len.div_ceil(k);
    let mut shape = x.shape.clone();
    shape[x.time_axis] = out_len;
    let mut data = vec![0.0; outer * out_len * inner];
    let mut arg = vec![0usize; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            for (w, t) in window_sources(len, k, out_len) {
                let src = (o * len + t) * inner + i;
                let dst = (o * out_len + w) * inner + i;
                let v = x.data[src];
                let first = t == w * k;
                match mode {
                    PoolMode::Mean => data[dst] += v / k as f64,
                    PoolMode::Max => {
                        if first || v > data[dst] {
                            data[dst] = v;
                            arg[dst] = src;
                        }
                    }
                }
            }
        }
    }
    Ok((
        FeatureBlock {
            shape,
            data,
            time_axis: x.time_axis,
        },
        arg,
    ))
}

pub fn pool_time_backward(
    x: &FeatureBlock,
    k: usize,
    mode: PoolMode,
    dy: &[f64],
) -> Result<Vec<f64>, LodError> {
    let (_, arg) = pool_time_indexed(x, k, mode)?;
    let (outer, len, inner) = split_axis(&x.shape, x.time_axis);
    let out_len = len.div_ceil(k);
    let mut dx = vec![0.0; x.data.len()];
    match mode {
        PoolMode::Max => {
            for (&src, &g) in arg.iter().zip(dy) {
                dx[src] += g;
            }
        }
        PoolMode::Mean => {
            for o in 0..outer {
                for i in 0..inner {
                    for (w, t) in window_sources(len, k, out_len) {
                        dx[(o * len + t) * inner + i] +=
                            dy[(o * out_len + w) * inner + i] / k as f64;
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Repeat each time step `k` times and truncate to `len`.
pub fn upsample_time(x: &FeatureBlock, k: usize, len: usize) -> FeatureBlock {
    let (outer, short, inner) = split_axis(&x.shape, x.time_axis);
    let mut shape = x.shape.clone();
    shape[x.time_axis] = len;
    let mut data = vec![0.0; outer * len * inner];
    for o in 0..outer {
        for t in 0..len {
            let s = (t / k).min(short - 1);
            for i in 0..inner {
                data[(o * len + t) * inner + i] = x.data[(o * short + s) * inner + i];
            }
        }
    }
    FeatureBlock {
        shape,
        data,
        time_axis: x.time_axis,
    }
}

/// Mean squared elementwise difference.
pub fn screen_space_error(x: &FeatureBlock, x_hat: &FeatureBlock) -> Result<f64, LodError> {
    if x.shape != x_hat.shape {
        return Err(LodError::ShapeMismatch(
            x.shape.clone(),
            x_hat.shape.clone(),
        ));
    }
    let n = x.data.len() as f64;
    Ok(x.data
        .iter()
        .zip(&x_hat.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// SSE between `x` and its pool-then-upsample reconstruction.
pub fn pooling_fidelity(x: &FeatureBlock, k: usize, mode: PoolMode) -> Result<f64, LodError> {
    let pooled = pool_time(x, k, mode)?;
    screen_space_error(x, &upsample_time(&pooled, k, x.time_len()))
}

/// Gradient of [`pooling_fidelity`] with respect to `x`.
pub fn pooling_fidelity_backward(
    x: &FeatureBlock,
    k: usize,
    mode: PoolMode,
) -> Result<Vec<f64>, LodError> {
    let pooled = pool_time(x, k, mode)?;
    let recon = upsample_time(&pooled, k, x.time_len());
    let n = x.data.len() as f64;
    let r: Vec<f64> = x
        .data
        .iter()
        .zip(&recon.data)
        .map(|(a, b)| 2.0 * (a - b) / n)
        .collect();
    // d/dx of the reconstruction: upsample transposed is a window sum.
    let (outer, len, inner) = split_axis(&x.shape, x.time_axis);
    let short = pooled.time_len();
    let mut d_pooled = vec![0.0; pooled.data.len()];
    for o in 0..outer {
        for t in 0..len {
            let s = (t / k).min(short - 1);
            for i in 0..inner {
                d_pooled[(o * short + s) * inner + i] += r[(o * len + t) * inner + i];
            }
        }
    }
    let through = pool_time_backward(x, k, mode, &d_pooled)?;
    Ok(r.iter().zip(&through).map(|(a, b)| a - b).collect())
}

/// Attention and meditation on the device's 0..=100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextVector {
    pub attention: f64,
    pub meditation: f64,
}

impl ContextVector {
    /// Rescaled to `[0, 1]` before entering the gate.
    pub fn scaled(&self) -> [f64; 2] {
        [self.attention / 100.0, self.meditation / 100.0]
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(W_e E)` for a `[channels][2]` gate matrix.
pub fn gate_values(e: &ContextVector, w_e: &[f64]) -> Vec<f64> {
    let s = e.scaled();
    w_e.chunks_exact(2)
        .map(|row| sigmoid(row[0] * s[0] + row[1] * s[1]))
        .collect()
}

/// Multiply channel `c` of `f_x` (along `channel_axis`) by `sigmoid(W_e E)[c]`.
pub fn dynamic_gate(
    f_x: &FeatureBlock,
    e: &ContextVector,
    w_e: &[f64],
    channel_axis: usize,
) -> Result<FeatureBlock, LodError> {
    let gate = checked_gate(f_x, e, w_e, channel_axis)?;
    let (_, channels, inner) = split_axis(&f_x.shape, channel_axis);
    Ok(f_x.with_data(
        f_x.data
            .iter()
            .enumerate()
            .map(|(i, v)| v * gate[(i / inner) % channels])
            .collect(),
    ))
}

fn checked_gate(
    f_x: &FeatureBlock,
    e: &ContextVector,
    w_e: &[f64],
    channel_axis: usize,
) -> Result<Vec<f64>, LodError> {
    if channel_axis >= f_x.shape.len() {
        return Err(LodError::InvalidAxis {
            axis: channel_axis,
            rank: f_x.shape.len(),
        });
    }
    if w_e.len() != 2 * f_x.shape[channel_axis] {
        return Err(LodError::ShapeMismatch(
            vec![f_x.shape[channel_axis], 2],
            vec![w_e.len()],
        ));
    }
    Ok(gate_values(e, w_e))
}

/// Returns `(dx, dw_e)`.
pub fn dynamic_gate_backward(
    f_x: &FeatureBlock,
    e: &ContextVector,
    w_e: &[f64],
    channel_axis: usize,
    dy: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), LodError> {
    let gate = checked_gate(f_x, e, w_e, channel_axis)?;
    let (_, channels, inner) = split_axis(&f_x.shape, channel_axis);
    let mut dgate = vec![0.0; channels];
    let dx = dy
        .iter()
        .zip(&f_x.data)
        .enumerate()
        .map(|(i, (g, v))| {
            let c = (i / inner) % channels;
            dgate[c] += g * v;
            g * gate[c]
        })
        .collect();
    let s = e.scaled();
    let mut dw = vec![0.0; w_e.len()];
    for c in 0..channels {
        let dz = dgate[c] * gate[c] * (1.0 - gate[c]);
        dw[2 * c] = dz * s[0];
        dw[2 * c + 1] = dz * s[1];
    }
    Ok((dx, dw))
}
