//! Layer primitives over `[channel][height][width]` feature maps.
//!
//! Each layer exposes an explicit `forward` that returns whatever the matching
//! `backward` needs, and a `backward` that accumulates parameter gradients.

use rand::Rng;

use super::linalg::{dot, gemm_acc, gemm_nt_acc, gemm_tn_acc};
use super::param::Param;

/// Kaiming-uniform bound for ReLU layers, `sqrt(6 / fan_in)`.
fn kaiming_uniform<R: Rng>(rng: &mut R, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// 2-D convolution with odd square kernel, stride 1 and zero "same" padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out][in][kh][kw]`
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let fan_in = in_channels * kernel * kernel;
        let weight = Param::new(
            format!("{name}.weight"),
            vec![out_channels, in_channels, kernel, kernel],
            kaiming_uniform(rng, out_channels * fan_in, fan_in),
        );
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            weight,
            bias: Param::zeros(format!("{name}.bias"), vec![out_channels]),
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Unfold `x` into `[in * k * k][h * w]`.
    fn im2col(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut cols = vec![0.0; self.patch_len() * hw];
        for c in 0..self.in_channels {
            let plane = &x[c * hw..(c + 1) * hw];
            for dy in 0..k {
                for dx in 0..k {
                    let row = &mut cols[((c * k + dy) * k + dx) * hw..][..hw];
                    let oy = dy as isize - pad;
                    let ox = dx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + oy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let dst = &mut row[y * w..(y + 1) * w];
                        for xo in 0..w {
                            let sx = xo as isize + ox;
                            if sx >= 0 && sx < w as isize {
                                dst[xo] = src[sx as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize) -> Vec<f64> {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut dx = vec![0.0; self.in_channels * hw];
        for c in 0..self.in_channels {
            let plane = &mut dx[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * hw..][..hw];
                    let oy = ky as isize - pad;
                    let ox = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + oy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xo in 0..w {
                            let sx = xo as isize + ox;
                            if sx >= 0 && sx < w as isize {
                                plane[sy as usize * w + sx as usize] += row[y * w + xo];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// Returns the output map and the unfolded input for `backward`.
    pub fn forward(&self, x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_channels * h * w);
        let hw = h * w;
        let cols = if self.kernel == 1 {
            x.to_vec()
        } else {
            self.im2col(x, h, w)
        };
        let mut y = vec![0.0; self.out_channels * hw];
        for (o, b) in self.bias.value.iter().enumerate() {
            y[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = *b);
        }
        gemm_acc(
            &self.weight.value,
            &cols,
            &mut y,
            self.out_channels,
            self.patch_len(),
            hw,
        );
        (y, cols)
    }

    /// Accumulates weight and bias gradients; returns the input gradient when
    /// `need_dx` is set.
    pub fn backward(
        &mut self,
        cols: &[f64],
        dy: &[f64],
        h: usize,
        w: usize,
        need_dx: bool,
    ) -> Option<Vec<f64>> {
        let hw = h * w;
        let pl = self.patch_len();
        for o in 0..self.out_channels {
            self.bias.grad[o] += dy[o * hw..(o + 1) * hw].iter().sum::<f64>();
        }
        gemm_nt_acc(dy, cols, &mut self.weight.grad, self.out_channels, hw, pl);
        if !need_dx {
            return None;
        }
        let mut dcols = vec![0.0; pl * hw];
        gemm_tn_acc(
            &self.weight.value,
            dy,
            &mut dcols,
            self.out_channels,
            pl,
            hw,
        );
        Some(if self.kernel == 1 {
            dcols
        } else {
            self.col2im(&dcols, h, w)
        })
    }
}

pub fn relu_forward(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `dy` in place where the ReLU output was zero.
pub fn relu_backward(y: &[f64], dy: &mut [f64]) {
    for (g, &o) in dy.iter_mut().zip(y) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 max pooling with stride 2. `h` and `w` must be even.
pub fn maxpool2_forward(x: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    assert!(h % 2 == 0 && w % 2 == 0, "pool needs even dims");
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                y.push(x[best]);
                arg.push(best);
            }
        }
    }
    (y, arg)
}

pub fn maxpool2_backward(arg: &[usize], dy: &[f64], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (&i, &g) in arg.iter().zip(dy) {
        dx[i] += g;
    }
    dx
}

/// Fully connected layer, `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Linear {
            inputs,
            outputs,
            weight: Param::new(
                format!("{name}.weight"),
                vec![outputs, inputs],
                kaiming_uniform(rng, outputs * inputs, inputs),
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![outputs]),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        (0..self.outputs)
            .map(|o| {
                self.bias.value[o]
                    + dot(
                        &self.weight.value[o * self.inputs..(o + 1) * self.inputs],
                        x,
                    )
            })
            .collect()
    }

    pub fn backward(&mut self, x: &[f64], dy: &[f64], need_dx: bool) -> Option<Vec<f64>> {
        let n = self.inputs;
        for (o, &g) in dy.iter().enumerate() {
            self.bias.grad[o] += g;
            if g != 0.0 {
                super::linalg::axpy(g, x, &mut self.weight.grad[o * n..(o + 1) * n]);
            }
        }
        if !need_dx {
            return None;
        }
        let mut dx = vec![0.0; n];
        for (o, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                super::linalg::axpy(g, &self.weight.value[o * n..(o + 1) * n], &mut dx);
            }
        }
        Some(dx)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub const PROB_FLOOR: f64 = 1e-12;

/// Soft-label cross-entropy `-sum_j y_j ln p_j` with `p` clamped to
/// `[1e-12, 1]`.
pub fn cross_entropy(probs: &[f64], target: &[f64]) -> f64 {
    -probs
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            if y == 0.0 {
                0.0
            } else {
                y * p.clamp(PROB_FLOOR, 1.0).ln()
            }
        })
        .sum::<f64>()
}

/// Batch mean of [`cross_entropy`].
pub fn batch_cross_entropy(probs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let n = probs.len() as f64;
    probs
        .iter()
        .zip(targets)
        .map(|(p, y)| cross_entropy(p, y))
        .sum::<f64>()
        / n
}

/// Gradient of softmax followed by cross-entropy with respect to the logits,
/// for a target that sums to one.
pub fn softmax_ce_grad(probs: &[f64], target: &[f64], scale: f64) -> Vec<f64> {
    probs
        .iter()
        .zip(target)
        .map(|(p, y)| scale * (p - y))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(
            cross_entropy(&[0.0, 1.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]),
            0.0
        );
        let ln4 = (4.0f64).ln();
        assert!((cross_entropy(&[0.25; 4], &[1.0, 0.0, 0.0, 0.0]) - ln4).abs() < 1e-15);
        let ln2 = (2.0f64).ln();
        let ce = cross_entropy(&[0.5, 0.5, 0.0, 0.0], &[0.5, 0.5, 0.0, 0.0]);
        assert!((ce - ln2).abs() < 1e-15);
        // Clamping keeps a confident miss finite.
        assert!(cross_entropy(&[1.0, 0.0], &[0.0, 1.0]).is_finite());
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -1000.0, 3.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
    }

    #[test]
    fn conv_same_padding_shape() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2d::new("c", 2, 3, 3, &mut rng);
        let x = vec![1.0; 2 * 6 * 4];
        let (y, _) = conv.forward(&x, 6, 4);
        assert_eq!(y.len(), 3 * 6 * 4);
    }

    #[test]
    fn maxpool_picks_max() {
        let x = [1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, -1.0];
        // one channel, 2 x 4
        let (y, arg) = maxpool2_forward(&x, 1, 2, 4);
        assert_eq!(y, vec![5.0, 9.0]);
        assert_eq!(arg, vec![1, 6]);
        let dx = maxpool2_backward(&arg, &[1.0, 2.0], 8);
        assert_eq!(dx, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }
}
