//! Per-loop signal conditioning: loop timing, decimation, low-pass filtering,
//! spike rejection and the audio feature.

use std::f64::consts::PI;

use thiserror::Error;

pub const SAMPLE_RATE_HZ: f64 = 512.0;
pub const SAMPLES_PER_LOOP: usize = 256;
pub const BEATS_PER_LOOP: f64 = 4.0;
pub const FIR_TAPS: usize = 65;
pub const AUDIO_WINDOW_S: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("bpm must be positive, got {0}")]
    NonPositiveBpm(i64),
    #[error("expected {expected} raw samples, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("cutoff {cutoff} Hz must lie strictly between 0 and {nyquist} Hz")]
    InvalidCutoff { cutoff: f64, nyquist: f64 },
}

/// One loop is four beats.
pub fn loop_duration_seconds(bpm: i64) -> Result<f64, SignalError> {
    if bpm <= 0 {
        return Err(SignalError::NonPositiveBpm(bpm));
    }
    Ok(BEATS_PER_LOOP * 60.0 / bpm as f64)
}

/// Raw samples recorded over one loop at [`SAMPLE_RATE_HZ`].
pub fn raw_samples_per_loop(bpm: i64) -> Result<usize, SignalError> {
    Ok((SAMPLE_RATE_HZ * loop_duration_seconds(bpm)?).round() as usize)
}

/// Average `raw` into exactly [`SAMPLES_PER_LOOP`] bins of equal width.
///
/// Bin edges fall at `i * len / 256`; a raw sample straddling an edge is split
/// between the two bins by overlap, so the output mean equals the input mean.
pub fn downsample_loop(raw: &[f64], bpm: i64) -> Result<Vec<f64>, SignalError> {
    let expected = raw_samples_per_loop(bpm)?;
    if raw.len() != expected {
        return Err(SignalError::LengthMismatch {
            expected,
            actual: raw.len(),
        });
    }
    Ok(average_bins(raw, SAMPLES_PER_LOOP))
}

pub(crate) fn average_bins(raw: &[f64], bins: usize) -> Vec<f64> {
    let len = raw.len();
    // Positions are scaled by `bins` so every edge is an integer.
    let mut out = Vec::with_capacity(bins);
    for i in 0..bins {
        let lo = i * len;
        let hi = (i + 1) * len;
        let mut acc = 0.0;
        let mut j = lo / bins;
        while j * bins < hi && j < len {
            let s = (j * bins).max(lo);
            let e = ((j + 1) * bins).min(hi);
            acc += raw[j] * (e - s) as f64;
            j += 1;
        }
        out.push(acc / len as f64);
    }
    out
}

/// Hamming-windowed sinc low-pass kernel with unit DC gain.
pub fn fir_lowpass_kernel(taps: usize, cutoff_hz: f64, rate_hz: f64) -> Vec<f64> {
    let fc = cutoff_hz / rate_hz;
    let mid = (taps - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let x = n as f64 - mid;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            let w = 0.54 - 0.46 * (2.0 * PI * n as f64 / (taps - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let dc: f64 = h.iter().sum();
    for v in &mut h {
        *v /= dc;
    }
    h
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

/// Zero-phase 65-tap FIR low-pass with mirror-symmetric boundary extension.
pub fn lowpass_filter(
    samples: &[f64],
    cutoff_hz: f64,
    rate_hz: f64,
) -> Result<Vec<f64>, SignalError> {
    let nyquist = rate_hz / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(SignalError::InvalidCutoff {
            cutoff: cutoff_hz,
            nyquist,
        });
    }
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let h = fir_lowpass_kernel(FIR_TAPS, cutoff_hz, rate_hz);
    let half = (FIR_TAPS / 2) as isize;
    let n = samples.len();
    Ok((0..n as isize)
        .map(|i| {
            h.iter()
                .enumerate()
                .map(|(k, &c)| c * samples[reflect(i + k as isize - half, n)])
                .sum()
        })
        .collect())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Replace samples further than `threshold * MAD` from the median by linear
/// interpolation between the nearest kept neighbours.
///
/// A zero MAD disables rejection. If every sample is rejected the output is
/// the median everywhere.
pub fn reject_artifacts(samples: &[f64], threshold: f64) -> (Vec<f64>, Vec<bool>) {
    let n = samples.len();
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let med = median(&mut samples.to_vec());
    let mad = median(&mut samples.iter().map(|x| (x - med).abs()).collect::<Vec<_>>());
    if mad == 0.0 || !threshold.is_finite() {
        return (samples.to_vec(), vec![false; n]);
    }
    let mask: Vec<bool> = samples
        .iter()
        .map(|x| (x - med).abs() > threshold * mad)
        .collect();
    let kept: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
    if kept.is_empty() {
        return (vec![med; n], mask);
    }

    let mut out = samples.to_vec();
    let mut next_kept = 0;
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        while next_kept < kept.len() && kept[next_kept] < i {
            next_kept += 1;
        }
        let left = next_kept.checked_sub(1).map(|k| kept[k]);
        let right = kept.get(next_kept).copied();
        out[i] = match (left, right) {
            (Some(l), Some(r)) => {
                let t = (i - l) as f64 / (r - l) as f64;
                samples[l] + t * (samples[r] - samples[l])
            }
            (Some(l), None) => samples[l],
            (None, Some(r)) => samples[r],
            (None, None) => med,
        };
    }
    (out, mask)
}

/// Mean absolute amplitude over the first 200 ms of a loop's audio.
pub fn audio_feature(audio: &[f64], rate_hz: f64) -> f64 {
    let n = ((AUDIO_WINDOW_S * rate_hz).round() as usize).min(audio.len());
    if n == 0 {
        return 0.0;
    }
    audio[..n].iter().map(|x| x.abs()).sum::<f64>() / n as f64
}
