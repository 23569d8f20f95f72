//! Sessions, cycle tensors and the dataset preparation steps that turn one
//! into the other: gradient labelling, cycle assembly, normalization,
//! augmentation and session-level splitting.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::TgamPacket;
use crate::labels::{LabelDistribution, SeasonState};
use crate::signal::SAMPLES_PER_LOOP;

pub const LOOPS_PER_SESSION: usize = 200;
pub const LOOPS_PER_CYCLE: usize = 4;
pub const CYCLES_PER_SESSION: usize = LOOPS_PER_SESSION / LOOPS_PER_CYCLE;
pub const CHANNELS: usize = 2;
pub const CYCLE_LEN: usize = SAMPLES_PER_LOOP * LOOPS_PER_CYCLE * CHANNELS;
pub const MIN_BPM: u32 = 90;
pub const MAX_BPM: u32 = 140;
pub const BPM_STEP: u32 = 5;
pub const ARRANGEMENT_SLOTS: usize = 13;
pub const MIN_SESSIONS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("session has {0} loops, expected {LOOPS_PER_SESSION}")]
    IncompleteSession(usize),
    #[error("loop {index}: {reason}")]
    InvalidLoop { index: usize, reason: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("need at least {MIN_SESSIONS} sessions, got {0}")]
    TooFewSessions(usize),
}

pub fn is_valid_bpm(bpm: u32) -> bool {
    (MIN_BPM..=MAX_BPM).contains(&bpm) && bpm % BPM_STEP == 0
}

/// Rhythm parameters in force during a loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rhythm {
    pub bpm: u32,
    pub density: u32,
    pub style: String,
}

/// Everything recorded over one rhythm loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub eeg_samples: Vec<f64>,
    pub audio_feature: f64,
    pub packet: TgamPacket,
    pub bpm: u32,
    pub density: u32,
    pub style: String,
    /// Opaque drum arrangement code, carried through but never interpreted.
    #[serde(default)]
    pub arrangement: [u8; ARRANGEMENT_SLOTS],
}

impl LoopRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.eeg_samples.len() != SAMPLES_PER_LOOP {
            return Err(format!(
                "{} eeg samples, expected {SAMPLES_PER_LOOP}",
                self.eeg_samples.len()
            ));
        }
        if !is_valid_bpm(self.bpm) {
            return Err(format!("bpm {} not in 90..=140 step 5", self.bpm));
        }
        if !self.audio_feature.is_finite() || self.eeg_samples.iter().any(|x| !x.is_finite()) {
            return Err("non-finite sample".into());
        }
        self.packet.validate().map_err(|e| e.to_string())
    }

    pub fn rhythm(&self) -> Rhythm {
        Rhythm {
            bpm: self.bpm,
            density: self.density,
            style: self.style.clone(),
        }
    }
}

/// A speed or density change made during a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operation {
    pub loop_index: usize,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub initial_state: SeasonState,
    pub final_state: SeasonState,
    #[serde(default)]
    pub transition_loop: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub operations: Vec<Operation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub header: SessionHeader,
    pub loops: Vec<LoopRecord>,
}

impl Session {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.loops.len() != LOOPS_PER_SESSION {
            return Err(PipelineError::IncompleteSession(self.loops.len()));
        }
        for (index, l) in self.loops.iter().enumerate() {
            l.validate()
                .map_err(|reason| PipelineError::InvalidLoop { index, reason })?;
        }
        Ok(())
    }
}

/// One cycle of four loops: `256 (time) x 4 (loop) x 2 (eeg, audio)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleTensor {
    /// Row-major `[time][loop][channel]`.
    pub data: Vec<f64>,
    pub label: LabelDistribution,
    pub attention: f64,
    pub meditation: f64,
    pub rhythm: Rhythm,
}

impl CycleTensor {
    #[inline]
    pub fn index(t: usize, l: usize, c: usize) -> usize {
        (t * LOOPS_PER_CYCLE + l) * CHANNELS + c
    }

    pub fn get(&self, t: usize, l: usize, c: usize) -> f64 {
        self.data[Self::index(t, l, c)]
    }

    pub fn channel(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(c).step_by(CHANNELS).copied()
    }
}

/// Linear gradient labels, one per cycle.
///
/// Without a transition the whole session is the initial state. Otherwise the
/// target weight ramps from 0 at the ramp start to 1 at the last cycle; the
/// ramp starts at cycle 0 unless `transition_loop` says otherwise.
pub fn assign_labels(header: &SessionHeader) -> Vec<LabelDistribution> {
    let from = header.initial_state;
    let to = header.final_state;
    if from == to {
        return vec![LabelDistribution::one_hot(from); CYCLES_PER_SESSION];
    }
    let last = CYCLES_PER_SESSION - 1;
    let start = header
        .transition_loop
        .map(|l| (l / LOOPS_PER_CYCLE).min(last))
        .unwrap_or(0);
    (0..CYCLES_PER_SESSION)
        .map(|c| {
            if c == last {
                LabelDistribution::one_hot(to)
            } else if c <= start {
                LabelDistribution::one_hot(from)
            } else {
                let t = (c - start) as f64 / (last - start) as f64;
                LabelDistribution::blend(from, to, t)
            }
        })
        .collect()
}

/// Group loops `4c..4c+4` into cycle `c`.
pub fn assemble_cycles(session: &Session) -> Result<Vec<CycleTensor>, PipelineError> {
    if session.loops.len() != LOOPS_PER_SESSION {
        return Err(PipelineError::IncompleteSession(session.loops.len()));
    }
    let labels = assign_labels(&session.header);
    Ok(session
        .loops
        .chunks_exact(LOOPS_PER_CYCLE)
        .zip(labels)
        .map(|(loops, label)| cycle_from_loops(loops, label))
        .collect())
}

pub fn cycle_from_loops(loops: &[LoopRecord], label: LabelDistribution) -> CycleTensor {
    debug_assert_eq!(loops.len(), LOOPS_PER_CYCLE);
    let mut data = vec![0.0; CYCLE_LEN];
    for (l, rec) in loops.iter().enumerate() {
        for (t, &x) in rec.eeg_samples.iter().enumerate() {
            data[CycleTensor::index(t, l, 0)] = x;
            data[CycleTensor::index(t, l, 1)] = rec.audio_feature;
        }
    }
    let n = loops.len() as f64;
    CycleTensor {
        data,
        label,
        attention: loops.iter().map(|r| r.packet.attention as f64).sum::<f64>() / n,
        meditation: loops
            .iter()
            .map(|r| r.packet.meditation as f64)
            .sum::<f64>()
            / n,
        rhythm: loops[0].rhythm(),
    }
}

/// Per-channel z-score statistics, fitted on training data only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl NormStats {
    pub fn fit(train: &[CycleTensor]) -> Result<Self, PipelineError> {
        if train.is_empty() {
            return Err(PipelineError::EmptyDataset);
        }
        let mut mean = [0.0; CHANNELS];
        let mut std = [0.0; CHANNELS];
        for c in 0..CHANNELS {
            let n = (train.len() * CYCLE_LEN / CHANNELS) as f64;
            let m = train.iter().flat_map(|t| t.channel(c)).sum::<f64>() / n;
            let var = train
                .iter()
                .flat_map(|t| t.channel(c))
                .map(|x| (x - m) * (x - m))
                .sum::<f64>()
                / n;
            mean[c] = m;
            std[c] = var.sqrt();
        }
        Ok(NormStats { mean, std })
    }

    pub fn identity() -> Self {
        NormStats {
            mean: [0.0; CHANNELS],
            std: [1.0; CHANNELS],
        }
    }

    /// A zero-variance channel maps to zeros.
    pub fn apply(&self, t: &mut CycleTensor) {
        for (i, x) in t.data.iter_mut().enumerate() {
            let c = i % CHANNELS;
            *x = if self.std[c] > 0.0 {
                (*x - self.mean[c]) / self.std[c]
            } else {
                0.0
            };
        }
    }

    pub fn invert(&self, t: &mut CycleTensor) {
        for (i, x) in t.data.iter_mut().enumerate() {
            let c = i % CHANNELS;
            *x = *x * self.std[c] + self.mean[c];
        }
    }
}

/// Fit on `train`, then normalize every set with those statistics.
pub fn normalize(
    train: &mut [CycleTensor],
    others: &mut [&mut [CycleTensor]],
) -> Result<NormStats, PipelineError> {
    let stats = NormStats::fit(train)?;
    for t in train.iter_mut() {
        stats.apply(t);
    }
    for set in others.iter_mut() {
        for t in set.iter_mut() {
            stats.apply(t);
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub max_shift: usize,
    pub sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_shift: 16,
            sigma: 0.05,
        }
    }
}

/// Circular time shift of every loop column plus Gaussian noise on the EEG
/// channel. Deterministic in `seed`.
pub fn augment(t: &CycleTensor, cfg: &AugmentConfig, seed: u64) -> CycleTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = cfg.max_shift as i64;
    let shift = if m > 0 { rng.random_range(-m..=m) } else { 0 };
    let n = SAMPLES_PER_LOOP as i64;
    let mut out = t.clone();
    for time in 0..SAMPLES_PER_LOOP {
        let src = (time as i64 - shift).rem_euclid(n) as usize;
        for l in 0..LOOPS_PER_CYCLE {
            for c in 0..CHANNELS {
                out.data[CycleTensor::index(time, l, c)] = t.get(src, l, c);
            }
        }
    }
    if cfg.sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.sigma).expect("finite sigma");
        for time in 0..SAMPLES_PER_LOOP {
            for l in 0..LOOPS_PER_CYCLE {
                out.data[CycleTensor::index(time, l, 0)] += noise.sample(&mut rng);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            val_fraction: 0.1,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Session indices per partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffle session indices and cut them into train/val/test.
pub fn split(n_sessions: usize, cfg: &SplitConfig) -> Result<Split, PipelineError> {
    if n_sessions < MIN_SESSIONS {
        return Err(PipelineError::TooFewSessions(n_sessions));
    }
    let mut idx: Vec<usize> = (0..n_sessions).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_test = ((n_sessions as f64 * cfg.test_fraction).round() as usize).max(1);
    let n_val = ((n_sessions as f64 * cfg.val_fraction).round() as usize).max(1);
    let test = idx[..n_test].to_vec();
    let val = idx[n_test..n_test + n_val].to_vec();
    let train = idx[n_test + n_val..].to_vec();
    Ok(Split { train, val, test })
}
