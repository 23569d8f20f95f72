//! Synthetic subject: maps rhythm parameters to EEG, eSense values and a
//! drifting perceptual-state mixture. Stands in for the human in the loop.
//!
//! Each [`SubjectEnv::step`] applies one rhythm action, lets the subject's
//! state drift toward the season whose preferred rhythm is nearest, then
//! records one cycle of four loops.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{BandPowers, TgamPacket, MAX_BAND_POWER};
use crate::labels::{LabelDistribution, SeasonState, NUM_STATES};
use crate::session::{
    assign_labels, is_valid_bpm, LoopRecord, Operation, Rhythm, Session, SessionHeader,
    ARRANGEMENT_SLOTS, BPM_STEP, CYCLES_PER_SESSION, LOOPS_PER_CYCLE, MAX_BPM, MIN_BPM,
};
use crate::signal::{
    audio_feature, downsample_loop, lowpass_filter, raw_samples_per_loop, SAMPLE_RATE_HZ,
};

pub const START_BPM: u32 = 115;
pub const ESENSE_START: f64 = 50.0;
pub const ESENSE_RATE: f64 = 0.5;
/// Standard deviation of eSense noise at `noise_scale = 1`.
pub const ESENSE_NOISE: f64 = 5.0;
pub const SUCCESS_WEIGHT: f64 = 0.9;
/// Component frequencies for the delta, theta, alpha and beta groups.
pub const COMPONENT_HZ: [f64; 4] = [2.0, 6.0, 10.0, 20.0];
/// Sinusoid amplitude per square-root unit of band power.
pub const EEG_SCALE: f64 = 0.1;
pub const LOWPASS_HZ: f64 = 45.0;
pub const AUDIO_RATE_HZ: f64 = 8000.0;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("episode finished after {0} cycles")]
    EpisodeFinished(usize),
}

/// Rhythm adjustments available to the guide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    IncreaseBpm = 0,
    DecreaseBpm = 1,
    IncreaseDensity = 2,
    DecreaseDensity = 3,
    SwitchStyle = 4,
}

pub const NUM_ACTIONS: usize = 5;

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::IncreaseBpm,
        Action::DecreaseBpm,
        Action::IncreaseDensity,
        Action::DecreaseDensity,
        Action::SwitchStyle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::IncreaseBpm => "increase_bpm",
            Action::DecreaseBpm => "decrease_bpm",
            Action::IncreaseDensity => "increase_density",
            Action::DecreaseDensity => "decrease_density",
            Action::SwitchStyle => "switch_style",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Preferred rhythm and EEG signature of one perceptual state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeasonProfile {
    pub state: SeasonState,
    pub preferred_bpm: u32,
    pub preferred_density: u32,
    /// Mean band powers in [`crate::codec::BAND_NAMES`] order.
    pub band_signature: [f64; 8],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectProfile {
    pub name: String,
    pub seasons: Vec<SeasonProfile>,
    pub responsiveness: f64,
    pub noise_scale: f64,
    pub min_density: u32,
    pub max_density: u32,
    pub styles: Vec<String>,
}

impl Default for SubjectProfile {
    fn default() -> Self {
        let season = |state, bpm, density, sig| SeasonProfile {
            state,
            preferred_bpm: bpm,
            preferred_density: density,
            band_signature: sig,
        };
        SubjectProfile {
            name: "default".into(),
            seasons: vec![
                season(
                    SeasonState::Spring,
                    125,
                    6,
                    [30e3, 60e3, 25e3, 20e3, 12e3, 8e3, 3e3, 2e3],
                ),
                season(
                    SeasonState::Summer,
                    140,
                    8,
                    [20e3, 15e3, 15e3, 15e3, 40e3, 35e3, 6e3, 4e3],
                ),
                season(
                    SeasonState::Autumn,
                    110,
                    4,
                    [35e3, 20e3, 40e3, 30e3, 10e3, 8e3, 3e3, 2e3],
                ),
                season(
                    SeasonState::Winter,
                    95,
                    2,
                    [80e3, 25e3, 30e3, 20e3, 8e3, 6e3, 2e3, 1.5e3],
                ),
            ],
            responsiveness: 0.3,
            noise_scale: 0.1,
            min_density: 1,
            max_density: 9,
            styles: vec!["jazz".into(), "rock".into(), "hiphop".into()],
        }
    }
}

impl SubjectProfile {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidProfile(m));
        if self.seasons.len() != NUM_STATES {
            return bad(format!(
                "expected {NUM_STATES} seasons, got {}",
                self.seasons.len()
            ));
        }
        for s in SeasonState::ALL {
            if self.seasons.iter().filter(|p| p.state == s).count() != 1 {
                return bad(format!("season {s} must appear exactly once"));
            }
        }
        if self.min_density == 0 || self.min_density > self.max_density {
            return bad(format!(
                "density range {}..={} is empty or starts at 0",
                self.min_density, self.max_density
            ));
        }
        for p in &self.seasons {
            if !is_valid_bpm(p.preferred_bpm) {
                return bad(format!(
                    "{}: preferred_bpm {} not in 90..=140 step 5",
                    p.state, p.preferred_bpm
                ));
            }
            if !(self.min_density..=self.max_density).contains(&p.preferred_density) {
                return bad(format!(
                    "{}: preferred_density {} out of range",
                    p.state, p.preferred_density
                ));
            }
            if p.band_signature
                .iter()
                .any(|&v| !(v.is_finite() && v > 0.0))
            {
                return bad(format!("{}: band signature must be positive", p.state));
            }
        }
        if !(0.0..=1.0).contains(&self.responsiveness) {
            return bad(format!(
                "responsiveness {} outside [0, 1]",
                self.responsiveness
            ));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad(format!("noise_scale {} must be >= 0", self.noise_scale));
        }
        if self.styles.is_empty() {
            return bad("style list is empty".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        let p: SubjectProfile =
            serde_json::from_str(text).map_err(|e| EnvError::InvalidProfile(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EnvError::InvalidProfile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn season(&self, s: SeasonState) -> &SeasonProfile {
        self.seasons
            .iter()
            .find(|p| p.state == s)
            .expect("validated profile")
    }

    pub fn mid_density(&self) -> u32 {
        (self.min_density + self.max_density) / 2
    }

    /// `1 - (|dbpm|/50 + |ddensity|/max_density)/2`, clamped to `[0, 1]`.
    pub fn proximity(&self, bpm: u32, density: u32, s: SeasonState) -> f64 {
        let p = self.season(s);
        let db = (bpm as f64 - p.preferred_bpm as f64).abs() / 50.0;
        let dd = (density as f64 - p.preferred_density as f64).abs() / self.max_density as f64;
        (1.0 - (db + dd) / 2.0).clamp(0.0, 1.0)
    }

    /// Season with the highest proximity; ties go to the lower index.
    pub fn nearest(&self, bpm: u32, density: u32) -> (SeasonState, f64) {
        let mut best = (SeasonState::Spring, f64::NEG_INFINITY);
        for s in SeasonState::ALL {
            let p = self.proximity(bpm, density, s);
            if p > best.1 {
                best = (s, p);
            }
        }
        best
    }

    /// Band powers of a state mixture.
    pub fn mixed_signature(&self, label: &LabelDistribution) -> [f64; 8] {
        let mut out = [0.0; 8];
        for s in SeasonState::ALL {
            let w = label.weight(s);
            for (o, v) in out.iter_mut().zip(self.season(s).band_signature) {
                *o += w * v;
            }
        }
        out
    }
}

/// Delta, theta, alpha (low + high) and beta (low + high) powers.
pub fn grouped_bands(b: &[f64; 8]) -> [f64; 4] {
    [b[0], b[1], b[2] + b[3], b[4] + b[5]]
}

/// One loop of EEG at `bpm`, synthesized at 512 Hz, low-passed and decimated
/// to 256 samples with a `cutoff_hz` low-pass. Phases are random; `noise_scale` adds white noise relative
/// to the clean signal's RMS.
pub fn synthesize_eeg(
    bands: &[f64; 8],
    bpm: u32,
    noise_scale: f64,
    cutoff_hz: f64,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let n = raw_samples_per_loop(bpm as i64).expect("positive bpm");
    let groups = grouped_bands(bands);
    let comps: Vec<(f64, f64, f64)> = groups
        .iter()
        .zip(COMPONENT_HZ)
        .map(|(&p, f)| {
            let phase = rng.random_range(0.0..2.0 * PI);
            (
                (2.0 * p.max(0.0)).sqrt() * EEG_SCALE,
                2.0 * PI * f / SAMPLE_RATE_HZ,
                phase,
            )
        })
        .collect();
    let mut raw: Vec<f64> = (0..n)
        .map(|i| {
            comps
                .iter()
                .map(|&(a, w, ph)| a * (w * i as f64 + ph).sin())
                .sum()
        })
        .collect();
    if noise_scale > 0.0 {
        let rms = comps.iter().map(|c| c.0 * c.0 / 2.0).sum::<f64>().sqrt();
        let sd = noise_scale * rms;
        for x in &mut raw {
            let z: f64 = StandardNormal.sample(rng);
            *x += sd * z;
        }
    }
    let filtered = lowpass_filter(&raw, cutoff_hz, SAMPLE_RATE_HZ).expect("cutoff below Nyquist");
    downsample_loop(&filtered, bpm as i64).expect("length matches bpm")
}

/// Mean absolute amplitude over the first 200 ms of a synthetic drum loop.
///
/// The downbeat is a decaying tone whose decay shortens with tempo and whose
/// level grows with density; style picks the pitch and gain.
pub fn drum_audio_feature(bpm: u32, density: u32, style: usize) -> f64 {
    const PITCH: [f64; 3] = [55.0, 70.0, 85.0];
    const GAIN: [f64; 3] = [1.0, 1.15, 0.9];
    let s = style % PITCH.len();
    let tau = 0.25 * 60.0 / bpm as f64;
    let amp = GAIN[s] * (0.4 + 0.06 * density as f64);
    let n = (0.2 * AUDIO_RATE_HZ) as usize;
    let audio: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / AUDIO_RATE_HZ;
            amp * (-t / tau).exp() * (2.0 * PI * PITCH[s] * t).sin()
        })
        .collect();
    audio_feature(&audio, AUDIO_RATE_HZ)
}

/// What the subject looks like after a cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub label: LabelDistribution,
    pub attention: f64,
    pub meditation: f64,
    pub bpm: u32,
    pub density: u32,
    pub style: usize,
    pub cycle_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub loops: Vec<LoopRecord>,
    pub state: EnvState,
}

/// Emulated "adapt to current state" feedback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedback {
    pub p_user: LabelDistribution,
    pub d_attention: f64,
    pub d_meditation: f64,
}

#[derive(Debug, Clone)]
pub struct SubjectEnv {
    pub profile: SubjectProfile,
    /// Cycles allowed per episode; `None` is unbounded.
    pub horizon: Option<usize>,
    /// Low-pass cutoff applied to synthesized EEG.
    pub cutoff_hz: f64,
    state: EnvState,
    prev_attention: f64,
    prev_meditation: f64,
    initial: SeasonState,
    target: SeasonState,
    rng: ChaCha8Rng,
    feedback_rng: ChaCha8Rng,
}

impl SubjectEnv {
    pub fn new(profile: SubjectProfile) -> Result<Self, EnvError> {
        profile.validate()?;
        let density = profile.mid_density();
        Ok(SubjectEnv {
            profile,
            horizon: None,
            cutoff_hz: LOWPASS_HZ,
            state: EnvState {
                label: LabelDistribution::one_hot(SeasonState::Spring),
                attention: ESENSE_START,
                meditation: ESENSE_START,
                bpm: START_BPM,
                density,
                style: 0,
                cycle_index: 0,
            },
            prev_attention: ESENSE_START,
            prev_meditation: ESENSE_START,
            initial: SeasonState::Spring,
            target: SeasonState::Spring,
            rng: ChaCha8Rng::seed_from_u64(0),
            feedback_rng: ChaCha8Rng::seed_from_u64(1),
        })
    }

    /// Start an episode at 115 bpm, mid density, first style.
    pub fn reset(&mut self, initial: SeasonState, target: SeasonState, seed: u64) -> Observation {
        let density = self.profile.mid_density();
        self.reset_at(initial, target, START_BPM, density, 0, seed)
    }

    /// Start an episode at a chosen rhythm.
    pub fn reset_at(
        &mut self,
        initial: SeasonState,
        target: SeasonState,
        bpm: u32,
        density: u32,
        style: usize,
        seed: u64,
    ) -> Observation {
        self.initial = initial;
        self.target = target;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.feedback_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F00D_CAFE_BEEF);
        let bpm = (bpm - bpm % BPM_STEP).clamp(MIN_BPM, MAX_BPM);
        self.state = EnvState {
            label: LabelDistribution::one_hot(initial),
            attention: ESENSE_START,
            meditation: ESENSE_START,
            bpm,
            density: density.clamp(self.profile.min_density, self.profile.max_density),
            style: style % self.profile.styles.len(),
            cycle_index: 0,
        };
        self.prev_attention = ESENSE_START;
        self.prev_meditation = ESENSE_START;
        self.observe()
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn initial(&self) -> SeasonState {
        self.initial
    }

    pub fn target(&self) -> SeasonState {
        self.target
    }

    pub fn target_weight(&self) -> f64 {
        self.state.label.weight(self.target)
    }

    /// Target is dominant with at least 0.9 of the mass.
    pub fn is_success(&self) -> bool {
        self.state.label.dominant() == self.target && self.target_weight() >= SUCCESS_WEIGHT
    }

    /// Dominant state is neither the initial nor the target state.
    pub fn state_lost(&self) -> bool {
        let d = self.state.label.dominant();
        d != self.initial && d != self.target
    }

    pub fn style_name(&self) -> &str {
        &self.profile.styles[self.state.style]
    }

    pub fn rhythm(&self) -> Rhythm {
        Rhythm {
            bpm: self.state.bpm,
            density: self.state.density,
            style: self.style_name().to_string(),
        }
    }

    pub fn apply_action(&mut self, action: Action) {
        let s = &mut self.state;
        match action {
            Action::IncreaseBpm => s.bpm = (s.bpm + BPM_STEP).min(MAX_BPM),
            Action::DecreaseBpm => s.bpm = s.bpm.saturating_sub(BPM_STEP).max(MIN_BPM),
            Action::IncreaseDensity => s.density = (s.density + 1).min(self.profile.max_density),
            Action::DecreaseDensity => {
                s.density = s.density.saturating_sub(1).max(self.profile.min_density)
            }
            Action::SwitchStyle => s.style = (s.style + 1) % self.profile.styles.len(),
        }
    }

    /// Apply `action`, let the subject respond for one cycle and record it.
    pub fn step(&mut self, action: Action) -> Result<Observation, EnvError> {
        self.check_horizon()?;
        self.apply_action(action);
        self.respond();
        Ok(self.observe())
    }

    /// One cycle with the rhythm left alone.
    pub fn hold(&mut self) -> Result<Observation, EnvError> {
        self.check_horizon()?;
        self.respond();
        Ok(self.observe())
    }

    fn check_horizon(&self) -> Result<(), EnvError> {
        match self.horizon {
            Some(h) if self.state.cycle_index >= h => {
                Err(EnvError::EpisodeFinished(self.state.cycle_index))
            }
            _ => Ok(()),
        }
    }

    fn respond(&mut self) {
        let (nearest, prox) = self.profile.nearest(self.state.bpm, self.state.density);
        self.state.label = self
            .state
            .label
            .toward(nearest, self.profile.responsiveness * prox);
        self.drift_esense(prox);
        self.state.cycle_index += 1;
    }

    fn drift_esense(&mut self, prox: f64) {
        self.prev_attention = self.state.attention;
        self.prev_meditation = self.state.meditation;
        let goal = ESENSE_START + 40.0 * prox;
        let sd = self.profile.noise_scale * ESENSE_NOISE;
        for v in [&mut self.state.attention, &mut self.state.meditation] {
            let mut next = *v + ESENSE_RATE * (goal - *v);
            if sd > 0.0 {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                next += sd * z;
            }
            *v = next.clamp(0.0, 100.0);
        }
    }

    pub fn user_feedback(&mut self) -> Feedback {
        let sd = self.profile.noise_scale;
        let p_user = if sd > 0.0 {
            let mut w = *self.state.label.weights();
            for x in &mut w {
                let z: f64 = StandardNormal.sample(&mut self.feedback_rng);
                *x += sd * z;
            }
            let clean = w.iter().all(|x| x.is_finite()) && w.iter().any(|&x| x > 0.0);
            if clean {
                LabelDistribution::normalized(w)
            } else {
                self.state.label
            }
        } else {
            self.state.label
        };
        Feedback {
            p_user,
            d_attention: self.state.attention - self.prev_attention,
            d_meditation: self.state.meditation - self.prev_meditation,
        }
    }

    fn observe(&mut self) -> Observation {
        Observation {
            loops: self.emit_cycle(),
            state: self.state.clone(),
        }
    }

    /// Four loops recorded under the current state.
    fn emit_cycle(&mut self) -> Vec<LoopRecord> {
        let bands = self.profile.mixed_signature(&self.state.label);
        let style = self.style_name().to_string();
        let audio = drum_audio_feature(self.state.bpm, self.state.density, self.state.style);
        let mut arrangement = [0u8; ARRANGEMENT_SLOTS];
        for slot in arrangement.iter_mut().take(self.state.density as usize) {
            *slot = 1;
        }
        let noise = self.profile.noise_scale;
        (0..LOOPS_PER_CYCLE)
            .map(|_| {
                let eeg_samples =
                    synthesize_eeg(&bands, self.state.bpm, noise, self.cutoff_hz, &mut self.rng);
                let mut powers = [0u32; 8];
                for (p, &b) in powers.iter_mut().zip(&bands) {
                    let mut v = b;
                    if noise > 0.0 {
                        let z: f64 = StandardNormal.sample(&mut self.rng);
                        v *= (1.0 + noise * z).max(0.0);
                    }
                    *p = v.round().clamp(0.0, MAX_BAND_POWER as f64) as u32;
                }
                LoopRecord {
                    eeg_samples,
                    audio_feature: audio,
                    packet: TgamPacket {
                        poor_signal: 0,
                        bands: BandPowers::from_array(powers),
                        attention: self.state.attention.round() as u8,
                        meditation: self.state.meditation.round() as u8,
                    },
                    bpm: self.state.bpm,
                    density: self.state.density,
                    style: style.clone(),
                    arrangement,
                }
            })
            .collect()
    }
}

/// Next rhythm action on a straight walk from the current rhythm to `goal`:
/// bpm first, then density; `None` once there.
pub fn step_toward(bpm: u32, density: u32, goal_bpm: u32, goal_density: u32) -> Option<Action> {
    if bpm < goal_bpm {
        Some(Action::IncreaseBpm)
    } else if bpm > goal_bpm {
        Some(Action::DecreaseBpm)
    } else if density < goal_density {
        Some(Action::IncreaseDensity)
    } else if density > goal_density {
        Some(Action::DecreaseDensity)
    } else {
        None
    }
}

/// Record a full 200-loop session.
///
/// The rhythm starts at the initial state's preference. For a transition it
/// walks one step per cycle toward the target's preference once the label
/// ramp starts. The subject's mixture follows the session's gradient labels,
/// so the recording agrees with the labels the pipeline will assign.
pub fn simulate_session(
    profile: &SubjectProfile,
    initial: SeasonState,
    target: SeasonState,
    transition_loop: Option<usize>,
    seed: u64,
) -> Result<Session, EnvError> {
    let mut env = SubjectEnv::new(profile.clone())?;
    simulate_with(&mut env, initial, target, transition_loop, seed)
}

/// [`simulate_session`] on a configured environment.
pub fn simulate_with(
    env: &mut SubjectEnv,
    initial: SeasonState,
    target: SeasonState,
    transition_loop: Option<usize>,
    seed: u64,
) -> Result<Session, EnvError> {
    let profile = env.profile.clone();
    let header = SessionHeader {
        initial_state: initial,
        final_state: target,
        transition_loop: if initial == target {
            None
        } else {
            transition_loop
        },
        seed: Some(seed),
        operations: Vec::new(),
    };
    let labels = assign_labels(&header);
    let start = profile.season(initial);
    let goal = profile.season(target);
    env.reset_at(
        initial,
        target,
        start.preferred_bpm,
        start.preferred_density,
        0,
        seed,
    );
    let ramp_start = header
        .transition_loop
        .map(|l| l / LOOPS_PER_CYCLE)
        .unwrap_or(0);

    let mut operations = Vec::new();
    let mut loops = Vec::with_capacity(CYCLES_PER_SESSION * LOOPS_PER_CYCLE);
    for (c, label) in labels.into_iter().enumerate() {
        if c > 0 {
            if initial != target && c > ramp_start {
                let s = env.state();
                if let Some(a) =
                    step_toward(s.bpm, s.density, goal.preferred_bpm, goal.preferred_density)
                {
                    env.apply_action(a);
                    operations.push(Operation {
                        loop_index: c * LOOPS_PER_CYCLE,
                        action: a.name().to_string(),
                    });
                }
            }
            let (_, prox) = env.profile.nearest(env.state.bpm, env.state.density);
            env.drift_esense(prox);
            env.state.cycle_index += 1;
        }
        env.state.label = label;
        loops.extend(env.emit_cycle());
    }
    Ok(Session {
        header: SessionHeader {
            operations,
            ..header
        },
        loops,
    })
}
