use serde::{Deserialize, Serialize};

use crate::labels::{SeasonState, NUM_STATES};
use crate::session::{MAX_BPM, MIN_BPM};

/// What the agent sees after a cycle.
///
/// `cnn_features` are the channel means of the classifier's final feature
/// map. The episode target is part of the state so one network serves every
/// target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub cnn_features: Vec<f64>,
    pub attention: f64,
    pub meditation: f64,
    pub bpm: u32,
    pub density: u32,
    pub style: usize,
    pub target: SeasonState,
}

/// Fixed layout of the encoded state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    pub features: usize,
    pub styles: usize,
    pub min_density: u32,
    pub max_density: u32,
}

impl StateLayout {
    pub fn dim(&self) -> usize {
        self.features + 4 + self.styles + NUM_STATES
    }

    /// `[features, att/100, med/100, bpm, density, style one-hot, target
    /// one-hot]` with bpm and density scaled to `[-1, 1]`.
    pub fn encode_into(&self, s: &AgentState, out: &mut Vec<f64>) {
        assert_eq!(s.cnn_features.len(), self.features, "feature width");
        out.extend_from_slice(&s.cnn_features);
        out.push(s.attention / 100.0);
        out.push(s.meditation / 100.0);
        let mid_bpm = (MIN_BPM + MAX_BPM) as f64 / 2.0;
        let half_bpm = (MAX_BPM - MIN_BPM) as f64 / 2.0;
        out.push((s.bpm as f64 - mid_bpm) / half_bpm);
        let mid_d = (self.min_density + self.max_density) as f64 / 2.0;
        let half_d = ((self.max_density - self.min_density) as f64 / 2.0).max(1.0);
        out.push((s.density as f64 - mid_d) / half_d);
        for i in 0..self.styles {
            out.push(if s.style == i { 1.0 } else { 0.0 });
        }
        for st in SeasonState::ALL {
            out.push(if s.target == st { 1.0 } else { 0.0 });
        }
    }

    pub fn encode(&self, s: &AgentState) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        self.encode_into(s, &mut v);
        v
    }
}
