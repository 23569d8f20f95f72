//! Perceptual states and label mixtures.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_STATES: usize = 4;
pub const SUM_TOLERANCE: f64 = 1e-9;

/// The four season-named perceptual states, with a stable class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeasonState {
    Spring = 0,
    Summer = 1,
    Autumn = 2,
    Winter = 3,
}

impl SeasonState {
    pub const ALL: [SeasonState; NUM_STATES] = [
        SeasonState::Spring,
        SeasonState::Summer,
        SeasonState::Autumn,
        SeasonState::Winter,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SeasonState::Spring => "spring",
            SeasonState::Summer => "summer",
            SeasonState::Autumn => "autumn",
            SeasonState::Winter => "winter",
        }
    }
}

impl fmt::Display for SeasonState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("unknown season {0:?}")]
    UnknownSeason(String),
    #[error("label weight {0} outside [0, 1]")]
    WeightOutOfRange(f64),
    #[error("label weights sum to {0}, not 1")]
    BadSum(f64),
}

impl FromStr for SeasonState {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| LabelError::UnknownSeason(s.to_string()))
    }
}

/// A mixture over the four states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; NUM_STATES]", into = "[f64; NUM_STATES]")]
pub struct LabelDistribution([f64; NUM_STATES]);

impl LabelDistribution {
    pub fn new(weights: [f64; NUM_STATES]) -> Result<Self, LabelError> {
        for &w in &weights {
            if !(0.0..=1.0).contains(&w) {
                return Err(LabelError::WeightOutOfRange(w));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(LabelError::BadSum(sum));
        }
        Ok(LabelDistribution(weights))
    }

    /// Clamp negatives to zero and rescale to unit sum. Falls back to uniform
    /// when nothing positive remains.
    pub fn normalized(weights: [f64; NUM_STATES]) -> Self {
        let mut w = weights.map(|x| if x.is_finite() { x.max(0.0) } else { 0.0 });
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return LabelDistribution([1.0 / NUM_STATES as f64; NUM_STATES]);
        }
        for x in &mut w {
            *x /= sum;
        }
        LabelDistribution(w)
    }

    pub fn one_hot(state: SeasonState) -> Self {
        let mut w = [0.0; NUM_STATES];
        w[state.index()] = 1.0;
        LabelDistribution(w)
    }

    /// `1 - t` on `from`, `t` on `to`.
    pub fn blend(from: SeasonState, to: SeasonState, t: f64) -> Self {
        if from == to {
            return Self::one_hot(from);
        }
        let mut w = [0.0; NUM_STATES];
        w[from.index()] = 1.0 - t;
        w[to.index()] = t;
        LabelDistribution(w)
    }

    /// Move a fraction `rate` of the mass onto `state`.
    pub fn toward(&self, state: SeasonState, rate: f64) -> Self {
        let rate = rate.clamp(0.0, 1.0);
        let mut w = self.0.map(|x| (1.0 - rate) * x);
        w[state.index()] += rate;
        LabelDistribution(w)
    }

    pub fn weights(&self) -> &[f64; NUM_STATES] {
        &self.0
    }

    pub fn weight(&self, s: SeasonState) -> f64 {
        self.0[s.index()]
    }

    /// Highest-weight state; ties go to the lower class index.
    pub fn dominant(&self) -> SeasonState {
        let mut best = 0;
        for i in 1..NUM_STATES {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        SeasonState::ALL[best]
    }

    pub fn nonzero_count(&self) -> usize {
        self.0.iter().filter(|&&w| w > 0.0).count()
    }
}

impl TryFrom<[f64; NUM_STATES]> for LabelDistribution {
    type Error = LabelError;

    fn try_from(w: [f64; NUM_STATES]) -> Result<Self, Self::Error> {
        LabelDistribution::new(w)
    }
}

impl From<LabelDistribution> for [f64; NUM_STATES] {
    fn from(l: LabelDistribution) -> Self {
        l.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn season_roundtrip() {
        for s in SeasonState::ALL {
            assert_eq!(SeasonState::from_index(s.index()), Some(s));
            assert_eq!(s.name().parse::<SeasonState>().unwrap(), s);
        }
        assert!("monsoon".parse::<SeasonState>().is_err());
    }

    #[test]
    fn rejects_bad_distributions() {
        assert_eq!(
            LabelDistribution::new([0.5, 0.6, 0.0, 0.0]),
            Err(LabelError::BadSum(1.1))
        );
        assert!(LabelDistribution::new([1.5, -0.5, 0.0, 0.0]).is_err());
    }

    #[test]
    fn dominant_tie_goes_low() {
        let l = LabelDistribution::new([0.0, 0.5, 0.5, 0.0]).unwrap();
        assert_eq!(l.dominant(), SeasonState::Summer);
    }

    #[test]
    fn normalized_handles_degenerate() {
        let l = LabelDistribution::normalized([0.0, -1.0, f64::NAN, 0.0]);
        assert_eq!(l.weights(), &[0.25; 4]);
        let l = LabelDistribution::normalized([2.0, 2.0, 0.0, 0.0]);
        assert_eq!(l.weights(), &[0.5, 0.5, 0.0, 0.0]);
    }
}
