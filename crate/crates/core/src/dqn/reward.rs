//! Per-step reward terms: state match, state transition and adjustment effect.

use serde::{Deserialize, Serialize};

/// Probability clamp floor for the state-match cross-entropy.
pub const P_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda3: f64,
    pub use_state_match: bool,
    pub use_state_transition: bool,
    pub use_adjustment_effect: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda1: 1.0,
            lambda2: 0.5,
            alpha: 1.0,
            beta: 0.5,
            lambda3: 0.01,
            use_state_match: true,
            use_state_transition: true,
            use_adjustment_effect: true,
        }
    }
}

/// `-sum p_user * ln p_model` with `p_model` clamped to `[1e-6, 1]`.
pub fn clamped_cross_entropy(p_model: &[f64], p_user: &[f64]) -> f64 {
    -p_model
        .iter()
        .zip(p_user)
        .map(|(&p, &y)| {
            if y == 0.0 {
                0.0
            } else {
                y * p.clamp(P_FLOOR, 1.0).ln()
            }
        })
        .sum::<f64>()
}

pub fn reward_state_match(
    p_model: &[f64],
    p_user: &[f64],
    transition_penalty: f64,
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    lambda1 * (1.0 - clamped_cross_entropy(p_model, p_user)) - lambda2 * transition_penalty
}

pub fn reward_state_transition(delta_s: f64, loss_flag: bool, alpha: f64, beta: f64) -> f64 {
    alpha * delta_s - if loss_flag { beta } else { 0.0 }
}

pub fn reward_adjustment_effect(d_attention: f64, d_meditation: f64, lambda3: f64) -> f64 {
    lambda3 * (d_attention + d_meditation)
}

/// Inputs for one step's reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardInputs<'a> {
    pub p_model: &'a [f64],
    pub p_user: &'a [f64],
    /// 0 when the model's target probability rose since the last step, else 1.
    pub transition_penalty: f64,
    pub delta_s: f64,
    pub state_lost: bool,
    pub d_attention: f64,
    pub d_meditation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTerms {
    pub state_match: f64,
    pub state_transition: f64,
    pub adjustment_effect: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.state_match + self.state_transition + self.adjustment_effect
    }
}

/// Each enabled term; disabled terms are exactly zero.
pub fn compose(cfg: &RewardConfig, x: &RewardInputs) -> RewardTerms {
    RewardTerms {
        state_match: if cfg.use_state_match {
            reward_state_match(
                x.p_model,
                x.p_user,
                x.transition_penalty,
                cfg.lambda1,
                cfg.lambda2,
            )
        } else {
            0.0
        },
        state_transition: if cfg.use_state_transition {
            reward_state_transition(x.delta_s, x.state_lost, cfg.alpha, cfg.beta)
        } else {
            0.0
        },
        adjustment_effect: if cfg.use_adjustment_effect {
            reward_adjustment_effect(x.d_attention, x.d_meditation, cfg.lambda3)
        } else {
            0.0
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table() {
        let one = [0.0, 1.0, 0.0, 0.0];
        assert_eq!(reward_state_match(&one, &one, 0.0, 1.0, 0.0), 1.0);
        let r = reward_state_match(&[0.25; 4], &one, 0.0, 1.0, 0.0);
        assert!((r - (1.0 - 4f64.ln())).abs() < 1e-15);
        assert_eq!(reward_state_match(&one, &one, 1.0, 1.0, 0.5), 0.5);
        assert_eq!(reward_state_transition(0.1, false, 1.0, 0.5), 0.1);
        assert_eq!(reward_state_transition(0.1, true, 1.0, 0.5), 0.1 - 0.5);
        assert_eq!(reward_adjustment_effect(-10.0, 10.0, 0.01), 0.0);
        // mismatched one-hots stay finite
        let r = reward_state_match(&[1.0, 0.0, 0.0, 0.0], &one, 0.0, 1.0, 0.0);
        assert!((r - (1.0 + P_FLOOR.ln())).abs() < 1e-12);
    }
}
