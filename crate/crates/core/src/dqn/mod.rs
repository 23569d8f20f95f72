//! Deep Q-network rhythm guide.

pub mod agent;
pub mod qnet;
pub mod replay;
pub mod reward;
pub mod state;

pub use crate::env::Action;
pub use agent::{
    bellman_target, epsilon, evaluate_policy, greedy, guide_episode, replay_update, run_episode,
    select_action, sync_target, DqnAgent, DqnConfig, DqnError, EvalPolicy, GuideEpisode,
    GuideReport, Perceiver, TrainingLog,
};
pub use qnet::QNetwork;
pub use replay::{ReplayBuffer, Transition};
pub use reward::{RewardConfig, RewardTerms};
pub use state::{AgentState, StateLayout};
