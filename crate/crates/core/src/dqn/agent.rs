//! Q-learning with experience replay and a periodically synced target
//! network, plus the greedy guidance loop.

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::qnet::{QNetwork, HIDDEN};
use super::replay::{ReplayBuffer, Transition};
use super::reward::{compose, RewardConfig, RewardInputs, RewardTerms};
use super::state::{AgentState, StateLayout};
use crate::env::{Action, EnvError, Observation, SubjectEnv, NUM_ACTIONS};
use crate::labels::{LabelDistribution, SeasonState, NUM_STATES};
use crate::nn::cnn::Prediction;
use crate::nn::{Adam, AdamConfig, CnnModel, Parameters};
use crate::session::{cycle_from_loops, LoopRecord, NormStats};

#[derive(Debug, Error, PartialEq)]
pub enum DqnError {
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    BufferTooSmall { have: usize, need: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_interval: u64,
    pub eps_start: f64,
    pub eps_final: f64,
    pub decay_steps: u64,
    /// Environment steps to train for.
    pub train_steps: u64,
    /// Updates begin once this many transitions are stored.
    pub learning_starts: usize,
    /// Cycle budget of a training episode.
    pub max_cycles: usize,
    pub hidden: usize,
    pub rewards: RewardConfig,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: 0.99,
            lr: 1e-3,
            batch_size: 32,
            buffer_capacity: 10_000,
            target_interval: 10_000,
            eps_start: 1.0,
            eps_final: 0.01,
            decay_steps: 100_000,
            train_steps: 100_000,
            learning_starts: 32,
            max_cycles: 30,
            hidden: HIDDEN,
            rewards: RewardConfig::default(),
            seed: 0,
        }
    }
}

/// Linear decay from `eps0` to `eps_final` over `decay_steps`, then flat.
pub fn epsilon(step: u64, eps0: f64, eps_final: f64, decay_steps: u64) -> f64 {
    assert!(decay_steps > 0, "decay_steps must be positive");
    if step >= decay_steps {
        return eps_final;
    }
    let frac = step as f64 / decay_steps as f64;
    eps0 + frac * (eps_final - eps0)
}

/// Index of the largest value; ties go to the lowest index.
pub fn greedy(q: &[f64]) -> Action {
    let mut best = 0;
    for i in 1..q.len() {
        if q[i] > q[best] {
            best = i;
        }
    }
    Action::from_index(best).expect("one q value per action")
}

pub fn select_action<R: Rng>(q: &QNetwork, state: &[f64], eps: f64, rng: &mut R) -> Action {
    if eps > 0.0 && rng.random::<f64>() < eps {
        return Action::from_index(rng.random_range(0..NUM_ACTIONS)).expect("in range");
    }
    greedy(&q.q_values(state))
}

pub fn bellman_target(r: f64, gamma: f64, q_next: &[f64], done: bool) -> f64 {
    if done {
        return r;
    }
    let max = q_next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    r + gamma * max
}

/// One minibatch step on the squared TD error against `q_target`.
/// Only `q` changes.
pub fn replay_update<R: Rng>(
    q: &mut QNetwork,
    q_target: &QNetwork,
    adam: &mut Adam,
    buffer: &ReplayBuffer,
    layout: &StateLayout,
    batch: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<f64, DqnError> {
    if batch == 0 || buffer.len() < batch {
        return Err(DqnError::BufferTooSmall {
            have: buffer.len(),
            need: batch.max(1),
        });
    }
    let sample = buffer.sample(batch, rng);
    let dim = layout.dim();
    let mut s = Vec::with_capacity(batch * dim);
    let mut s_next = Vec::with_capacity(batch * dim);
    for t in &sample {
        layout.encode_into(&t.s, &mut s);
        layout.encode_into(&t.s_next, &mut s_next);
    }
    let next_q = q_target.forward(&s_next, batch).q;
    let cache = q.forward(&s, batch);

    let mut dq = vec![0.0; batch * NUM_ACTIONS];
    let mut loss = 0.0;
    for (i, t) in sample.iter().enumerate() {
        let y = bellman_target(
            t.r,
            gamma,
            &next_q[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS],
            t.done,
        );
        let j = i * NUM_ACTIONS + t.a.index();
        let err = cache.q[j] - y;
        loss += err * err;
        dq[j] = 2.0 * err / batch as f64;
    }
    q.zero_grad();
    q.backward(&cache, &dq);
    if let Some(p) = q.params().into_iter().find(|p| !p.grad_is_finite()) {
        return Err(DqnError::NonFiniteGradient(p.name.clone()));
    }
    adam.step(q);
    Ok(loss / batch as f64)
}

/// Copy `q` into `q_target` when `step` is a positive multiple of
/// `interval`. Returns whether it did.
pub fn sync_target(q: &QNetwork, q_target: &mut QNetwork, step: u64, interval: u64) -> bool {
    if interval > 0 && step > 0 && step % interval == 0 {
        q_target.copy_values_from(q);
        true
    } else {
        false
    }
}

/// The trained classifier as the agent's sensor.
#[derive(Debug, Clone)]
pub struct Perceiver {
    pub model: CnnModel,
    pub stats: NormStats,
}

impl Perceiver {
    pub fn perceive(&self, loops: &[LoopRecord]) -> Prediction {
        let mut t = cycle_from_loops(loops, LabelDistribution::normalized([1.0; NUM_STATES]));
        self.stats.apply(&mut t);
        self.model.predict_cycle(&t)
    }

    pub fn layout(&self, env: &SubjectEnv) -> StateLayout {
        StateLayout {
            features: self.model.feature_len(),
            styles: env.profile.styles.len(),
            min_density: env.profile.min_density,
            max_density: env.profile.max_density,
        }
    }
}

fn agent_state(pred: &Prediction, obs: &Observation, target: SeasonState) -> AgentState {
    let n = obs.loops.len() as f64;
    AgentState {
        cnn_features: pred.features.clone(),
        attention: obs
            .loops
            .iter()
            .map(|l| l.packet.attention as f64)
            .sum::<f64>()
            / n,
        meditation: obs
            .loops
            .iter()
            .map(|l| l.packet.meditation as f64)
            .sum::<f64>()
            / n,
        bpm: obs.state.bpm,
        density: obs.state.density,
        style: obs.state.style,
        target,
    }
}

/// Carries the previous cycle's readings between steps.
struct Episode {
    state: AgentState,
    target: SeasonState,
    p_target: f64,
    weight: f64,
}

impl Episode {
    fn start(env: &mut SubjectEnv, perceiver: &Perceiver, obs: &Observation) -> Self {
        let target = env.target();
        let pred = perceiver.perceive(&obs.loops);
        Episode {
            state: agent_state(&pred, obs, target),
            target,
            p_target: pred.probs[target.index()],
            weight: env.target_weight(),
        }
    }

    /// Act, observe and score one cycle.
    fn advance(
        &mut self,
        env: &mut SubjectEnv,
        perceiver: &Perceiver,
        rewards: &RewardConfig,
        action: Action,
    ) -> Result<(AgentState, RewardTerms, Observation), EnvError> {
        let obs = env.step(action)?;
        let pred = perceiver.perceive(&obs.loops);
        let fb = env.user_feedback();
        let p_target = pred.probs[self.target.index()];
        let weight = env.target_weight();
        let terms = compose(
            rewards,
            &RewardInputs {
                p_model: &pred.probs,
                p_user: fb.p_user.weights(),
                transition_penalty: if p_target > self.p_target { 0.0 } else { 1.0 },
                delta_s: weight - self.weight,
                state_lost: env.state_lost(),
                d_attention: fb.d_attention,
                d_meditation: fb.d_meditation,
            },
        );
        self.p_target = p_target;
        self.weight = weight;
        let next = agent_state(&pred, &obs, self.target);
        let prev = std::mem::replace(&mut self.state, next.clone());
        Ok((prev, terms, obs))
    }
}

/// A random `(initial, target)` pair with `initial != target`.
pub fn random_task<R: Rng>(rng: &mut R) -> (SeasonState, SeasonState) {
    let a = rng.random_range(0..NUM_STATES);
    let b = (a + rng.random_range(1..NUM_STATES)) % NUM_STATES;
    (SeasonState::ALL[a], SeasonState::ALL[b])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub episode: usize,
    pub epsilon: f64,
    pub loss: Option<f64>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub initial: SeasonState,
    pub target: SeasonState,
    pub cycles: usize,
    pub success: bool,
    pub final_label: [f64; NUM_STATES],
    pub total_reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepLog>,
    pub episodes: Vec<EpisodeLog>,
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub cfg: DqnConfig,
    pub layout: StateLayout,
    pub q: QNetwork,
    pub q_target: QNetwork,
    pub adam: Adam,
    pub buffer: ReplayBuffer,
    pub steps: u64,
    rng: ChaCha8Rng,
}

impl DqnAgent {
    pub fn new(cfg: DqnConfig, layout: StateLayout) -> Self {
        let q = QNetwork::new(layout.dim(), cfg.hidden, cfg.seed);
        let q_target = q.clone();
        let adam = Adam::new(
            &q,
            AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
        );
        DqnAgent {
            cfg,
            layout,
            q,
            q_target,
            adam,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD0_D0_D0),
        }
    }

    pub fn epsilon(&self) -> f64 {
        epsilon(
            self.steps,
            self.cfg.eps_start,
            self.cfg.eps_final,
            self.cfg.decay_steps,
        )
    }

    /// Run episodes against `env` until `cfg.train_steps` environment steps
    /// have been taken.
    pub fn train(
        &mut self,
        env: &mut SubjectEnv,
        perceiver: &Perceiver,
    ) -> Result<TrainingLog, DqnError> {
        let mut log = TrainingLog::default();
        let limit = self.steps + self.cfg.train_steps;
        let saved_horizon = env.horizon.take();
        while self.steps < limit {
            let episode = log.episodes.len();
            let (initial, target) = random_task(&mut self.rng);
            let seed = self.rng.random::<u64>();
            let obs = env.reset(initial, target, seed);
            let mut ep = Episode::start(env, perceiver, &obs);
            let mut cycles = 0;
            let mut total = 0.0;
            let mut success = env.is_success();
            while !success && cycles < self.cfg.max_cycles && self.steps < limit {
                let eps = self.epsilon();
                let s_vec = self.layout.encode(&ep.state);
                let action = select_action(&self.q, &s_vec, eps, &mut self.rng);
                let (s, terms, _) = ep.advance(env, perceiver, &self.cfg.rewards, action)?;
                success = env.is_success();
                let r = terms.total();
                total += r;
                cycles += 1;
                self.buffer.push(Transition {
                    s,
                    a: action,
                    r,
                    s_next: ep.state.clone(),
                    done: success,
                });
                let loss = if self.buffer.len() >= self.cfg.learning_starts.max(self.cfg.batch_size)
                {
                    Some(replay_update(
                        &mut self.q,
                        &self.q_target,
                        &mut self.adam,
                        &self.buffer,
                        &self.layout,
                        self.cfg.batch_size,
                        self.cfg.gamma,
                        &mut self.rng,
                    )?)
                } else {
                    None
                };
                self.steps += 1;
                if sync_target(
                    &self.q,
                    &mut self.q_target,
                    self.steps,
                    self.cfg.target_interval,
                ) {
                    debug!("target synced at step {}", self.steps);
                }
                log.steps.push(StepLog {
                    step: self.steps,
                    episode,
                    epsilon: eps,
                    loss,
                    reward: r,
                });
            }
            if episode % 200 == 0 {
                info!(
                    "episode {episode}: step {} eps {:.3} cycles {cycles} success {success}",
                    self.steps,
                    self.epsilon()
                );
            }
            log.episodes.push(EpisodeLog {
                episode,
                initial,
                target,
                cycles,
                success,
                final_label: *env.state().label.weights(),
                total_reward: total,
            });
        }
        env.horizon = saved_horizon;
        Ok(log)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideStep {
    pub cycle: usize,
    pub bpm: u32,
    pub density: u32,
    pub style: usize,
    pub action: Action,
    pub reward: f64,
    pub label: [f64; NUM_STATES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideEpisode {
    pub initial: SeasonState,
    pub target: SeasonState,
    pub seed: u64,
    pub success: bool,
    /// Cycles taken; equal to the log length.
    pub cycles: usize,
    pub log: Vec<GuideStep>,
}

/// Run one guidance episode with `policy` choosing each action from the
/// encoded state. Stops when the target holds at least 0.9 of the mixture
/// or after `max_cycles`.
pub fn run_episode<F>(
    env: &mut SubjectEnv,
    perceiver: &Perceiver,
    rewards: &RewardConfig,
    initial: SeasonState,
    target: SeasonState,
    seed: u64,
    max_cycles: usize,
    mut policy: F,
) -> Result<GuideEpisode, DqnError>
where
    F: FnMut(&[f64]) -> Action,
{
    let layout = perceiver.layout(env);
    let obs = env.reset(initial, target, seed);
    let mut ep = Episode::start(env, perceiver, &obs);
    let mut log = Vec::new();
    let mut success = env.is_success();
    while !success && log.len() < max_cycles {
        let action = policy(&layout.encode(&ep.state));
        let (_, terms, obs) = ep.advance(env, perceiver, rewards, action)?;
        success = env.is_success();
        log.push(GuideStep {
            cycle: obs.state.cycle_index,
            bpm: obs.state.bpm,
            density: obs.state.density,
            style: obs.state.style,
            action,
            reward: terms.total(),
            label: *obs.state.label.weights(),
        });
    }
    Ok(GuideEpisode {
        initial,
        target,
        seed,
        success,
        cycles: log.len(),
        log,
    })
}

/// Greedy guidance with a trained network.
pub fn guide_episode(
    q: &QNetwork,
    env: &mut SubjectEnv,
    perceiver: &Perceiver,
    rewards: &RewardConfig,
    initial: SeasonState,
    target: SeasonState,
    seed: u64,
    max_cycles: usize,
) -> Result<GuideEpisode, DqnError> {
    run_episode(
        env,
        perceiver,
        rewards,
        initial,
        target,
        seed,
        max_cycles,
        |s| greedy(&q.q_values(s)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideReport {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean over successful episodes; `None` when there were none.
    pub mean_cycles_to_target: Option<f64>,
    pub mean_loops_to_target: Option<f64>,
}

impl GuideReport {
    pub fn from_episodes(eps: &[GuideEpisode]) -> Self {
        let wins: Vec<&GuideEpisode> = eps.iter().filter(|e| e.success).collect();
        let mean = (!wins.is_empty())
            .then(|| wins.iter().map(|e| e.cycles as f64).sum::<f64>() / wins.len() as f64);
        GuideReport {
            episodes: eps.len(),
            successes: wins.len(),
            success_rate: if eps.is_empty() {
                0.0
            } else {
                wins.len() as f64 / eps.len() as f64
            },
            mean_cycles_to_target: mean,
            mean_loops_to_target: mean.map(|m| m * crate::session::LOOPS_PER_CYCLE as f64),
        }
    }
}

/// Which policy drives an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPolicy {
    Greedy,
    Random,
}

/// `episodes` evaluation episodes with tasks and seeds drawn from `seed`.
pub fn evaluate_policy(
    q: &QNetwork,
    env: &mut SubjectEnv,
    perceiver: &Perceiver,
    rewards: &RewardConfig,
    episodes: usize,
    max_cycles: usize,
    policy: EvalPolicy,
    seed: u64,
) -> Result<Vec<GuideEpisode>, DqnError> {
    let mut task_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut act_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA11_0CA7E);
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let (initial, target) = random_task(&mut task_rng);
        let ep_seed = task_rng.random::<u64>();
        let ep = match policy {
            EvalPolicy::Greedy => guide_episode(
                q, env, perceiver, rewards, initial, target, ep_seed, max_cycles,
            )?,
            EvalPolicy::Random => run_episode(
                env,
                perceiver,
                rewards,
                initial,
                target,
                ep_seed,
                max_cycles,
                |_| Action::from_index(act_rng.random_range(0..NUM_ACTIONS)).expect("in range"),
            )?,
        };
        out.push(ep);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_schedule() {
        assert_eq!(epsilon(0, 1.0, 0.01, 100), 1.0);
        assert_eq!(epsilon(100, 1.0, 0.01, 100), 0.01);
        assert_eq!(epsilon(5000, 1.0, 0.01, 100), 0.01);
        assert!((epsilon(50, 1.0, 0.01, 100) - 0.505).abs() < 1e-15);
    }

    #[test]
    fn bellman_examples() {
        assert_eq!(
            bellman_target(1.0, 0.99, &[0.0, 2.0, 1.0, -1.0, 0.5], false),
            2.98
        );
        assert_eq!(
            bellman_target(1.0, 0.99, &[0.0, 2.0, 1.0, -1.0, 0.5], true),
            1.0
        );
        assert_eq!(bellman_target(1.0, 0.0, &[9.0; 5], false), 1.0);
    }

    #[test]
    fn greedy_ties_low() {
        assert_eq!(greedy(&[0.0, 0.0, 0.0, 0.0, 1.0]), Action::SwitchStyle);
        assert_eq!(greedy(&[1.0, 1.0, 0.0, 0.0, 0.0]), Action::IncreaseBpm);
    }

    #[test]
    fn tasks_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (a, b) = random_task(&mut rng);
            assert_ne!(a, b);
        }
    }
}
