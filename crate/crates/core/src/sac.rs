//! Soft actor-critic with recurrent actor and twin recurrent critics.
//!
//! The actor reads the observation sequence; each critic reads
//! `observation ++ action` per step. Bootstrapped values at `s_{t+1}` are
//! computed by branching one GRU step off the target critic's hidden state
//! after the true history `(s_0, a_0) .. (s_t, a_t)`, so every critic value is
//! conditioned on the actions that were actually taken before it.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::approx::{
    adam_update, backward, squashed_gaussian, squashed_gaussian_backward, squashed_mean, ActionScale, AdamState,
    Grads, HeadKind, NetworkParams, NetworkShape, SquashedSample,
};
use crate::env::{Controller, EpisodeLog, Observation, OBS_DIM};
use crate::plant::PlantKind;
use crate::randomize::SeededRng;
use crate::{Error, Result};

/// Inputs are divided by this before entering any network (deg -> ~unit).
pub const OBS_SCALE: f64 = 10.0;

/// One stored episode: `T + 1` observations, `T` actions and rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub observations: Vec<Observation>,
    /// Noiseless plant outputs `[a1, a1', a2, a2']` aligned with `observations`.
    pub outputs: Vec<[f64; 4]>,
    /// Row-major `T x action_dim`.
    pub actions: Vec<f64>,
    pub action_dim: usize,
    pub rewards: Vec<f64>,
    /// Ended by the time limit rather than an absorbing state.
    pub truncated: bool,
}

/// `(s_t, a_t, r_t, s_{t+1})` view into a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<'a> {
    pub state: &'a Observation,
    pub action: &'a [f64],
    pub reward: f64,
    pub next_state: &'a Observation,
}

impl Trajectory {
    pub fn new(first: Observation, first_output: [f64; 4], action_dim: usize) -> Self {
        Self {
            observations: vec![first],
            outputs: vec![first_output],
            actions: Vec::new(),
            action_dim,
            rewards: Vec::new(),
            truncated: false,
        }
    }

    pub fn push(&mut self, action: &[f64], reward: f64, next: Observation, next_output: [f64; 4]) {
        debug_assert_eq!(action.len(), self.action_dim);
        self.actions.extend_from_slice(action);
        self.rewards.push(reward);
        self.observations.push(next);
        self.outputs.push(next_output);
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn action(&self, t: usize) -> &[f64] {
        &self.actions[t * self.action_dim..(t + 1) * self.action_dim]
    }

    pub fn transition(&self, t: usize) -> Transition<'_> {
        Transition {
            state: &self.observations[t],
            action: self.action(t),
            reward: self.rewards[t],
            next_state: &self.observations[t + 1],
        }
    }

    /// Replay form of an episode log.
    pub fn from_log(log: &EpisodeLog, action_dim: usize) -> Self {
        let mut traj = Self::new(log.observations[0], log.states[0].output(), action_dim);
        for t in 0..log.len() {
            traj.push(&log.actions[t], log.rewards[t], log.observations[t + 1], log.states[t + 1].output());
        }
        traj.truncated = true;
        traj
    }

    pub fn target(&self) -> [f64; 2] {
        self.observations[0].target()
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn is_well_formed(&self) -> bool {
        let t = self.rewards.len();
        self.observations.len() == t + 1 && self.outputs.len() == t + 1 && self.actions.len() == t * self.action_dim
    }
}

/// Ring buffer of whole trajectories with FIFO eviction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    episode_length: usize,
    items: Vec<Trajectory>,
    head: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, episode_length: usize) -> Self {
        Self { capacity, episode_length, items: Vec::new(), head: 0, pushed: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Trajectories pushed since creation, including evicted ones.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, traj: Trajectory) -> Result<()> {
        if traj.len() != self.episode_length || !traj.is_well_formed() {
            return Err(Error::TrajectoryLength { expected: self.episode_length, found: traj.len() });
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.items.len() < self.capacity {
            self.items.push(traj);
        } else {
            self.items[self.head] = traj;
            self.head = (self.head + 1) % self.capacity;
        }
        self.pushed += 1;
        Ok(())
    }

    /// Trajectories in insertion order, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.items[self.head..].iter().chain(&self.items[..self.head])
    }

    /// Storage indices of `n` distinct uniformly chosen trajectories.
    pub fn sample_indices(&self, n: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
        if self.items.len() < n {
            return Err(Error::BufferNotReady { len: self.items.len(), requested: n });
        }
        Ok(index::sample(rng, self.items.len(), n).into_vec())
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Result<Vec<&Trajectory>> {
        Ok(self.sample_indices(n, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }

    pub fn get(&self, storage_index: usize) -> Option<&Trajectory> {
        self.items.get(storage_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub gru_hidden: usize,
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub initial_alpha: f64,
    /// Keep `alpha` at `initial_alpha` instead of tuning it.
    pub fixed_alpha: bool,
    /// Defaults to `-action_dim` when `None`.
    #[serde(default)]
    pub target_entropy: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gru_hidden: 256,
            lr: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 20,
            initial_alpha: 1.0,
            fixed_alpha: false,
            target_entropy: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

/// Mean losses of one gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    pub alpha: f64,
    pub alpha_loss: f64,
    pub entropy: f64,
}

/// Bootstrapped critic target with twin-minimum.
#[inline]
pub fn td_target(reward: f64, gamma: f64, q1: f64, q2: f64, alpha: f64, log_prob: f64) -> f64 {
    reward + gamma * (q1.min(q2) - alpha * log_prob)
}

/// Actor, twin critics, their targets, temperature and optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub config: SacConfig,
    pub scale: ActionScale,
    pub actor: NetworkParams,
    pub critics: [NetworkParams; 2],
    pub targets: [NetworkParams; 2],
    pub log_alpha: f64,
    pub actor_opt: AdamState,
    pub critic_opts: [AdamState; 2],
    pub alpha_opt: AdamState,
    pub updates: u64,
}

impl Agent {
    pub fn new(kind: PlantKind, config: SacConfig, rng: &mut SeededRng) -> Result<Self> {
        let (lo, hi) = kind.action_bounds();
        Self::with_scale(ActionScale::from_bounds(kind.action_dim(), lo, hi), config, rng)
    }

    pub fn with_scale(scale: ActionScale, config: SacConfig, rng: &mut SeededRng) -> Result<Self> {
        if !(config.tau >= 0.0 && config.tau <= 1.0) {
            return Err(Error::InvalidParameter("tau must lie in [0, 1]"));
        }
        if config.batch_size == 0 || !(config.lr > 0.0) || !(config.initial_alpha >= 0.0) {
            return Err(Error::InvalidParameter("invalid SAC hyperparameters"));
        }
        let a = scale.dim();
        let actor = NetworkParams::init(NetworkShape::new(OBS_DIM, config.gru_hidden, 2 * a, HeadKind::SquashedGaussian), rng)?;
        let critic_shape = NetworkShape::new(OBS_DIM + a, config.gru_hidden, 1, HeadKind::Linear);
        let critics = [NetworkParams::init(critic_shape, rng)?, NetworkParams::init(critic_shape, rng)?];
        let targets = critics.clone();
        Ok(Self {
            actor_opt: AdamState::new(actor.len(), config.lr),
            critic_opts: [AdamState::new(critics[0].len(), config.lr), AdamState::new(critics[1].len(), config.lr)],
            alpha_opt: AdamState::new(1, config.lr),
            log_alpha: libm::log(config.initial_alpha),
            config,
            scale,
            actor,
            critics,
            targets,
            updates: 0,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.scale.dim()
    }

    pub fn alpha(&self) -> f64 {
        if self.config.fixed_alpha {
            self.config.initial_alpha
        } else {
            libm::exp(self.log_alpha)
        }
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.action_dim() as f64))
    }

    /// Fresh recurrent state for a new episode.
    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.config.gru_hidden]
    }

    fn encode_obs(obs: &Observation, out: &mut Vec<f64>) {
        out.extend(obs.0.iter().map(|v| v / OBS_SCALE));
    }

    fn encode_action(&self, action: &[f64], out: &mut Vec<f64>) {
        out.extend(action.iter().enumerate().map(|(j, a)| (a - self.scale.offset[j]) / self.scale.scale[j]));
    }

    /// Advance the actor by one observation and choose an action.
    pub fn act(&self, obs: &Observation, hidden: &mut [f64], mode: ActMode, rng: &mut SeededRng) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(OBS_DIM);
        Self::encode_obs(obs, &mut x);
        let trace = self.actor.forward(&x, hidden)?;
        hidden.copy_from_slice(trace.final_hidden());
        let raw = trace.output(0);
        Ok(match mode {
            ActMode::Deterministic => squashed_mean(raw, &self.scale),
            ActMode::Stochastic => {
                let noise: Vec<f64> = (0..self.action_dim()).map(|_| rng.standard_normal()).collect();
                squashed_gaussian(raw, &noise, &self.scale).action
            }
        })
    }

    /// `targets <- tau * critics + (1 - tau) * targets`.
    pub fn soft_update(&mut self, tau: f64) {
        for (t, c) in self.targets.iter_mut().zip(&self.critics) {
            t.blend_from(c, tau);
        }
    }

    /// One SAC gradient step on a batch of whole trajectories.
    pub fn update(&mut self, batch: &[&Trajectory], rng: &mut SeededRng) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::BufferNotReady { len: 0, requested: self.config.batch_size });
        }
        let a_dim = self.action_dim();
        let total_steps: usize = batch.iter().map(|t| t.len()).sum();
        if total_steps == 0 {
            return Err(Error::InvalidParameter("empty trajectories"));
        }
        let norm = 1.0 / total_steps as f64;
        let alpha = self.alpha();
        let gamma = self.config.gamma;
        let h = self.config.gru_hidden;
        let zero_h = vec![0.0; h];
        let cin = OBS_DIM + a_dim;

        let mut g_actor = vec![0.0; self.actor.len()];
        let mut g_critic = [vec![0.0; self.critics[0].len()], vec![0.0; self.critics[1].len()]];
        let mut report = LossReport { alpha, ..Default::default() };
        let mut log_prob_sum = 0.0;

        for traj in batch {
            if traj.action_dim != a_dim || !traj.is_well_formed() {
                return Err(Error::ShapeMismatch { expected: a_dim, found: traj.action_dim });
            }
            let steps = traj.len();
            let mut obs_in = Vec::with_capacity((steps + 1) * OBS_DIM);
            for o in &traj.observations {
                Self::encode_obs(o, &mut obs_in);
            }
            let actor_trace = self.actor.forward(&obs_in, &zero_h)?;

            // next-state actions for the bootstrap and fresh actions for the actor loss
            let mut next_samples: Vec<SquashedSample> = Vec::with_capacity(steps);
            let mut new_samples: Vec<SquashedSample> = Vec::with_capacity(steps);
            for t in 0..=steps {
                let raw = actor_trace.output(t);
                if t >= 1 {
                    let noise: Vec<f64> = (0..a_dim).map(|_| rng.standard_normal()).collect();
                    next_samples.push(squashed_gaussian(raw, &noise, &self.scale));
                }
                if t < steps {
                    let noise: Vec<f64> = (0..a_dim).map(|_| rng.standard_normal()).collect();
                    new_samples.push(squashed_gaussian(raw, &noise, &self.scale));
                }
            }

            let mut critic_in = Vec::with_capacity(steps * cin);
            for t in 0..steps {
                Self::encode_obs(&traj.observations[t], &mut critic_in);
                self.encode_action(traj.action(t), &mut critic_in);
            }

            // bootstrap values from the target critics
            let mut q_next = [vec![0.0; steps], vec![0.0; steps]];
            for (i, target) in self.targets.iter().enumerate() {
                let trace = target.forward(&critic_in, &zero_h)?;
                let mut x = Vec::with_capacity(cin);
                for t in 0..steps {
                    x.clear();
                    Self::encode_obs(&traj.observations[t + 1], &mut x);
                    self.encode_action(&next_samples[t].action, &mut x);
                    q_next[i][t] = target.forward(&x, trace.hidden_after(t + 1))?.outputs[0];
                }
            }

            let online = [
                self.critics[0].forward(&critic_in, &zero_h)?,
                self.critics[1].forward(&critic_in, &zero_h)?,
            ];
            for (i, trace) in online.iter().enumerate() {
                let mut d_out = vec![0.0; steps];
                for t in 0..steps {
                    let y = td_target(traj.rewards[t], gamma, q_next[0][t], q_next[1][t], alpha, next_samples[t].log_prob);
                    let err = trace.outputs[t] - y;
                    if i == 0 {
                        report.critic1 += err * err * norm;
                    } else {
                        report.critic2 += err * err * norm;
                    }
                    d_out[t] = 2.0 * err * norm;
                }
                backward(&self.critics[i], trace, &d_out, Grads::params(&mut g_critic[i]))?;
            }

            // actor loss through one branched critic step per time index
            let mut d_raw = vec![0.0; (steps + 1) * 2 * a_dim];
            let mut x = Vec::with_capacity(cin);
            for t in 0..steps {
                let sample = &new_samples[t];
                x.clear();
                Self::encode_obs(&traj.observations[t], &mut x);
                self.encode_action(&sample.action, &mut x);
                let b0 = self.critics[0].forward(&x, online[0].hidden_after(t))?;
                let b1 = self.critics[1].forward(&x, online[1].hidden_after(t))?;
                let (q0, q1) = (b0.outputs[0], b1.outputs[0]);
                let (pick, branch) = if q0 <= q1 { (0, &b0) } else { (1, &b1) };
                let q_min = q0.min(q1);
                report.actor += (alpha * sample.log_prob - q_min) * norm;
                log_prob_sum += sample.log_prob;

                let mut dx = vec![0.0; cin];
                backward(&self.critics[pick], branch, &[-norm], Grads::inputs(&mut dx))?;
                let d_action: Vec<f64> = (0..a_dim).map(|j| dx[OBS_DIM + j] / self.scale.scale[j]).collect();
                let g = squashed_gaussian_backward(sample, &self.scale, &d_action, alpha * norm);
                d_raw[t * 2 * a_dim..(t + 1) * 2 * a_dim].copy_from_slice(&g);
            }
            backward(&self.actor, &actor_trace, &d_raw, Grads::params(&mut g_actor))?;
        }

        let mean_log_prob = log_prob_sum * norm;
        report.entropy = -mean_log_prob;
        report.alpha_loss = -self.log_alpha * (mean_log_prob + self.target_entropy());
        for (what, v) in [("critic 1 loss", report.critic1), ("critic 2 loss", report.critic2), ("actor loss", report.actor)] {
            if !v.is_finite() {
                return Err(Error::Divergence { what, value: v });
            }
        }

        for i in 0..2 {
            adam_update(self.critics[i].values_mut(), &g_critic[i], &mut self.critic_opts[i])?;
        }
        adam_update(self.actor.values_mut(), &g_actor, &mut self.actor_opt)?;
        if !self.config.fixed_alpha {
            let grad = -(mean_log_prob + self.target_entropy());
            let mut la = [self.log_alpha];
            adam_update(&mut la, &[grad], &mut self.alpha_opt)?;
            self.log_alpha = la[0];
        }
        self.soft_update(self.config.tau);
        self.updates += 1;
        Ok(report)
    }

    /// Critic value of every step of `traj` under its recorded actions.
    pub fn critic_values(&self, traj: &Trajectory, which: usize) -> Result<Vec<f64>> {
        let mut critic_in = Vec::new();
        for t in 0..traj.len() {
            Self::encode_obs(&traj.observations[t], &mut critic_in);
            self.encode_action(traj.action(t), &mut critic_in);
        }
        Ok(self.critics[which].forward(&critic_in, &vec![0.0; self.config.gru_hidden])?.outputs)
    }
}

/// The actor driven step by step through an episode.
pub struct PolicyController<'a> {
    agent: &'a Agent,
    hidden: Vec<f64>,
    mode: ActMode,
    rng: &'a mut SeededRng,
}

impl<'a> PolicyController<'a> {
    pub fn new(agent: &'a Agent, mode: ActMode, rng: &'a mut SeededRng) -> Self {
        Self { hidden: agent.initial_hidden(), agent, mode, rng }
    }
}

impl Controller for PolicyController<'_> {
    fn reset(&mut self) {
        self.hidden = self.agent.initial_hidden();
    }

    fn act(&mut self, obs: &Observation) -> Result<Vec<f64>> {
        self.agent.act(obs, &mut self.hidden, self.mode, self.rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{reward, RewardSpec};
    use crate::randomize::streams;
    use rand::Rng;

    fn toy_trajectory(len: usize, a_dim: usize, seed: u64) -> Trajectory {
        let mut r = SeededRng::new(seed, 99);
        let target = [r.uniform(-10.0, 10.0), r.uniform(-10.0, 10.0)];
        let y0 = [0.0; 4];
        let mut traj = Trajectory::new(Observation::new(y0, target), y0, a_dim);
        let spec = if a_dim == 2 { RewardSpec::eye() } else { RewardSpec::wrist() };
        for _ in 0..len {
            let a: Vec<f64> = (0..a_dim).map(|_| r.uniform(0.0, 10.0)).collect();
            let y = [r.uniform(-10.0, 10.0), r.uniform(-5.0, 5.0), r.uniform(-10.0, 10.0), r.uniform(-5.0, 5.0)];
            let rew = reward(&spec, &y, &target, &a);
            traj.push(&a, rew, Observation::new(y, target), y);
        }
        traj.truncated = true;
        traj
    }

    fn small_config() -> SacConfig {
        SacConfig { gru_hidden: 8, batch_size: 2, ..Default::default() }
    }

    #[test]
    fn twin_min_target() {
        assert_eq!(td_target(1.0, 0.5, 4.0, 2.0, 0.0, 0.0), 2.0);
        assert_eq!(td_target(1.0, 0.5, -3.0, 2.0, 0.0, 0.0), -0.5);
        assert_eq!(td_target(1.0, 0.5, 2.0, 2.0, 0.2, -1.0), 1.0 + 0.5 * 2.2);
        assert_eq!(td_target(-2.5, 0.0, 10.0, 20.0, 0.3, 7.0), -2.5);
    }

    #[test]
    fn transitions_chain() {
        let traj = toy_trajectory(5, 3, 1);
        assert!(traj.is_well_formed());
        for t in 0..4 {
            assert_eq!(traj.transition(t).next_state, traj.transition(t + 1).state);
        }
    }

    #[test]
    fn buffer_evicts_oldest() {
        let mut buf = ReplayBuffer::new(100_000, 2);
        for i in 0..100_001u64 {
            let mut t = Trajectory::new(Observation([0.0; 6]), [0.0; 4], 1);
            t.push(&[i as f64], 0.0, Observation([0.0; 6]), [0.0; 4]);
            t.push(&[0.0], 0.0, Observation([0.0; 6]), [0.0; 4]);
            buf.push(t).unwrap();
        }
        assert_eq!(buf.len(), 100_000);
        assert_eq!(buf.iter().next().unwrap().actions[0], 1.0);
        assert_eq!(buf.iter().last().unwrap().actions[0], 100_000.0);
        assert_eq!(buf.total_pushed(), 100_001);
    }

    #[test]
    fn buffer_rejects_wrong_length_and_underfill() {
        let mut buf = ReplayBuffer::new(10, 4);
        assert!(matches!(buf.push(toy_trajectory(3, 2, 0)), Err(Error::TrajectoryLength { .. })));
        buf.push(toy_trajectory(4, 2, 0)).unwrap();
        let mut rng = SeededRng::new(1, streams::REPLAY);
        assert_eq!(buf.sample(2, &mut rng).unwrap_err(), Error::BufferNotReady { len: 1, requested: 2 });
    }

    #[test]
    fn sampling_is_seeded_and_without_replacement() {
        let mut buf = ReplayBuffer::new(100, 3);
        for i in 0..60 {
            buf.push(toy_trajectory(3, 2, i)).unwrap();
        }
        let a = buf.sample_indices(20, &mut SeededRng::new(5, streams::REPLAY)).unwrap();
        let b = buf.sample_indices(20, &mut SeededRng::new(5, streams::REPLAY)).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 20);
        // stored and sampled trajectories are the same bits
        let sampled = buf.sample(20, &mut SeededRng::new(5, streams::REPLAY)).unwrap();
        for (i, t) in a.iter().zip(sampled) {
            assert_eq!(buf.get(*i).unwrap(), t);
            assert!(core::ptr::eq(buf.get(*i).unwrap(), t));
        }
    }

    #[test]
    fn soft_update_blends() {
        let mut rng = SeededRng::new(0, streams::INIT);
        let mut agent = Agent::new(PlantKind::Eye, small_config(), &mut rng).unwrap();
        for v in agent.critics[0].values_mut() {
            *v = 1.0;
        }
        for v in agent.targets[0].values_mut() {
            *v = 0.0;
        }
        let before = agent.targets[1].clone();
        agent.soft_update(0.0);
        assert_eq!(agent.targets[1].values(), before.values());
        agent.soft_update(0.005);
        assert!(agent.targets[0].values().iter().all(|v| (*v - 0.005).abs() < 1e-18));
        agent.soft_update(1.0);
        assert_eq!(agent.targets[0].values(), agent.critics[0].values());
    }

    #[test]
    fn deterministic_actions_repeat_and_stay_in_box() {
        let mut rng = SeededRng::new(3, streams::INIT);
        for kind in [PlantKind::Eye, PlantKind::Wrist] {
            let agent = Agent::new(kind, small_config(), &mut rng).unwrap();
            let obs = Observation([1.0, 2.0, -3.0, 0.5, 4.0, -5.0]);
            let mut h1 = agent.initial_hidden();
            let mut h2 = agent.initial_hidden();
            let a = agent.act(&obs, &mut h1, ActMode::Deterministic, &mut rng).unwrap();
            let b = agent.act(&obs, &mut h2, ActMode::Deterministic, &mut rng).unwrap();
            assert_eq!(a, b);
            let (lo, hi) = kind.action_bounds();
            for _ in 0..200 {
                let a = agent.act(&obs, &mut h1, ActMode::Stochastic, &mut rng).unwrap();
                assert!(a.iter().all(|x| (lo..=hi).contains(x)));
            }
        }
    }

    #[test]
    fn fresh_eye_agent_acts_near_center() {
        let mut inside = 0;
        for seed in 0..200 {
            let mut rng = SeededRng::new(seed, streams::INIT);
            let agent = Agent::new(PlantKind::Eye, small_config(), &mut rng).unwrap();
            let mut h = agent.initial_hidden();
            let a = agent.act(&Observation([0.0; 6]), &mut h, ActMode::Deterministic, &mut rng).unwrap();
            if a.iter().all(|x| x.abs() < 2.0) {
                inside += 1;
            }
        }
        assert!(inside >= 190);
    }

    #[test]
    fn degenerate_bellman_target_is_reward() {
        let config = SacConfig {
            gru_hidden: 8,
            batch_size: 1,
            gamma: 0.0,
            initial_alpha: 0.0,
            fixed_alpha: true,
            lr: 1e-2,
            ..Default::default()
        };
        let mut rng = SeededRng::new(4, streams::INIT);
        let mut agent = Agent::new(PlantKind::Wrist, config, &mut rng).unwrap();
        let traj = toy_trajectory(1, 3, 9);
        let mut urng = SeededRng::new(4, streams::UPDATE);
        for _ in 0..1500 {
            agent.update(&[&traj], &mut urng).unwrap();
        }
        for i in 0..2 {
            let q = agent.critic_values(&traj, i).unwrap()[0];
            assert!((q - traj.rewards[0]).abs() < 1e-3, "critic {i}: {q} vs {}", traj.rewards[0]);
        }
    }

    #[test]
    fn critic_overfits_fixed_batch() {
        let config = SacConfig { gru_hidden: 16, batch_size: 2, lr: 1e-2, ..Default::default() };
        let mut rng = SeededRng::new(6, streams::INIT);
        let mut agent = Agent::new(PlantKind::Wrist, config, &mut rng).unwrap();
        let trajs: Vec<Trajectory> = (0..2).map(|i| toy_trajectory(4, 3, 100 + i)).collect();
        let batch: Vec<&Trajectory> = trajs.iter().collect();
        let mut urng = SeededRng::new(6, streams::UPDATE);
        let first = agent.update(&batch, &mut urng).unwrap();
        let mut last = first;
        for _ in 0..200 {
            last = agent.update(&batch, &mut urng).unwrap();
        }
        assert!(last.critic1 * 10.0 <= first.critic1, "{} -> {}", first.critic1, last.critic1);
        assert!(last.critic2 * 10.0 <= first.critic2, "{} -> {}", first.critic2, last.critic2);
    }

    #[test]
    fn alpha_gradient_vanishes_at_entropy_target() {
        let mut rng = SeededRng::new(8, streams::INIT);
        let mut agent = Agent::new(PlantKind::Eye, small_config(), &mut rng).unwrap();
        let traj = toy_trajectory(3, 2, 5);
        // measure the batch mean log-prob the update will see, then aim the target at it
        let mut probe = agent.clone();
        let report = probe.update(&[&traj], &mut SeededRng::new(1, streams::UPDATE)).unwrap();
        agent.config.target_entropy = Some(report.entropy);
        let before = agent.log_alpha;
        agent.update(&[&traj], &mut SeededRng::new(1, streams::UPDATE)).unwrap();
        assert!((agent.log_alpha - before).abs() < 1e-12);
        assert!(agent.alpha_opt.m[0].abs() < 1e-15);
    }

    #[test]
    fn target_lags_online_by_tau() {
        let mut rng = SeededRng::new(10, streams::INIT);
        let mut agent = Agent::new(PlantKind::Wrist, small_config(), &mut rng).unwrap();
        // separate online from target first
        for v in agent.critics[0].values_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        let prev = agent.targets[0].clone();
        let trajs = [toy_trajectory(4, 3, 1), toy_trajectory(4, 3, 2)];
        agent.update(&[&trajs[0], &trajs[1]], &mut SeededRng::new(2, streams::UPDATE)).unwrap();
        let norm = |a: &[f64], b: &[f64]| libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>());
        let moved = norm(agent.targets[0].values(), prev.values());
        let gap = norm(agent.critics[0].values(), prev.values());
        assert!(moved <= 0.005 * gap + 1e-12);
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let mut rng = SeededRng::new(12, streams::INIT);
            let mut agent = Agent::new(PlantKind::Eye, small_config(), &mut rng).unwrap();
            let trajs = [toy_trajectory(5, 2, 3), toy_trajectory(5, 2, 4)];
            let mut urng = SeededRng::new(12, streams::UPDATE);
            for _ in 0..5 {
                agent.update(&[&trajs[0], &trajs[1]], &mut urng).unwrap();
            }
            agent
        };
        assert_eq!(run(), run());
    }

    /// Finite-difference check of the actor gradient through the branched critics.
    #[test]
    fn actor_gradient_matches_finite_differences() {
        let config = SacConfig { gru_hidden: 5, batch_size: 1, ..Default::default() };
        let mut rng = SeededRng::new(14, streams::INIT);
        let agent = Agent::new(PlantKind::Wrist, config, &mut rng).unwrap();
        let traj = toy_trajectory(3, 3, 7);
        let zero_h = vec![0.0; 5];
        let noises: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.standard_normal()).collect()).collect();
        let alpha = agent.alpha();

        let actor_loss = |actor: &NetworkParams| {
            let mut obs = Vec::new();
            for o in &traj.observations {
                Agent::encode_obs(o, &mut obs);
            }
            let tr = actor.forward(&obs, &zero_h).unwrap();
            let mut cin = Vec::new();
            for t in 0..3 {
                Agent::encode_obs(&traj.observations[t], &mut cin);
                agent.encode_action(traj.action(t), &mut cin);
            }
            let online = [agent.critics[0].forward(&cin, &zero_h).unwrap(), agent.critics[1].forward(&cin, &zero_h).unwrap()];
            let mut loss = 0.0;
            for t in 0..3 {
                let s = squashed_gaussian(tr.output(t), &noises[t], &agent.scale);
                let mut x = Vec::new();
                Agent::encode_obs(&traj.observations[t], &mut x);
                agent.encode_action(&s.action, &mut x);
                let q0 = agent.critics[0].forward(&x, online[0].hidden_after(t)).unwrap().outputs[0];
                let q1 = agent.critics[1].forward(&x, online[1].hidden_after(t)).unwrap().outputs[0];
                loss += (alpha * s.log_prob - q0.min(q1)) / 3.0;
            }
            loss
        };

        // analytic gradient assembled the same way `update` does
        let mut obs = Vec::new();
        for o in &traj.observations {
            Agent::encode_obs(o, &mut obs);
        }
        let tr = agent.actor.forward(&obs, &zero_h).unwrap();
        let mut cin = Vec::new();
        for t in 0..3 {
            Agent::encode_obs(&traj.observations[t], &mut cin);
            agent.encode_action(traj.action(t), &mut cin);
        }
        let online = [agent.critics[0].forward(&cin, &zero_h).unwrap(), agent.critics[1].forward(&cin, &zero_h).unwrap()];
        let mut d_raw = vec![0.0; 4 * 6];
        for t in 0..3 {
            let s = squashed_gaussian(tr.output(t), &noises[t], &agent.scale);
            let mut x = Vec::new();
            Agent::encode_obs(&traj.observations[t], &mut x);
            agent.encode_action(&s.action, &mut x);
            let b0 = agent.critics[0].forward(&x, online[0].hidden_after(t)).unwrap();
            let b1 = agent.critics[1].forward(&x, online[1].hidden_after(t)).unwrap();
            let (pick, br) = if b0.outputs[0] <= b1.outputs[0] { (0, &b0) } else { (1, &b1) };
            let mut dx = vec![0.0; 9];
            backward(&agent.critics[pick], br, &[-1.0 / 3.0], Grads::inputs(&mut dx)).unwrap();
            let da: Vec<f64> = (0..3).map(|j| dx[6 + j] / agent.scale.scale[j]).collect();
            let g = squashed_gaussian_backward(&s, &agent.scale, &da, alpha / 3.0);
            d_raw[t * 6..(t + 1) * 6].copy_from_slice(&g);
        }
        let mut grad = vec![0.0; agent.actor.len()];
        backward(&agent.actor, &tr, &d_raw, Grads::params(&mut grad)).unwrap();

        for i in (0..agent.actor.len()).step_by(7) {
            let mut up = agent.actor.clone();
            up.values_mut()[i] += 1e-6;
            let mut dn = agent.actor.clone();
            dn.values_mut()[i] -= 1e-6;
            let fd = (actor_loss(&up) - actor_loss(&dn)) / 2e-6;
            let err = (fd - grad[i]).abs() / (fd.abs() + grad[i].abs()).max(1e-4);
            assert!(err < 1e-5, "param {i}: fd {fd} vs {}", grad[i]);
        }
    }
}
