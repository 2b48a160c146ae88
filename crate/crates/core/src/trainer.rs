//! Two-phase training loop: `M` warm-up episodes (PID, or uniform-random
//! actions when the bootstrap is ablated), then policy episodes each followed
//! by `k` gradient steps. The whole loop state is serializable so a
//! run can stop after any episode and resume bit-for-bit.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bar::{store_augmented, AugmentationSpec, PidController, PidGains};
use crate::env::{rollout, Controller, Env, EpisodeConfig, Observation, RewardSpec};
use crate::plant::{PlantConfig, PlantKind};
use crate::randomize::{streams, RandomizationSpec, SeededRng};
use crate::sac::{ActMode, Agent, LossReport, PolicyController, ReplayBuffer, SacConfig, Trajectory};
use crate::{Error, Result};

/// Who acts during the first `M` episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Warmup {
    Pid,
    /// Uniform over the action box.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub plant: PlantConfig,
    pub episode: EpisodeConfig,
    pub reward: RewardSpec,
    pub randomization: RandomizationSpec,
    pub sac: SacConfig,
    pub pid: PidGains,
    pub augmentation: AugmentationSpec,
    /// Total episodes `N`.
    pub episodes: usize,
    /// Leading warm-up episodes `M`; no gradient steps run during them.
    pub bootstrap_episodes: usize,
    pub warmup: Warmup,
    /// Trajectories held by the replay buffer.
    pub buffer_capacity: usize,
    /// Gradient steps after each policy episode.
    pub updates_per_episode: usize,
}

impl TrainConfig {
    pub fn preset(kind: PlantKind) -> Self {
        let episode = EpisodeConfig::preset(kind);
        let (n, m) = match kind {
            PlantKind::Eye => (2000, 250),
            PlantKind::Wrist => (3500, 500),
        };
        Self {
            plant: PlantConfig::preset(kind),
            reward: RewardSpec::preset(kind),
            randomization: RandomizationSpec::default(),
            sac: SacConfig { gamma: episode.gamma, ..SacConfig::default() },
            pid: PidGains::preset(kind),
            augmentation: AugmentationSpec { target_range: episode.target_range, ..AugmentationSpec::default() },
            episodes: n,
            bootstrap_episodes: m,
            warmup: Warmup::Pid,
            buffer_capacity: 100_000,
            updates_per_episode: episode.episode_length,
            episode,
        }
    }

    pub fn kind(&self) -> PlantKind {
        self.plant.kind
    }

    /// Random actions instead of PID in the warm-up window.
    pub fn without_bootstrap(mut self) -> Self {
        self.warmup = Warmup::Random;
        self
    }

    pub fn without_augmentation(mut self) -> Self {
        self.augmentation.n = 0;
        self
    }

    /// Nominal muscles every episode and noiseless observations.
    pub fn without_randomization(mut self) -> Self {
        self.randomization = RandomizationSpec::disabled();
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.episode.validate()?;
        self.reward.validate()?;
        self.randomization.validate()?;
        self.pid.validate()?;
        self.augmentation.validate()?;
        if self.bootstrap_episodes > self.episodes {
            return Err(Error::InvalidParameter("bootstrap episodes exceed total episodes"));
        }
        if self.sac.batch_size == 0 || self.sac.gru_hidden == 0 {
            return Err(Error::InvalidParameter("batch size and hidden width must be positive"));
        }
        if self.buffer_capacity < self.sac.batch_size {
            return Err(Error::InvalidParameter("buffer smaller than one batch"));
        }
        if self.reward.r_a.len() != self.kind().action_dim() {
            return Err(Error::ShapeMismatch { expected: self.kind().action_dim(), found: self.reward.r_a.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerTag {
    Pid,
    Random,
    Policy,
}

impl ControllerTag {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pid => "pid",
            Self::Random => "random",
            Self::Policy => "policy",
        }
    }
}

struct RandomController<'a> {
    lo: f64,
    hi: f64,
    dim: usize,
    rng: &'a mut SeededRng,
}

impl Controller for RandomController<'_> {
    fn reset(&mut self) {}

    fn act(&mut self, _obs: &Observation) -> Result<Vec<f64>> {
        Ok((0..self.dim).map(|_| self.rng.uniform(self.lo, self.hi)).collect())
    }
}

/// What happened in one training episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// 1-based.
    pub episode: usize,
    pub controller: ControllerTag,
    pub target: [f64; 2],
    pub episode_return: f64,
    pub average_reward: f64,
    pub buffer_len: usize,
    pub updates: usize,
    /// Mean over this episode's gradient steps.
    pub losses: Option<LossReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub config: TrainConfig,
    pub seed: u64,
    pub env: Env,
    pub agent: Agent,
    pub buffer: ReplayBuffer,
    /// Episodes completed.
    pub episode: usize,
    policy_rng: SeededRng,
    replay_rng: SeededRng,
    augment_rng: SeededRng,
    update_rng: SeededRng,
    explore_rng: SeededRng,
}

impl Trainer {
    pub fn new(config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let env = Env::new(
            config.plant.clone(),
            config.episode,
            config.reward.clone(),
            config.randomization,
            seed,
        )?;
        let agent = Agent::new(config.kind(), config.sac, &mut SeededRng::new(seed, streams::INIT))?;
        let buffer = ReplayBuffer::new(config.buffer_capacity, config.episode.episode_length);
        Ok(Self {
            config,
            seed,
            env,
            agent,
            buffer,
            episode: 0,
            policy_rng: SeededRng::new(seed, streams::POLICY),
            replay_rng: SeededRng::new(seed, streams::REPLAY),
            augment_rng: SeededRng::new(seed, streams::AUGMENT),
            update_rng: SeededRng::new(seed, streams::UPDATE),
            explore_rng: SeededRng::new(seed, streams::EXPLORE),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.episode >= self.config.episodes
    }

    /// Run the next episode of the schedule.
    pub fn run_episode(&mut self) -> Result<EpisodeRecord> {
        if self.is_finished() {
            return Err(Error::EpisodeDone);
        }
        let kind = self.config.kind();
        let controller = match self.config.warmup {
            _ if self.episode >= self.config.bootstrap_episodes => ControllerTag::Policy,
            Warmup::Pid => ControllerTag::Pid,
            Warmup::Random => ControllerTag::Random,
        };
        let log = match controller {
            ControllerTag::Pid => {
                let mut pid = PidController::for_env(self.config.pid, &self.env)?;
                rollout(&mut self.env, None, &mut pid)?
            }
            ControllerTag::Random => {
                let (lo, hi) = kind.action_bounds();
                let mut ctrl = RandomController { lo, hi, dim: kind.action_dim(), rng: &mut self.explore_rng };
                rollout(&mut self.env, None, &mut ctrl)?
            }
            ControllerTag::Policy => {
                let mut policy = PolicyController::new(&self.agent, ActMode::Stochastic, &mut self.policy_rng);
                rollout(&mut self.env, None, &mut policy)?
            }
        };
        let traj = Trajectory::from_log(&log, kind.action_dim());
        store_augmented(&mut self.buffer, traj, &self.config.augmentation, &self.config.reward, &mut self.augment_rng)?;

        let mut updates = 0;
        let mut sum = LossReport::default();
        if controller == ControllerTag::Policy {
            for _ in 0..self.config.updates_per_episode {
                if self.buffer.len() < self.config.sac.batch_size {
                    break;
                }
                let batch = self.buffer.sample(self.config.sac.batch_size, &mut self.replay_rng)?;
                let r = self.agent.update(&batch, &mut self.update_rng)?;
                sum.critic1 += r.critic1;
                sum.critic2 += r.critic2;
                sum.actor += r.actor;
                sum.alpha += r.alpha;
                sum.alpha_loss += r.alpha_loss;
                sum.entropy += r.entropy;
                updates += 1;
            }
        }
        let losses = (updates > 0).then(|| {
            let k = updates as f64;
            LossReport {
                critic1: sum.critic1 / k,
                critic2: sum.critic2 / k,
                actor: sum.actor / k,
                alpha: sum.alpha / k,
                alpha_loss: sum.alpha_loss / k,
                entropy: sum.entropy / k,
            }
        });
        self.episode += 1;
        Ok(EpisodeRecord {
            episode: self.episode,
            controller,
            target: log.target,
            episode_return: log.episode_return(),
            average_reward: log.average_reward(),
            buffer_len: self.buffer.len(),
            updates,
            losses,
        })
    }

    /// Run up to `count` more episodes, stopping early at the end of the schedule.
    pub fn run(&mut self, count: usize) -> Result<Vec<EpisodeRecord>> {
        let mut out = Vec::new();
        while out.len() < count && !self.is_finished() {
            out.push(self.run_episode()?);
        }
        Ok(out)
    }
}
