//! Episodic target-tracking task on top of a plant.
//!
//! The agent sees `s = [a1, a1', a2, a2', a1*, a2*]` (deg, deg/s) with noise on
//! the first four slots. Rewards are scored on the noiseless plant output:
//! `r = -(e' Q e + a' R a) + bonus`, `e = |y* - y|` with zero rate targets, and
//! `bonus_value` granted per angle whose error is under the threshold.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::plant::{plant_advance, PlantConfig, PlantKind, PlantState, MAX_VOLTS};
use crate::randomize::{
    apply_observation_noise, noise_channels, sample_muscle_set, streams, RandomizationSpec, SeededRng,
};
use crate::{Error, Result};

pub const OBS_DIM: usize = 6;

/// Agent-visible state: four motion slots followed by the two target angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn new(output: [f64; 4], target: [f64; 2]) -> Self {
        Self([output[0], output[1], output[2], output[3], target[0], target[1]])
    }

    pub fn motion(&self) -> [f64; 4] {
        [self.0[0], self.0[1], self.0[2], self.0[3]]
    }

    pub fn target(&self) -> [f64; 2] {
        [self.0[4], self.0[5]]
    }

    pub fn with_target(mut self, target: [f64; 2]) -> Self {
        self.0[4] = target[0];
        self.0[5] = target[1];
        self
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Quadratic tracking cost weights and the in-threshold bonus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    /// Diagonal of the output weight, `[a1, a1', a2, a2']`.
    pub q_e: [f64; 4],
    /// Diagonal of the action weight.
    pub r_a: Vec<f64>,
    /// deg
    pub bonus_threshold: f64,
    pub bonus_value: f64,
}

impl RewardSpec {
    pub fn eye() -> Self {
        Self { q_e: [0.05, 0.25, 0.05, 0.25], r_a: alloc::vec![0.01; 2], bonus_threshold: 0.3, bonus_value: 2.0 }
    }

    pub fn wrist() -> Self {
        Self { q_e: [0.05, 0.2, 0.05, 0.2], r_a: alloc::vec![0.01; 3], bonus_threshold: 0.5, bonus_value: 2.0 }
    }

    pub fn preset(kind: PlantKind) -> Self {
        match kind {
            PlantKind::Eye => Self::eye(),
            PlantKind::Wrist => Self::wrist(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q_e.iter().chain(&self.r_a).any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter("reward weights must be nonnegative"));
        }
        if !(self.bonus_threshold >= 0.0) {
            return Err(Error::InvalidParameter("bonus threshold must be nonnegative"));
        }
        Ok(())
    }

    /// Largest attainable reward.
    pub fn max_reward(&self) -> f64 {
        2.0 * self.bonus_value
    }
}

/// Reward for output `y = [a1, a1', a2, a2']` against target angles `y_star`.
pub fn reward(spec: &RewardSpec, y: &[f64; 4], y_star: &[f64; 2], action: &[f64]) -> f64 {
    let goal = [y_star[0], 0.0, y_star[1], 0.0];
    let mut cost = 0.0;
    for i in 0..4 {
        let e = (goal[i] - y[i]).abs();
        cost += spec.q_e[i] * e * e;
    }
    for (w, a) in spec.r_a.iter().zip(action) {
        cost += w * a * a;
    }
    let mut bonus = 0.0;
    if (goal[0] - y[0]).abs() < spec.bonus_threshold {
        bonus += spec.bonus_value;
    }
    if (goal[2] - y[2]).abs() < spec.bonus_threshold {
        bonus += spec.bonus_value;
    }
    -cost + bonus
}

/// Timing, horizon and target distribution of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Control period, s.
    pub action_period: f64,
    /// Physics integration step, s.
    pub physics_dt: f64,
    /// Actions per episode.
    pub episode_length: usize,
    /// Targets are uniform on `[-range, range]^2`, deg.
    pub target_range: f64,
    pub gamma: f64,
}

impl EpisodeConfig {
    pub fn eye() -> Self {
        Self { action_period: 0.5, physics_dt: 0.01, episode_length: 30, target_range: 10.0, gamma: 0.99 }
    }

    pub fn wrist() -> Self {
        Self { episode_length: 40, ..Self::eye() }
    }

    pub fn preset(kind: PlantKind) -> Self {
        match kind {
            PlantKind::Eye => Self::eye(),
            PlantKind::Wrist => Self::wrist(),
        }
    }

    pub fn substeps(&self) -> usize {
        libm::round(self.action_period / self.physics_dt) as usize
    }

    pub fn duration(&self) -> f64 {
        self.episode_length as f64 * self.action_period
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.action_period > 0.0 && self.physics_dt > 0.0) {
            return Err(Error::InvalidParameter("time steps must be positive"));
        }
        if self.episode_length == 0 {
            return Err(Error::InvalidParameter("episode length must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidParameter("gamma must lie in (0, 1]"));
        }
        if !(self.target_range >= 0.0) {
            return Err(Error::InvalidParameter("target range must be nonnegative"));
        }
        let ratio = self.action_period / self.physics_dt;
        if (ratio - libm::round(ratio)).abs() > 1e-9 {
            return Err(Error::InvalidParameter("action period must be a multiple of physics dt"));
        }
        Ok(())
    }
}

/// Eye action map: each signed component powers exactly one muscle of its pair.
pub fn map_action_eye(a: [f64; 2]) -> [f64; 4] {
    let a1 = a[0].clamp(-MAX_VOLTS, MAX_VOLTS);
    let a2 = a[1].clamp(-MAX_VOLTS, MAX_VOLTS);
    [-a1.min(0.0), a1.max(0.0), -a2.min(0.0), a2.max(0.0)]
}

/// Clamp an action to the box of `kind` and translate it to muscle voltages.
pub fn action_to_voltages(kind: PlantKind, action: &[f64]) -> Result<Vec<f64>> {
    if action.len() != kind.action_dim() {
        return Err(Error::ShapeMismatch { expected: kind.action_dim(), found: action.len() });
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("action"));
    }
    Ok(match kind {
        PlantKind::Eye => map_action_eye([action[0], action[1]]).to_vec(),
        PlantKind::Wrist => action.iter().map(|a| a.clamp(0.0, MAX_VOLTS)).collect(),
    })
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: PlantState,
    pub observation: Observation,
    pub reward: f64,
    /// Time limit reached; the critic still bootstraps through this step.
    pub done: bool,
    pub voltages: Vec<f64>,
}

/// One robot, one episode at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Env {
    nominal: PlantConfig,
    active: PlantConfig,
    episode: EpisodeConfig,
    reward: RewardSpec,
    randomization: RandomizationSpec,
    param_rng: SeededRng,
    target_rng: SeededRng,
    noise: [SeededRng; 4],
    state: Option<PlantState>,
    target: [f64; 2],
    step: usize,
}

impl Env {
    pub fn new(
        plant: PlantConfig,
        episode: EpisodeConfig,
        reward: RewardSpec,
        randomization: RandomizationSpec,
        seed: u64,
    ) -> Result<Self> {
        plant.validate()?;
        episode.validate()?;
        reward.validate()?;
        randomization.validate()?;
        if reward.r_a.len() != plant.kind.action_dim() {
            return Err(Error::ShapeMismatch { expected: plant.kind.action_dim(), found: reward.r_a.len() });
        }
        Ok(Self {
            active: plant.clone(),
            nominal: plant,
            episode,
            reward,
            randomization,
            param_rng: SeededRng::new(seed, streams::PARAMS),
            target_rng: SeededRng::new(seed, streams::TARGET),
            noise: noise_channels(seed),
            state: None,
            target: [0.0; 2],
            step: 0,
        })
    }

    /// Default configuration for a preset.
    pub fn preset(kind: PlantKind, randomization: RandomizationSpec, seed: u64) -> Result<Self> {
        Self::new(
            PlantConfig::preset(kind),
            EpisodeConfig::preset(kind),
            RewardSpec::preset(kind),
            randomization,
            seed,
        )
    }

    pub fn kind(&self) -> PlantKind {
        self.nominal.kind
    }

    pub fn episode_config(&self) -> &EpisodeConfig {
        &self.episode
    }

    pub fn reward_spec(&self) -> &RewardSpec {
        &self.reward
    }

    pub fn randomization(&self) -> &RandomizationSpec {
        &self.randomization
    }

    pub fn nominal_plant(&self) -> &PlantConfig {
        &self.nominal
    }

    /// Plant with this episode's sampled muscle parameters.
    pub fn active_plant(&self) -> &PlantConfig {
        &self.active
    }

    pub fn state(&self) -> Option<&PlantState> {
        self.state.as_ref()
    }

    pub fn target(&self) -> [f64; 2] {
        self.target
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.state.is_some() && self.step >= self.episode.episode_length
    }

    /// Start an episode: resample muscles, draw a uniform target, rest pose.
    pub fn reset(&mut self) -> (PlantState, Observation) {
        let range = self.episode.target_range;
        let target = [self.target_rng.uniform(-range, range), self.target_rng.uniform(-range, range)];
        self.reset_with_target(target)
    }

    /// Start an episode towards a given target. Muscle parameters are still
    /// drawn from the randomization spec.
    pub fn reset_with_target(&mut self, target: [f64; 2]) -> (PlantState, Observation) {
        self.active.muscles = sample_muscle_set(&self.nominal.muscles, &self.randomization, &mut self.param_rng);
        self.target = target;
        self.step = 0;
        let state = PlantState::rest(&self.active);
        self.state = Some(state.clone());
        (state.clone(), self.observe(&state))
    }

    fn observe(&mut self, state: &PlantState) -> Observation {
        let clean = Observation::new(state.output(), self.target);
        apply_observation_noise(&clean, &self.randomization, &mut self.noise)
    }

    /// Apply `action` for one control period.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let state = self.state.as_ref().ok_or(Error::NotReset)?;
        if self.step >= self.episode.episode_length {
            return Err(Error::EpisodeDone);
        }
        let voltages = action_to_voltages(self.kind(), action)?;
        let next =
            plant_advance(&self.active, state, &voltages, self.episode.physics_dt, self.episode.substeps())?;
        let (lo, hi) = self.kind().action_bounds();
        let applied: Vec<f64> = action.iter().map(|a| a.clamp(lo, hi)).collect();
        let r = reward(&self.reward, &next.output(), &self.target, &applied);
        let observation = self.observe(&next);
        self.step += 1;
        self.state = Some(next.clone());
        Ok(StepOutcome {
            state: next,
            observation,
            reward: r,
            done: self.step >= self.episode.episode_length,
            voltages,
        })
    }

    /// Overwrite the plant state mid-episode. Intended for tests and oracles.
    pub fn set_state(&mut self, state: PlantState) {
        self.state = Some(state);
    }
}

/// Anything that maps the observation stream of one episode to actions.
pub trait Controller {
    /// Forget per-episode memory.
    fn reset(&mut self);
    fn act(&mut self, obs: &Observation) -> Result<Vec<f64>>;
}

/// Full record of one episode: `T + 1` states and observations, `T` of the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub target: [f64; 2],
    pub states: Vec<PlantState>,
    pub observations: Vec<Observation>,
    /// Actions as applied, clamped to the action box.
    pub actions: Vec<Vec<f64>>,
    pub voltages: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Return divided by the number of steps.
    pub fn average_reward(&self) -> f64 {
        if self.rewards.is_empty() {
            0.0
        } else {
            self.episode_return() / self.rewards.len() as f64
        }
    }
}

/// Reset `env` (towards `target` if given, else a sampled one) and run a whole
/// episode under `ctrl`.
pub fn rollout(env: &mut Env, target: Option<[f64; 2]>, ctrl: &mut dyn Controller) -> Result<EpisodeLog> {
    let (state, obs) = match target {
        Some(t) => env.reset_with_target(t),
        None => env.reset(),
    };
    ctrl.reset();
    let n = env.episode_config().episode_length;
    let (lo, hi) = env.kind().action_bounds();
    let mut log = EpisodeLog {
        target: env.target(),
        states: Vec::with_capacity(n + 1),
        observations: Vec::with_capacity(n + 1),
        actions: Vec::with_capacity(n),
        voltages: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
    };
    log.states.push(state);
    log.observations.push(obs);
    let mut obs = obs;
    while !env.is_done() {
        let action = ctrl.act(&obs)?;
        let out = env.step(&action)?;
        log.actions.push(action.iter().map(|a| a.clamp(lo, hi)).collect());
        log.voltages.push(out.voltages);
        log.rewards.push(out.reward);
        log.states.push(out.state);
        log.observations.push(out.observation);
        obs = out.observation;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn eye_action_map_examples() {
        assert_eq!(map_action_eye([0.0, 0.0]), [0.0; 4]);
        assert_eq!(map_action_eye([3.0, -4.0]), [0.0, 3.0, 4.0, 0.0]);
        assert_eq!(map_action_eye([-10.0, 10.0]), [10.0, 0.0, 0.0, 10.0]);
        assert_eq!(map_action_eye([-25.0, 12.0]), [10.0, 0.0, 0.0, 10.0]);
    }

    #[test]
    fn reward_examples() {
        let eye = RewardSpec::eye();
        assert_eq!(reward(&eye, &[0.0; 4], &[0.0; 2], &[0.0; 2]), 4.0);
        assert_relative_eq!(reward(&eye, &[1.0, 0.0, -1.0, 0.0], &[0.0; 2], &[0.0; 2]), -0.1, epsilon = 1e-15);
        let wrist = RewardSpec::wrist();
        assert_relative_eq!(
            reward(&wrist, &[3.0, 0.0, -4.0, 0.0], &[5.0, -2.0], &[10.0, 0.0, 0.0]),
            -1.4,
            epsilon = 1e-12
        );
        // only one indicator inside the 0.5 deg wrist band
        assert_relative_eq!(reward(&wrist, &[0.4, 0.0, 0.0, 0.0], &[0.0; 2], &[0.0; 3]), 4.0 - 0.05 * 0.16, epsilon = 1e-12);
        assert_relative_eq!(reward(&wrist, &[0.6, 0.0, 0.0, 0.0], &[0.0; 2], &[0.0; 3]), 2.0 - 0.05 * 0.36, epsilon = 1e-12);
    }

    #[test]
    fn episode_durations() {
        assert_eq!(EpisodeConfig::wrist().duration(), 20.0);
        assert_eq!(EpisodeConfig::eye().duration(), 15.0);
        assert_eq!(EpisodeConfig::eye().substeps(), 50);
    }

    fn run_episode(env: &mut Env, action: &[f64]) -> usize {
        env.reset();
        let mut n = 0;
        loop {
            let out = env.step(action).unwrap();
            n += 1;
            if out.done {
                return n;
            }
        }
    }

    #[test]
    fn episodes_end_on_time_limit() {
        let mut env = Env::preset(PlantKind::Wrist, RandomizationSpec::default(), 1).unwrap();
        assert_eq!(run_episode(&mut env, &[1.0, 2.0, 0.0]), 40);
        assert_eq!(env.step(&[0.0; 3]), Err(Error::EpisodeDone));
        let mut env = Env::preset(PlantKind::Eye, RandomizationSpec::default(), 1).unwrap();
        assert_eq!(env.step(&[0.0; 2]), Err(Error::NotReset));
        assert_eq!(run_episode(&mut env, &[1.0, -2.0]), 30);
    }

    #[test]
    fn zero_action_at_zero_target_earns_max_reward() {
        let mut env = Env::preset(PlantKind::Eye, RandomizationSpec::disabled(), 5).unwrap();
        env.reset_with_target([0.0, 0.0]);
        for _ in 0..30 {
            assert_eq!(env.step(&[0.0, 0.0]).unwrap().reward, 4.0);
        }
    }

    #[test]
    fn zero_target_range_gives_zero_target() {
        let mut episode = EpisodeConfig::eye();
        episode.target_range = 0.0;
        let mut env =
            Env::new(PlantConfig::eye(), episode, RewardSpec::eye(), RandomizationSpec::default(), 3).unwrap();
        for _ in 0..10 {
            let (_, obs) = env.reset();
            assert_eq!(obs.target(), [0.0, 0.0]);
        }
    }

    #[test]
    fn reset_is_deterministic_and_resamples_muscles() {
        let mut a = Env::preset(PlantKind::Wrist, RandomizationSpec::default(), 77).unwrap();
        let mut b = Env::preset(PlantKind::Wrist, RandomizationSpec::default(), 77).unwrap();
        let (sa, oa) = a.reset();
        let (sb, ob) = b.reset();
        assert_eq!((sa, oa, a.active_plant()), (sb, ob, b.active_plant()));
        let first = a.active_plant().muscles.clone();
        a.step(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(a.active_plant().muscles, first);
        a.reset();
        assert_ne!(a.active_plant().muscles, first);
        assert_eq!(a.active_plant().muscles.len(), 3);
    }

    #[test]
    fn observation_layout() {
        let mut env = Env::preset(PlantKind::Eye, RandomizationSpec::default(), 8).unwrap();
        let (_, obs0) = env.reset();
        let target = env.target();
        assert_eq!(obs0.target(), target);
        for _ in 0..30 {
            let out = env.step(&[4.0, -3.0]).unwrap();
            assert_eq!(out.observation.target(), target);
            let y = out.state.output();
            for i in 0..4 {
                assert!((out.observation.0[i] - y[i]).abs() < 1.0);
            }
        }
    }

    #[test]
    fn reward_scored_on_noiseless_output() {
        let mut env = Env::preset(PlantKind::Wrist, RandomizationSpec::default(), 4).unwrap();
        env.reset();
        let out = env.step(&[5.0, 0.0, 2.0]).unwrap();
        let expected = reward(env.reward_spec(), &out.state.output(), &env.target(), &[5.0, 0.0, 2.0]);
        assert_eq!(out.reward, expected);
    }

    #[test]
    fn episode_determinism() {
        let run = || {
            let mut env = Env::preset(PlantKind::Eye, RandomizationSpec::default(), 99).unwrap();
            env.reset();
            (0..30)
                .map(|i| {
                    let a = [(i as f64 * 0.7).sin() * 10.0, (i as f64 * 0.3).cos() * 10.0];
                    let out = env.step(&a).unwrap();
                    (out.reward.to_bits(), out.observation.0.map(f64::to_bits), out.done)
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn target_marginals_are_uniform() {
        let mut env = Env::preset(PlantKind::Wrist, RandomizationSpec::disabled(), 12).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..10_000 {
            let (_, obs) = env.reset();
            xs.push(obs.target()[0]);
            ys.push(obs.target()[1]);
        }
        for mut v in [xs, ys] {
            v.sort_by(f64::total_cmp);
            let n = v.len() as f64;
            let ks = v
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let cdf = (x + 10.0) / 20.0;
                    (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks < 0.02, "KS = {ks}");
        }
    }

    proptest! {
        #[test]
        fn action_map_round_trip(a1 in -10.0f64..=10.0, a2 in -10.0f64..=10.0) {
            let v = map_action_eye([a1, a2]);
            prop_assert_eq!(v[0] * v[1], 0.0);
            prop_assert_eq!(v[2] * v[3], 0.0);
            prop_assert_eq!(-v[0] + v[1], a1);
            prop_assert_eq!(-v[2] + v[3], a2);
            prop_assert!(v.iter().all(|x| (0.0..=10.0).contains(x)));
        }

        #[test]
        fn reward_bounded_above(y in proptest::array::uniform4(-20.0f64..20.0),
                                t in proptest::array::uniform2(-10.0f64..10.0),
                                a in proptest::array::uniform3(0.0f64..10.0)) {
            let spec = RewardSpec::wrist();
            prop_assert!(reward(&spec, &y, &t, &a) <= spec.max_reward());
        }
    }
}
