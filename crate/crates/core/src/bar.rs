//! Bootstrapping and augmentation for replay: a PID teacher that seeds the
//! buffer, and target-vector relabelling that multiplies every stored episode.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::{reward, rollout, Controller, Env, Observation, RewardSpec};
use crate::plant::{PlantConfig, PlantKind, MAX_VOLTS};
use crate::randomize::SeededRng;
use crate::sac::{ReplayBuffer, Trajectory};
use crate::{Error, Result};

/// Per-axis PID gains on angle error in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: [f64; 2],
    pub ki: [f64; 2],
    pub kd: [f64; 2],
    /// Bound on `|I|` per axis, deg*s.
    pub integral_limit: f64,
}

impl PidGains {
    pub fn uniform(kp: f64, ki: f64, kd: f64, integral_limit: f64) -> Self {
        Self { kp: [kp; 2], ki: [ki; 2], kd: [kd; 2], integral_limit }
    }

    pub fn eye() -> Self {
        Self::uniform(2.1, 0.2, 0.5, 20.0)
    }

    pub fn wrist() -> Self {
        Self::uniform(3.3, 0.5, 0.3, 20.0)
    }

    pub fn preset(kind: PlantKind) -> Self {
        match kind {
            PlantKind::Eye => Self::eye(),
            PlantKind::Wrist => Self::wrist(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.kp.iter().chain(&self.ki).chain(&self.kd);
        if all.clone().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("pid gain"));
        }
        if all.clone().any(|g| *g < 0.0) {
            return Err(Error::InvalidParameter("pid gains must be nonnegative"));
        }
        if !(self.integral_limit >= 0.0) {
            return Err(Error::InvalidParameter("integral limit must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    pub integral: [f64; 2],
    pub prev_error: [f64; 2],
}

/// Raw per-axis command. The integral is updated before it is used and the
/// derivative starts from a zero previous error.
pub fn pid_command(gains: &PidGains, state: &mut PidState, error: [f64; 2], dt: f64) -> Result<[f64; 2]> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter("pid dt must be positive"));
    }
    let mut u = [0.0; 2];
    for i in 0..2 {
        let lim = gains.integral_limit;
        state.integral[i] = (state.integral[i] + error[i] * dt).clamp(-lim, lim);
        let de = (error[i] - state.prev_error[i]) / dt;
        u[i] = gains.kp[i] * error[i] + gains.ki[i] * state.integral[i] + gains.kd[i] * de;
        state.prev_error[i] = error[i];
    }
    Ok(u)
}

/// PID command mapped into the action box of `plant`.
pub fn pid_act(gains: &PidGains, state: &mut PidState, error: [f64; 2], dt: f64, plant: &PlantConfig) -> Result<Vec<f64>> {
    let u = pid_command(gains, state, error, dt)?;
    Ok(match plant.kind {
        PlantKind::Eye => u.iter().map(|v| v.clamp(-MAX_VOLTS, MAX_VOLTS)).collect(),
        PlantKind::Wrist => plant.distribute(u).into_iter().map(|v| v.clamp(0.0, MAX_VOLTS)).collect(),
    })
}

/// PID acting on observed angles. Uses the nominal routing for the wrist map.
#[derive(Debug, Clone)]
pub struct PidController {
    pub gains: PidGains,
    pub state: PidState,
    plant: PlantConfig,
    dt: f64,
}

impl PidController {
    pub fn new(gains: PidGains, plant: PlantConfig, dt: f64) -> Result<Self> {
        gains.validate()?;
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("pid dt must be positive"));
        }
        Ok(Self { gains, state: PidState::default(), plant, dt })
    }

    pub fn for_env(gains: PidGains, env: &Env) -> Result<Self> {
        Self::new(gains, env.nominal_plant().clone(), env.episode_config().action_period)
    }
}

impl Controller for PidController {
    fn reset(&mut self) {
        self.state = PidState::default();
    }

    fn act(&mut self, obs: &Observation) -> Result<Vec<f64>> {
        let m = obs.motion();
        let t = obs.target();
        pid_act(&self.gains, &mut self.state, [t[0] - m[0], t[1] - m[2]], self.dt, &self.plant)
    }
}

/// Target relabelling: `n` copies with `y*' = clamp(y* + s * delta * Z)`,
/// one sign `s` and one `Z ~ U[0,1]^2` per copy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub n: usize,
    /// deg
    pub delta: f64,
    /// Relabelled targets are clamped to `[-range, range]`.
    pub target_range: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self { n: 10, delta: 2.0, target_range: 10.0 }
    }
}

impl AugmentationSpec {
    pub fn disabled() -> Self {
        Self { n: 0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0) || !(self.target_range >= 0.0) {
            return Err(Error::InvalidParameter("augmentation delta and range must be nonnegative"));
        }
        Ok(())
    }
}

/// The relabelled target for one draw of sign and `Z`.
pub fn perturb_target(target: [f64; 2], sign: f64, z: [f64; 2], aug: &AugmentationSpec) -> [f64; 2] {
    let r = aug.target_range;
    [(target[0] + sign * aug.delta * z[0]).clamp(-r, r), (target[1] + sign * aug.delta * z[1]).clamp(-r, r)]
}

/// Copy of `traj` aimed at `target`, with rewards rescored from the stored
/// noiseless outputs and actions.
pub fn relabel(traj: &Trajectory, target: [f64; 2], spec: &RewardSpec) -> Trajectory {
    let mut out = traj.clone();
    for o in &mut out.observations {
        *o = o.with_target(target);
    }
    for t in 0..traj.len() {
        out.rewards[t] = reward(spec, &traj.outputs[t + 1], &target, traj.action(t));
    }
    out
}

pub fn augment_trajectory(
    traj: &Trajectory,
    aug: &AugmentationSpec,
    spec: &RewardSpec,
    rng: &mut SeededRng,
) -> Result<Vec<Trajectory>> {
    if !traj.is_well_formed() {
        return Err(Error::TrajectoryLength { expected: traj.len(), found: traj.observations.len() });
    }
    aug.validate()?;
    let base = traj.target();
    Ok((0..aug.n)
        .map(|_| {
            let sign = if rng.uniform(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
            let z = [rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)];
            relabel(traj, perturb_target(base, sign, z, aug), spec)
        })
        .collect())
}

/// Store `traj` followed by its augmented copies.
pub fn store_augmented(
    buffer: &mut ReplayBuffer,
    traj: Trajectory,
    aug: &AugmentationSpec,
    spec: &RewardSpec,
    rng: &mut SeededRng,
) -> Result<()> {
    let copies = augment_trajectory(&traj, aug, spec, rng)?;
    buffer.push(traj)?;
    for c in copies {
        buffer.push(c)?;
    }
    Ok(())
}

/// One PID-driven episode with fresh dynamics, stored with its copies.
/// Returns the per-step average reward of the original episode.
pub fn bootstrap_episode(
    env: &mut Env,
    pid: &mut PidController,
    buffer: &mut ReplayBuffer,
    aug: &AugmentationSpec,
    rng: &mut SeededRng,
) -> Result<f64> {
    let log = rollout(env, None, pid)?;
    let traj = Trajectory::from_log(&log, env.kind().action_dim());
    store_augmented(buffer, traj, aug, env.reward_spec(), rng)?;
    Ok(log.average_reward())
}

/// `m` bootstrap episodes. No learning happens here.
pub fn bootstrap_phase(
    env: &mut Env,
    gains: PidGains,
    m: usize,
    buffer: &mut ReplayBuffer,
    aug: &AugmentationSpec,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let mut pid = PidController::for_env(gains, env)?;
    (0..m).map(|_| bootstrap_episode(env, &mut pid, buffer, aug, rng)).collect()
}
