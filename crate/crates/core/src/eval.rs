//! Steady-state evaluation on the nominal plant.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::{rollout, Controller, Env, EpisodeConfig, EpisodeLog, RewardSpec};
use crate::plant::{PlantConfig, PlantKind};
use crate::randomize::RandomizationSpec;
use crate::{Error, Result};

/// Square target grid and the timing of each trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldTestSpec {
    /// Grid spans `[-extent, extent]` on both axes, deg.
    pub extent: f64,
    pub spacing: f64,
    /// Seconds per target.
    pub duration: f64,
    /// Trailing window averaged into `e_ss`, s.
    pub settle: f64,
}

impl FieldTestSpec {
    pub fn eye() -> Self {
        Self { extent: 10.0, spacing: 2.5, duration: 15.0, settle: 5.0 }
    }

    pub fn wrist() -> Self {
        Self { extent: 10.0, spacing: 2.5, duration: 25.0, settle: 5.0 }
    }

    pub fn preset(kind: PlantKind) -> Self {
        match kind {
            PlantKind::Eye => Self::eye(),
            PlantKind::Wrist => Self::wrist(),
        }
    }

    fn per_axis(&self) -> Result<usize> {
        let cells = 2.0 * self.extent / self.spacing;
        if !(self.spacing > 0.0) || !(self.extent >= 0.0) || (cells - libm::round(cells)).abs() > 1e-9 {
            return Err(Error::InvalidParameter("grid spacing must divide the extent"));
        }
        Ok(libm::round(cells) as usize + 1)
    }

    pub fn validate(&self) -> Result<()> {
        self.per_axis()?;
        if !(self.settle > 0.0) || !(self.duration >= self.settle) {
            return Err(Error::InvalidParameter("settle window must fit in the trial"));
        }
        Ok(())
    }

    /// Row-major targets, first axis slowest.
    pub fn targets(&self) -> Result<Vec<[f64; 2]>> {
        let n = self.per_axis()?;
        let at = |i: usize| -self.extent + i as f64 * self.spacing;
        Ok((0..n).flat_map(|i| (0..n).map(move |j| [at(i), at(j)])).collect())
    }
}

/// Noiseless, unrandomized environment whose episodes last `duration` seconds.
pub fn nominal_env(plant: &PlantConfig, duration: f64) -> Result<Env> {
    let kind = plant.kind;
    let mut episode = EpisodeConfig::preset(kind);
    episode.episode_length = libm::round(duration / episode.action_period) as usize;
    Env::new(plant.clone(), episode, RewardSpec::preset(kind), RandomizationSpec::disabled(), 0)
}

/// Mean Euclidean angle error over the states that fall inside the last
/// `settle` seconds. States are sampled once per control period.
pub fn steady_state_error(log: &EpisodeLog, period: f64, settle: f64) -> f64 {
    let window = (libm::round(settle / period) as usize).clamp(1, log.states.len());
    let tail = &log.states[log.states.len() - window..];
    tail.iter()
        .map(|s| libm::hypot(s.angles[0] - log.target[0], s.angles[1] - log.target[1]))
        .sum::<f64>()
        / window as f64
}

/// First time both axes have covered `fraction` of the way to the target.
/// `None` if that never happens. Axes with a zero target count as covered.
pub fn rise_time(log: &EpisodeLog, period: f64, fraction: f64) -> Option<f64> {
    let start = log.states[0].angles;
    log.states.iter().position(|s| {
        (0..2).all(|i| {
            let span = log.target[i] - start[i];
            span == 0.0 || (s.angles[i] - start[i]) / span >= fraction
        })
    })
    .map(|k| k as f64 * period)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldCell {
    pub target: [f64; 2],
    pub e_ss: f64,
}

/// Location and spread of a sample. `sd` is the sample standard deviation;
/// quartiles use linear interpolation between order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("summary of an empty sample"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        let quantile = |p: f64| {
            let pos = p * (n - 1) as f64;
            let lo = libm::floor(pos) as usize;
            let hi = (lo + 1).min(n - 1);
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        Ok(Self {
            count: n,
            mean,
            sd: libm::sqrt(var),
            median: quantile(0.5),
            q1: quantile(0.25),
            q3: quantile(0.75),
            min: v[0],
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldReport {
    pub cells: Vec<FieldCell>,
    pub summary: Summary,
}

/// Run one trial per grid target through `trial` and score each.
pub fn field_test_with(
    spec: &FieldTestSpec,
    period: f64,
    mut trial: impl FnMut([f64; 2]) -> Result<EpisodeLog>,
) -> Result<FieldReport> {
    spec.validate()?;
    let mut cells = Vec::new();
    for target in spec.targets()? {
        let log = trial(target)?;
        cells.push(FieldCell { target, e_ss: steady_state_error(&log, period, spec.settle) });
    }
    let errs: Vec<f64> = cells.iter().map(|c| c.e_ss).collect();
    let summary = Summary::of(&errs)?;
    Ok(FieldReport { cells, summary })
}

/// Field test of `ctrl` on the nominal plant from rest.
pub fn field_test(plant: &PlantConfig, spec: &FieldTestSpec, ctrl: &mut dyn Controller) -> Result<FieldReport> {
    let mut env = nominal_env(plant, spec.duration)?;
    let period = env.episode_config().action_period;
    field_test_with(spec, period, |target| rollout(&mut env, Some(target), ctrl))
}

/// Outcome of the closed-loop PID check on the nominal wrist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub target: [f64; 2],
    pub e_ss: f64,
    /// Time to 90 % of the step on both axes, s.
    pub rise_time: Option<f64>,
}

impl Calibration {
    pub fn passes(&self, gate: &CalibrationGate) -> bool {
        self.e_ss < gate.max_e_ss && self.rise_time.is_some_and(|t| (gate.rise.0..=gate.rise.1).contains(&t))
    }
}

/// Acceptance window for a PID step response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationGate {
    /// deg
    pub max_e_ss: f64,
    /// Inclusive rise-time window, s.
    pub rise: (f64, f64),
}

impl CalibrationGate {
    /// Eye: rise within 30 % of 5 s. Wrist: rise in 5..15 s.
    pub fn preset(kind: PlantKind) -> Self {
        match kind {
            PlantKind::Eye => Self { max_e_ss: 1.5, rise: (3.5, 6.5) },
            PlantKind::Wrist => Self { max_e_ss: 1.5, rise: (5.0, 15.0) },
        }
    }
}

/// Single closed-loop trial scored for steady-state error and rise time.
pub fn calibrate(
    plant: &PlantConfig,
    spec: &FieldTestSpec,
    ctrl: &mut dyn Controller,
    target: [f64; 2],
) -> Result<(Calibration, EpisodeLog)> {
    let mut env = nominal_env(plant, spec.duration)?;
    let period = env.episode_config().action_period;
    let log = rollout(&mut env, Some(target), ctrl)?;
    let cal = Calibration {
        target,
        e_ss: steady_state_error(&log, period, spec.settle),
        rise_time: rise_time(&log, period, 0.9),
    };
    Ok((cal, log))
}
