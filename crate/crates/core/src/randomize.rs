//! Muscle-dynamics randomization and observation noise.
//!
//! Each episode draws fresh multipliers for the randomized muscle set
//! `{k, b, c, C_th, lambda, R}`; observation noise is drawn per step and per
//! channel. All randomness flows through [`SeededRng`], a ChaCha8 generator
//! whose output depends only on `(seed, stream)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::muscle::MuscleParams;
use crate::{Error, Result};

/// Stream identifiers carved out of one master seed.
pub mod streams {
    pub const PARAMS: u64 = 1;
    pub const TARGET: u64 = 2;
    /// First of the four per-channel observation-noise streams.
    pub const OBS_NOISE: u64 = 3;
    pub const POLICY: u64 = 16;
    pub const REPLAY: u64 = 17;
    pub const AUGMENT: u64 = 18;
    pub const INIT: u64 = 19;
    pub const EXPLORE: u64 = 20;
    pub const UPDATE: u64 = 21;
}

/// Deterministic, serializable random stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            // keep the stream position independent of the interval width
            let _: f64 = self.inner.random();
            return lo;
        }
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Closed scaling interval `[lo, hi]` applied multiplicatively to a nominal value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn fixed() -> Self {
        Self { lo: 1.0, hi: 1.0 }
    }

    /// Widen or shrink around 1 by `m`, keeping the lower edge at or above 0.05.
    pub fn scaled(self, m: f64) -> Self {
        let lo = (1.0 - m * (1.0 - self.lo)).max(0.05);
        let hi = (1.0 + m * (self.hi - 1.0)).max(lo);
        Self { lo, hi }
    }
}

/// Per-parameter scaling intervals and observation-noise law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizationSpec {
    pub k: Interval,
    pub b: Interval,
    pub c: Interval,
    pub c_th: Interval,
    pub lambda: Interval,
    pub r: Interval,
    /// Angle noise standard deviation, deg.
    pub angle_noise_sd: f64,
    /// Angular-rate noise standard deviation, deg/s.
    pub velocity_noise_sd: f64,
    /// Joint variance multiplier applied to interval half-widths and noise SDs.
    pub variance_multiplier: f64,
    /// Draw a separate multiplier per muscle instead of one shared per robot.
    pub per_muscle: bool,
}

impl Default for RandomizationSpec {
    /// The ranges used for both SCP and TCA strings.
    fn default() -> Self {
        Self {
            k: Interval::new(0.8, 1.2),
            b: Interval::new(0.9, 1.1),
            c: Interval::new(0.85, 1.15),
            c_th: Interval::new(0.8, 1.2),
            lambda: Interval::new(0.85, 1.15),
            r: Interval::new(0.9, 1.1),
            angle_noise_sd: 0.1,
            velocity_noise_sd: 0.05,
            variance_multiplier: 1.0,
            per_muscle: true,
        }
    }
}

impl RandomizationSpec {
    /// No parameter spread and no observation noise.
    pub fn disabled() -> Self {
        Self {
            k: Interval::fixed(),
            b: Interval::fixed(),
            c: Interval::fixed(),
            c_th: Interval::fixed(),
            lambda: Interval::fixed(),
            r: Interval::fixed(),
            angle_noise_sd: 0.0,
            velocity_noise_sd: 0.0,
            variance_multiplier: 1.0,
            per_muscle: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for iv in self.raw_intervals() {
            if !(iv.lo.is_finite() && iv.hi.is_finite()) {
                return Err(Error::NonFinite("randomization interval"));
            }
            if iv.lo <= 0.0 || iv.lo > iv.hi {
                return Err(Error::InvalidParameter("randomization interval must satisfy 0 < lo <= hi"));
            }
        }
        if !(self.angle_noise_sd >= 0.0 && self.velocity_noise_sd >= 0.0) {
            return Err(Error::InvalidParameter("noise SD must be nonnegative"));
        }
        if !(self.variance_multiplier >= 0.0) || !self.variance_multiplier.is_finite() {
            return Err(Error::InvalidParameter("variance multiplier must be nonnegative"));
        }
        Ok(())
    }

    fn raw_intervals(&self) -> [Interval; 6] {
        [self.k, self.b, self.c, self.c_th, self.lambda, self.r]
    }

    /// Intervals after applying the variance multiplier, in `k, b, c, C_th, lambda, R` order.
    pub fn effective_intervals(&self) -> [Interval; 6] {
        self.raw_intervals().map(|iv| iv.scaled(self.variance_multiplier))
    }

    pub fn effective_angle_sd(&self) -> f64 {
        self.angle_noise_sd * self.variance_multiplier
    }

    pub fn effective_velocity_sd(&self) -> f64 {
        self.velocity_noise_sd * self.variance_multiplier
    }
}

fn draw_factors(spec: &RandomizationSpec, rng: &mut SeededRng) -> [f64; 6] {
    spec.effective_intervals().map(|iv| rng.uniform(iv.lo, iv.hi))
}

fn apply_factors(nominal: &MuscleParams, f: &[f64; 6]) -> MuscleParams {
    MuscleParams {
        k: nominal.k * f[0],
        b: nominal.b * f[1],
        c: nominal.c * f[2],
        c_th: nominal.c_th * f[3],
        lambda: nominal.lambda * f[4],
        r: nominal.r * f[5],
        x0: nominal.x0,
        t_amb: nominal.t_amb,
    }
}

/// Scale the six randomized parameters of `nominal` by independent uniform
/// draws from the spec's intervals. `x0` and `T_amb` are copied.
pub fn sample_muscle_params(
    nominal: &MuscleParams,
    spec: &RandomizationSpec,
    rng: &mut SeededRng,
) -> MuscleParams {
    apply_factors(nominal, &draw_factors(spec, rng))
}

/// Sample parameters for every muscle of a robot, either independently per
/// muscle or with one shared factor set.
pub fn sample_muscle_set(
    nominal: &[MuscleParams],
    spec: &RandomizationSpec,
    rng: &mut SeededRng,
) -> alloc::vec::Vec<MuscleParams> {
    if spec.per_muscle {
        nominal.iter().map(|p| sample_muscle_params(p, spec, rng)).collect()
    } else {
        let f = draw_factors(spec, rng);
        nominal.iter().map(|p| apply_factors(p, &f)).collect()
    }
}

/// Add zero-mean Gaussian noise to the four motion channels, one stream per
/// channel. Target slots are left untouched.
pub fn apply_observation_noise(
    obs: &Observation,
    spec: &RandomizationSpec,
    channels: &mut [SeededRng; 4],
) -> Observation {
    let sd = [
        spec.effective_angle_sd(),
        spec.effective_velocity_sd(),
        spec.effective_angle_sd(),
        spec.effective_velocity_sd(),
    ];
    let mut out = *obs;
    for (i, rng) in channels.iter_mut().enumerate() {
        let n = rng.standard_normal();
        if sd[i] > 0.0 {
            out.0[i] += sd[i] * n;
        }
    }
    out
}

/// Fresh per-channel noise streams for a master seed.
pub fn noise_channels(seed: u64) -> [SeededRng; 4] {
    core::array::from_fn(|i| SeededRng::new(seed, streams::OBS_NOISE + i as u64))
}
