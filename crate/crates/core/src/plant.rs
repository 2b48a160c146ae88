//! Rigid-body plants driven by muscle strings.
//!
//! Both robots have two controlled rotational degrees of freedom. Muscle
//! routing is linearized around the rest pose: muscle `i` has a direction row
//! `g_i` so that its length is `x0 - r * (g_i . alpha)` and it contributes
//! torque `r * g_i * F_i`. The eye uses two antagonistic pairs (`g = +-e_axis`),
//! the wrist three strings at 120 degree spacing (`g = (sin z, cos z)`).
//!
//! Per degree of freedom the rigid body obeys
//! `J * alpha'' = sum(tau_muscle) - d * alpha' - kappa * alpha`, with `J` in
//! N*cm*s^2/rad so torques in N*cm give rad/s^2 directly.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::muscle::{muscle_force, thermal_derivative, MuscleParams};
use crate::{Error, Result};

pub const MAX_MUSCLES: usize = 4;
pub const MAX_VOLTS: f64 = 10.0;

const DEG: f64 = core::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    /// Pitch/yaw robotic eye, four SCP strings.
    Eye,
    /// Pitch/roll parallel wrist, three TCA strings.
    Wrist,
}

impl PlantKind {
    pub fn muscle_count(self) -> usize {
        match self {
            PlantKind::Eye => 4,
            PlantKind::Wrist => 3,
        }
    }

    /// Dimension of the agent's action vector.
    pub fn action_dim(self) -> usize {
        match self {
            PlantKind::Eye => 2,
            PlantKind::Wrist => 3,
        }
    }

    /// Per-component action bounds.
    pub fn action_bounds(self) -> (f64, f64) {
        match self {
            PlantKind::Eye => (-MAX_VOLTS, MAX_VOLTS),
            PlantKind::Wrist => (0.0, MAX_VOLTS),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PlantKind::Eye => "eye",
            PlantKind::Wrist => "wrist",
        }
    }
}

/// Geometry, rigid-body constants and the active muscle set of one robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub kind: PlantKind,
    /// Rotational inertia per DOF, N*cm*s^2/rad.
    pub inertia: [f64; 2],
    /// Viscous damping per DOF, N*cm*s/rad.
    pub damping: [f64; 2],
    /// Restoring stiffness per DOF, N*cm/rad.
    pub stiffness: [f64; 2],
    /// Moment arm shared by all strings, cm.
    pub moment_arm: f64,
    /// Direction row of each muscle in (DOF 1, DOF 2) coordinates.
    pub routing: Vec<[f64; 2]>,
    /// Active muscle parameters, one per string.
    pub muscles: Vec<MuscleParams>,
    /// Symmetric hard limit on each angle, deg.
    pub angle_limit: f64,
}

impl PlantConfig {
    pub fn eye() -> Self {
        let scp = MuscleParams::scp(14.5);
        Self {
            kind: PlantKind::Eye,
            inertia: [0.6; 2],
            damping: [3.5; 2],
            stiffness: [0.05; 2],
            moment_arm: 1.2,
            // (m1, m2) pitch, (m3, m4) yaw; the second of each pair pulls positive
            routing: alloc::vec![[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]],
            muscles: alloc::vec![scp; 4],
            angle_limit: 25.0,
        }
    }

    pub fn wrist() -> Self {
        let tca = MuscleParams::tca(6.0);
        let routing = [90.0f64, 210.0, 330.0]
            .iter()
            .map(|z| [libm::sin(z * DEG), libm::cos(z * DEG)])
            .collect();
        Self {
            kind: PlantKind::Wrist,
            inertia: [2.4; 2],
            damping: [1.3; 2],
            stiffness: [1.0; 2],
            moment_arm: 2.5,
            routing,
            muscles: alloc::vec![tca; 3],
            angle_limit: 25.0,
        }
    }

    pub fn preset(kind: PlantKind) -> Self {
        match kind {
            PlantKind::Eye => Self::eye(),
            PlantKind::Wrist => Self::wrist(),
        }
    }

    pub fn muscle_count(&self) -> usize {
        self.muscles.len()
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..2 {
            if !(self.inertia[i] > 0.0) {
                return Err(Error::InvalidParameter("inertia must be positive"));
            }
            if !(self.damping[i] >= 0.0) {
                return Err(Error::InvalidParameter("damping must be nonnegative"));
            }
            if !(self.stiffness[i] >= 0.0) {
                return Err(Error::InvalidParameter("stiffness must be nonnegative"));
            }
        }
        if !(self.moment_arm > 0.0) {
            return Err(Error::InvalidParameter("moment arm must be positive"));
        }
        if !(self.angle_limit > 0.0) {
            return Err(Error::InvalidParameter("angle limit must be positive"));
        }
        if self.muscles.len() != self.kind.muscle_count() {
            return Err(Error::ShapeMismatch {
                expected: self.kind.muscle_count(),
                found: self.muscles.len(),
            });
        }
        if self.routing.len() != self.muscles.len() {
            return Err(Error::ShapeMismatch { expected: self.muscles.len(), found: self.routing.len() });
        }
        for m in &self.muscles {
            m.validate()?;
        }
        Ok(())
    }

    /// Map per-DOF commands onto nonnegative per-muscle weights through the
    /// pseudo-inverse of the routing matrix, dropping pulls that would push.
    pub fn distribute(&self, command: [f64; 2]) -> Vec<f64> {
        // G^T (G G^T)^-1 with G the 2 x n matrix of direction rows
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for g in &self.routing {
            a += g[0] * g[0];
            b += g[0] * g[1];
            c += g[1] * g[1];
        }
        let det = a * c - b * b;
        let w = [(c * command[0] - b * command[1]) / det, (a * command[1] - b * command[0]) / det];
        self.routing.iter().map(|g| (g[0] * w[0] + g[1] * w[1]).max(0.0)).collect()
    }
}

/// Orientation, rates and string temperatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// deg
    pub angles: [f64; 2],
    /// deg/s
    pub rates: [f64; 2],
    /// degC, one per muscle
    pub temps: Vec<f64>,
}

impl PlantState {
    /// Zero pose, zero rate, every string at its ambient temperature.
    pub fn rest(cfg: &PlantConfig) -> Self {
        Self { angles: [0.0; 2], rates: [0.0; 2], temps: cfg.muscles.iter().map(|m| m.t_amb).collect() }
    }

    /// System output `[a1, a1', a2, a2']`.
    pub fn output(&self) -> [f64; 4] {
        [self.angles[0], self.rates[0], self.angles[1], self.rates[1]]
    }

    /// Temperature rise of each muscle above ambient.
    pub fn temperature_rise(&self, cfg: &PlantConfig) -> Vec<f64> {
        self.temps.iter().zip(&cfg.muscles).map(|(t, m)| t - m.t_amb).collect()
    }
}

/// Length and length rate of one string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuscleKinematics {
    /// cm
    pub length: f64,
    /// cm/s
    pub rate: f64,
}

/// String lengths and rates at a pose given in degrees.
pub fn muscle_kinematics(cfg: &PlantConfig, angles: [f64; 2], rates: [f64; 2]) -> Vec<MuscleKinematics> {
    let a = [angles[0] * DEG, angles[1] * DEG];
    let w = [rates[0] * DEG, rates[1] * DEG];
    cfg.routing
        .iter()
        .zip(&cfg.muscles)
        .map(|(g, m)| MuscleKinematics {
            length: m.x0 - cfg.moment_arm * (g[0] * a[0] + g[1] * a[1]),
            rate: -cfg.moment_arm * (g[0] * w[0] + g[1] * w[1]),
        })
        .collect()
}

/// Per-DOF torque, N*cm, produced by the given string tensions.
pub fn muscle_torque(cfg: &PlantConfig, forces: &[f64]) -> [f64; 2] {
    let mut tau = [0.0; 2];
    for (g, f) in cfg.routing.iter().zip(forces) {
        tau[0] += cfg.moment_arm * g[0] * f;
        tau[1] += cfg.moment_arm * g[1] * f;
    }
    tau
}

const STATE_LEN: usize = 4 + MAX_MUSCLES;

/// Packed integration state: angles (rad), rates (rad/s), temperatures.
#[derive(Clone, Copy)]
struct Packed {
    y: [f64; STATE_LEN],
    n: usize,
}

impl Packed {
    fn from_state(s: &PlantState) -> Self {
        let mut y = [0.0; STATE_LEN];
        y[0] = s.angles[0] * DEG;
        y[1] = s.angles[1] * DEG;
        y[2] = s.rates[0] * DEG;
        y[3] = s.rates[1] * DEG;
        y[4..4 + s.temps.len()].copy_from_slice(&s.temps);
        Self { y, n: s.temps.len() }
    }

    fn to_state(self) -> PlantState {
        PlantState {
            angles: [self.y[0] / DEG, self.y[1] / DEG],
            rates: [self.y[2] / DEG, self.y[3] / DEG],
            temps: self.y[4..4 + self.n].to_vec(),
        }
    }

    fn axpy(&self, h: f64, k: &[f64; STATE_LEN]) -> Self {
        let mut out = *self;
        for (o, d) in out.y.iter_mut().zip(k) {
            *o += h * d;
        }
        out
    }
}

fn derivative(cfg: &PlantConfig, s: &Packed, volts: &[f64], external: [f64; 2]) -> [f64; STATE_LEN] {
    let r = cfg.moment_arm;
    let mut d = [0.0; STATE_LEN];
    let mut tau = external;
    for (i, (g, m)) in cfg.routing.iter().zip(&cfg.muscles).enumerate() {
        let x = m.x0 - r * (g[0] * s.y[0] + g[1] * s.y[1]);
        let xdot = -r * (g[0] * s.y[2] + g[1] * s.y[3]);
        let temp = s.y[4 + i];
        let f = muscle_force(m, x, xdot, temp);
        tau[0] += r * g[0] * f;
        tau[1] += r * g[1] * f;
        d[4 + i] = thermal_derivative(m, temp, volts[i]);
    }
    for a in 0..2 {
        d[a] = s.y[2 + a];
        d[2 + a] = (tau[a] - cfg.damping[a] * s.y[2 + a] - cfg.stiffness[a] * s.y[a]) / cfg.inertia[a];
    }
    d
}

fn rk4(cfg: &PlantConfig, s: &Packed, volts: &[f64], external: [f64; 2], dt: f64) -> Packed {
    let k1 = derivative(cfg, s, volts, external);
    let k2 = derivative(cfg, &s.axpy(0.5 * dt, &k1), volts, external);
    let k3 = derivative(cfg, &s.axpy(0.5 * dt, &k2), volts, external);
    let k4 = derivative(cfg, &s.axpy(dt, &k3), volts, external);
    let mut out = *s;
    for i in 0..STATE_LEN {
        out.y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let limit = cfg.angle_limit * DEG;
    for a in 0..2 {
        if out.y[a] > limit {
            out.y[a] = limit;
            out.y[2 + a] = 0.0;
        } else if out.y[a] < -limit {
            out.y[a] = -limit;
            out.y[2 + a] = 0.0;
        }
    }
    out
}

fn check_inputs(cfg: &PlantConfig, s: &PlantState, volts: &[f64], dt: f64) -> Result<()> {
    if volts.len() != cfg.muscles.len() {
        return Err(Error::ShapeMismatch { expected: cfg.muscles.len(), found: volts.len() });
    }
    if s.temps.len() != cfg.muscles.len() {
        return Err(Error::ShapeMismatch { expected: cfg.muscles.len(), found: s.temps.len() });
    }
    for (index, &v) in volts.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite("voltage"));
        }
        if !(0.0..=MAX_VOLTS).contains(&v) {
            return Err(Error::VoltageOutOfRange { index, volts: v });
        }
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter("dt must be positive"));
    }
    Ok(())
}

/// One RK4 step of the coupled thermal / rigid-body system under constant
/// voltages, followed by the inelastic angle clamp.
pub fn plant_step(cfg: &PlantConfig, s: &PlantState, volts: &[f64], dt: f64) -> Result<PlantState> {
    plant_step_with_torque(cfg, s, volts, [0.0; 2], dt)
}

/// [`plant_step`] with an additional constant external torque per DOF, N*cm.
pub fn plant_step_with_torque(
    cfg: &PlantConfig,
    s: &PlantState,
    volts: &[f64],
    external: [f64; 2],
    dt: f64,
) -> Result<PlantState> {
    check_inputs(cfg, s, volts, dt)?;
    Ok(rk4(cfg, &Packed::from_state(s), volts, external, dt).to_state())
}

/// Advance by `substeps` RK4 steps of `dt` under constant voltages.
pub fn plant_advance(
    cfg: &PlantConfig,
    s: &PlantState,
    volts: &[f64],
    dt: f64,
    substeps: usize,
) -> Result<PlantState> {
    check_inputs(cfg, s, volts, dt)?;
    let mut p = Packed::from_state(s);
    for _ in 0..substeps {
        p = rk4(cfg, &p, volts, [0.0; 2], dt);
    }
    let out = p.to_state();
    if out.angles.iter().chain(&out.rates).chain(&out.temps).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("plant state"));
    }
    Ok(out)
}

/// Rigid-body kinetic and potential energy plus spring energy stored in the
/// strings, N*cm.
pub fn mechanical_energy(cfg: &PlantConfig, s: &PlantState) -> f64 {
    let mut e = 0.0;
    for a in 0..2 {
        let w = s.rates[a] * DEG;
        let q = s.angles[a] * DEG;
        e += 0.5 * cfg.inertia[a] * w * w + 0.5 * cfg.stiffness[a] * q * q;
    }
    for (kin, m) in muscle_kinematics(cfg, s.angles, s.rates).iter().zip(&cfg.muscles) {
        let dx = kin.length - m.x0;
        e += 0.5 * m.k * dx * dx;
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn presets_are_valid() {
        PlantConfig::eye().validate().unwrap();
        PlantConfig::wrist().validate().unwrap();
        let mut bad = PlantConfig::eye();
        bad.muscles.pop();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rest_pose_kinematics() {
        for cfg in [PlantConfig::eye(), PlantConfig::wrist()] {
            for k in muscle_kinematics(&cfg, [0.0; 2], [0.0; 2]) {
                assert_eq!(k.length, cfg.muscles[0].x0);
                assert_eq!(k.rate, 0.0);
            }
        }
    }

    #[test]
    fn eye_yaw_is_antagonistic() {
        let cfg = PlantConfig::eye();
        let k = muscle_kinematics(&cfg, [0.0, 5.0], [0.0, 0.0]);
        let x0 = cfg.muscles[0].x0;
        assert!(k[3].length < x0);
        assert_eq!(x0 - k[3].length, k[2].length - x0);
        assert_eq!(k[0].length, x0);
    }

    #[test]
    fn wrist_equal_forces_cancel() {
        let cfg = PlantConfig::wrist();
        let tau = muscle_torque(&cfg, &[1.0, 1.0, 1.0]);
        assert!(tau[0].abs() < 1e-12 && tau[1].abs() < 1e-12);
    }

    #[test]
    fn zero_voltage_rest_is_equilibrium() {
        for cfg in [PlantConfig::eye(), PlantConfig::wrist()] {
            let s = PlantState::rest(&cfg);
            let v = alloc::vec![0.0; cfg.muscle_count()];
            let next = plant_advance(&cfg, &s, &v, 0.01, 500).unwrap();
            assert_eq!(next, s);
        }
    }

    fn bare(inertia: f64, damping: f64) -> PlantConfig {
        PlantConfig {
            kind: PlantKind::Eye,
            inertia: [inertia; 2],
            damping: [damping; 2],
            stiffness: [0.0; 2],
            moment_arm: 1.0,
            routing: Vec::new(),
            muscles: Vec::new(),
            angle_limit: 1e6,
        }
    }

    #[test]
    fn ballistic_motion_matches_closed_form() {
        let (j, tau) = (0.6, 0.03);
        let cfg = bare(j, 0.0);
        let mut s = PlantState { angles: [0.0; 2], rates: [0.0; 2], temps: Vec::new() };
        for _ in 0..200 {
            s = plant_step_with_torque(&cfg, &s, &[], [tau, -tau], 0.01).unwrap();
        }
        let exact = tau * 4.0 / (2.0 * j) / DEG;
        assert_relative_eq!(s.angles[0], exact, max_relative = 1e-6);
        assert_relative_eq!(s.angles[1], -exact, max_relative = 1e-6);
    }

    #[test]
    fn damped_rate_decays_exponentially() {
        let (j, d, w0) = (2.4, 1.3, 20.0);
        let cfg = bare(j, d);
        let mut s = PlantState { angles: [0.0; 2], rates: [w0, -w0], temps: Vec::new() };
        for _ in 0..200 {
            s = plant_step(&cfg, &s, &[], 0.01).unwrap();
        }
        let exact = w0 * libm::exp(-d * 2.0 / j);
        assert_relative_eq!(s.rates[0], exact, max_relative = 1e-6);
        assert_relative_eq!(s.rates[1], -exact, max_relative = 1e-6);
    }

    #[test]
    fn rejects_out_of_range_voltage() {
        let cfg = PlantConfig::wrist();
        let s = PlantState::rest(&cfg);
        assert!(matches!(
            plant_step(&cfg, &s, &[0.0, 10.5, 0.0], 0.01),
            Err(Error::VoltageOutOfRange { index: 1, .. })
        ));
        assert!(plant_step(&cfg, &s, &[0.0, -0.1, 0.0], 0.01).is_err());
        assert!(plant_step(&cfg, &s, &[0.0, 0.0], 0.01).is_err());
        assert!(plant_step(&cfg, &s, &[0.0; 3], 0.0).is_err());
    }

    #[test]
    fn single_muscle_torque_sign() {
        let cfg = PlantConfig::eye();
        for (i, g) in cfg.routing.clone().iter().enumerate() {
            let mut v = [0.0; 4];
            v[i] = 10.0;
            let s = plant_advance(&cfg, &PlantState::rest(&cfg), &v, 0.01, 50).unwrap();
            let axis = if g[0] != 0.0 { 0 } else { 1 };
            let sign = g[axis];
            assert!(s.angles[axis] * sign > 0.0);
            assert_eq!(s.angles[1 - axis], 0.0);
        }
    }

    #[test]
    fn angle_clamp_zeroes_rate() {
        let mut cfg = PlantConfig::eye();
        cfg.angle_limit = 1.0;
        let s = plant_advance(&cfg, &PlantState::rest(&cfg), &[0.0, 10.0, 0.0, 0.0], 0.01, 2000).unwrap();
        assert_eq!(s.angles[0], 1.0);
        assert_eq!(s.rates[0], 0.0);
    }

    #[test]
    fn passive_energy_never_increases() {
        for cfg in [PlantConfig::eye(), PlantConfig::wrist()] {
            let mut s = PlantState::rest(&cfg);
            s.angles = [8.0, -6.0];
            s.rates = [30.0, 10.0];
            let v = alloc::vec![0.0; cfg.muscle_count()];
            let mut e = mechanical_energy(&cfg, &s);
            for _ in 0..2000 {
                s = plant_step(&cfg, &s, &v, 0.01).unwrap();
                let next = mechanical_energy(&cfg, &s);
                assert!(next <= e * (1.0 + 1e-12) + 1e-20);
                e = next;
            }
        }
    }

    #[test]
    fn deterministic_stepping() {
        let cfg = PlantConfig::wrist();
        let s = PlantState::rest(&cfg);
        let a = plant_advance(&cfg, &s, &[3.0, 7.0, 1.0], 0.01, 50).unwrap();
        let b = plant_advance(&cfg, &s, &[3.0, 7.0, 1.0], 0.01, 50).unwrap();
        for (x, y) in a.temps.iter().zip(&b.temps) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(a, b);
    }

    #[test]
    fn distribute_inverts_routing() {
        let cfg = PlantConfig::wrist();
        let w = cfg.distribute([1.0, 0.0]);
        assert_relative_eq!(w[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(w[1], 0.0);
        assert_eq!(w[2], 0.0);
        // every mixed command lands on some nonnegative combination
        let w = cfg.distribute([0.3, 0.7]);
        let tau = muscle_torque(&cfg, &w);
        assert!(tau[1] > 0.0);
    }

    /// Potential of the string network: sum of 1/2 k (x - x0)^2 + c dT x.
    fn potential(cfg: &PlantConfig, angles: [f64; 2], rise: &[f64]) -> f64 {
        muscle_kinematics(cfg, angles, [0.0; 2])
            .iter()
            .zip(&cfg.muscles)
            .zip(rise)
            .map(|((k, m), dt)| 0.5 * m.k * (k.length - m.x0) * (k.length - m.x0) + m.c * dt * k.length)
            .sum()
    }

    proptest! {
        #[test]
        fn torque_is_energy_gradient(a1 in -1.0f64..1.0, a2 in -1.0f64..1.0, wrist in any::<bool>(),
                                     r0 in 0.0f64..40.0, r1 in 0.0f64..40.0, r2 in 0.0f64..40.0) {
            let cfg = if wrist { PlantConfig::wrist() } else { PlantConfig::eye() };
            let rise = &[r0, r1, r2, r0 + r1][..cfg.muscle_count()];
            let forces: Vec<f64> = muscle_kinematics(&cfg, [a1, a2], [0.0; 2])
                .iter()
                .zip(&cfg.muscles)
                .zip(rise)
                .map(|((k, m), dt)| muscle_force(m, k.length, 0.0, m.t_amb + dt))
                .collect();
            let tau = muscle_torque(&cfg, &forces);
            let h = 1e-4; // deg
            for axis in 0..2 {
                let mut up = [a1, a2];
                let mut dn = [a1, a2];
                up[axis] += h;
                dn[axis] -= h;
                let fd = -(potential(&cfg, up, rise) - potential(&cfg, dn, rise)) / (2.0 * h * DEG);
                let scale = tau[axis].abs().max(1e-3);
                prop_assert!((fd - tau[axis]).abs() / scale < 1e-3, "axis {} fd {} tau {}", axis, fd, tau[axis]);
            }
        }
    }
}
