//! Linearized thermo-mechanical model of a single coiled-polymer string.
//!
//! Force is affine in stretch, stretch rate and temperature rise; temperature
//! follows a first-order Joule-heating / Newton-cooling balance with power
//! `V^2 / R`. Units are cm, N, degC, s, V and ohm throughout. Positive force is
//! tension (the string pulls its anchor toward the fixed end).

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default ambient temperature, degC.
pub const AMBIENT_C: f64 = 25.0;

/// Physical constants of one muscle string.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuscleParams {
    /// Stiffness, N/cm.
    pub k: f64,
    /// Damping, N*s/cm.
    pub b: f64,
    /// Temperature coefficient, N/degC.
    pub c: f64,
    /// Thermal mass, W*s/degC.
    pub c_th: f64,
    /// Thermal conductivity to ambient, W/degC.
    pub lambda: f64,
    /// Electrical resistance, ohm.
    pub r: f64,
    /// Resting length, cm.
    pub x0: f64,
    /// Ambient temperature, degC.
    pub t_amb: f64,
}

impl MuscleParams {
    /// Nominal super-coiled polymer string (robotic eye).
    pub fn scp(x0: f64) -> Self {
        Self { k: 0.25, b: 0.01, c: 0.0055, c_th: 0.28, lambda: 0.094, r: 20.0, x0, t_amb: AMBIENT_C }
    }

    /// Nominal twisted-coiled actuator (robotic wrist).
    pub fn tca(x0: f64) -> Self {
        Self { k: 2.1, b: 0.63, c: 0.0707, c_th: 3.06, lambda: 0.1189, r: 10.0, x0, t_amb: AMBIENT_C }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            (self.k, "k"),
            (self.b, "b"),
            (self.c, "c"),
            (self.c_th, "c_th"),
            (self.lambda, "lambda"),
            (self.r, "r"),
            (self.x0, "x0"),
        ];
        for (value, name) in fields {
            if !value.is_finite() {
                return Err(Error::NonFinite(name));
            }
            if value <= 0.0 {
                return Err(Error::InvalidParameter(name));
            }
        }
        if !self.t_amb.is_finite() {
            return Err(Error::NonFinite("t_amb"));
        }
        Ok(())
    }

    /// Thermal time constant `C_th / lambda`, s.
    pub fn time_constant(&self) -> f64 {
        self.c_th / self.lambda
    }

    /// Steady-state temperature rise under a constant voltage, degC.
    pub fn steady_rise(&self, volts: f64) -> f64 {
        volts * volts / (self.r * self.lambda)
    }
}

/// Current temperature of one string.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuscleThermalState {
    pub t: f64,
}

impl MuscleThermalState {
    pub fn ambient(p: &MuscleParams) -> Self {
        Self { t: p.t_amb }
    }
}

/// Tension `k(x - x0) + b*xdot + c(T - T_amb)`, N.
#[inline]
pub fn muscle_force(p: &MuscleParams, x: f64, xdot: f64, t: f64) -> f64 {
    p.k * (x - p.x0) + p.b * xdot + p.c * (t - p.t_amb)
}

/// `dT/dt = (V^2/R - lambda (T - T_amb)) / C_th`, degC/s.
#[inline]
pub fn thermal_derivative(p: &MuscleParams, t: f64, volts: f64) -> f64 {
    (volts * volts / p.r - p.lambda * (t - p.t_amb)) / p.c_th
}

/// One classical RK4 step of the thermal ODE under constant voltage.
pub fn thermal_step(
    p: &MuscleParams,
    s: MuscleThermalState,
    volts: f64,
    dt: f64,
) -> Result<MuscleThermalState> {
    if !s.t.is_finite() {
        return Err(Error::NonFinite("temperature"));
    }
    if !volts.is_finite() {
        return Err(Error::NonFinite("voltage"));
    }
    if !dt.is_finite() {
        return Err(Error::NonFinite("dt"));
    }
    if dt <= 0.0 {
        return Err(Error::InvalidParameter("dt must be positive"));
    }
    if volts < 0.0 {
        return Err(Error::InvalidParameter("voltage must be nonnegative"));
    }
    let f = |t: f64| thermal_derivative(p, t, volts);
    let k1 = f(s.t);
    let k2 = f(s.t + 0.5 * dt * k1);
    let k3 = f(s.t + 0.5 * dt * k2);
    let k4 = f(s.t + dt * k3);
    Ok(MuscleThermalState { t: s.t + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4) })
}

/// Exact solution of the thermal ODE for constant voltage from `t0` after
/// `elapsed` seconds.
pub fn thermal_closed_form(p: &MuscleParams, t0: f64, volts: f64, elapsed: f64) -> f64 {
    let t_ss = p.t_amb + p.steady_rise(volts);
    t_ss + (t0 - t_ss) * libm::exp(-elapsed / p.time_constant())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scp() -> MuscleParams {
        MuscleParams::scp(14.5)
    }

    fn tca() -> MuscleParams {
        MuscleParams::tca(6.0)
    }

    #[test]
    fn force_vanishes_at_rest() {
        let p = scp();
        assert_eq!(muscle_force(&p, p.x0, 0.0, p.t_amb), 0.0);
    }

    #[test]
    fn force_hand_evaluated() {
        let p = scp();
        assert_relative_eq!(muscle_force(&p, p.x0 + 1.0, 0.0, p.t_amb + 10.0), 0.305, epsilon = 1e-12);
        let p = tca();
        // 2.1*0.5 + 0.63*(-0.2) + 0.0707*20
        assert_relative_eq!(muscle_force(&p, p.x0 + 0.5, -0.2, p.t_amb + 20.0), 2.338, epsilon = 1e-12);
    }

    #[test]
    fn thermal_derivative_cases() {
        let p = scp();
        assert_eq!(thermal_derivative(&p, p.t_amb, 0.0), 0.0);
        assert_relative_eq!(thermal_derivative(&p, p.t_amb, 10.0), 5.0 / 0.28, epsilon = 1e-12);
        for v in [0.5, 3.0, 10.0] {
            for p in [scp(), tca()] {
                let t = p.t_amb + v * v / (p.r * p.lambda);
                assert!(thermal_derivative(&p, t, v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_voltage_at_ambient_is_fixed() {
        let p = scp();
        let s = MuscleThermalState::ambient(&p);
        for dt in [1e-3, 0.01, 0.5, 3.0] {
            assert_eq!(thermal_step(&p, s, 0.0, dt).unwrap(), s);
        }
    }

    #[test]
    fn steady_rises() {
        assert_relative_eq!(scp().steady_rise(10.0), 53.19, epsilon = 0.005);
        assert_relative_eq!(tca().steady_rise(10.0), 84.10, epsilon = 0.005);
        assert_relative_eq!(scp().time_constant(), 2.979, epsilon = 5e-4);
    }

    #[test]
    fn five_time_constants_reach_steady_state() {
        let p = scp();
        let dt = 0.01;
        let steps = libm::ceil(5.0 * p.time_constant() / dt) as usize;
        let mut s = MuscleThermalState::ambient(&p);
        for _ in 0..steps {
            s = thermal_step(&p, s, 10.0, dt).unwrap();
        }
        let rise = s.t - p.t_amb;
        let ss = p.steady_rise(10.0);
        // e^-5 = 0.67 % short of the asymptote after exactly five constants
        assert!(rise < ss && rise > ss * (1.0 - libm::exp(-5.0)) - 1e-9);
        for _ in 0..steps {
            s = thermal_step(&p, s, 10.0, dt).unwrap();
        }
        assert!(((s.t - p.t_amb) - ss).abs() / ss < 1e-3);
    }

    #[test]
    fn rk4_matches_closed_form() {
        for p in [scp(), tca()] {
            let dt = 0.01;
            let mut s = MuscleThermalState::ambient(&p);
            for i in 1..=2000 {
                s = thermal_step(&p, s, 7.5, dt).unwrap();
                let exact = thermal_closed_form(&p, p.t_amb, 7.5, i as f64 * dt);
                assert!((s.t - exact).abs() / exact < 1e-8);
            }
        }
    }

    #[test]
    fn halving_step_changes_endpoint_negligibly() {
        let p = scp();
        let run = |dt: f64| {
            let n = libm::round(20.0 / dt) as usize;
            let mut s = MuscleThermalState::ambient(&p);
            for _ in 0..n {
                s = thermal_step(&p, s, 10.0, dt).unwrap();
            }
            s.t
        };
        assert!((run(0.01) - run(0.005)).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = scp();
        let s = MuscleThermalState::ambient(&p);
        assert!(thermal_step(&p, s, f64::NAN, 0.01).is_err());
        assert!(thermal_step(&p, s, 1.0, f64::INFINITY).is_err());
        assert!(thermal_step(&p, MuscleThermalState { t: f64::NAN }, 1.0, 0.01).is_err());
        assert!(thermal_step(&p, s, 1.0, 0.0).is_err());
        let mut bad = p;
        bad.lambda = 0.0;
        assert_eq!(bad.validate(), Err(Error::InvalidParameter("lambda")));
    }

    proptest! {
        #[test]
        fn force_is_affine(dx in -3.0f64..3.0, v in -5.0f64..5.0, dtemp in 0.0f64..80.0) {
            let p = tca();
            let full = muscle_force(&p, p.x0 + dx, v, p.t_amb + dtemp);
            let parts = muscle_force(&p, p.x0 + dx, 0.0, p.t_amb) + p.b * v + p.c * dtemp;
            prop_assert!((full - parts).abs() <= 1e-12 * (1.0 + full.abs()));
        }

        #[test]
        fn heating_is_monotone_and_bounded(v in 0.1f64..10.0) {
            let p = scp();
            let bound = p.t_amb + p.steady_rise(v);
            let mut s = MuscleThermalState::ambient(&p);
            for _ in 0..1500 {
                let next = thermal_step(&p, s, v, 0.01).unwrap();
                prop_assert!(next.t > s.t);
                prop_assert!(next.t < bound);
                s = next;
            }
        }
    }
}
