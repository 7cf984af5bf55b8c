use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Machine constants of the two-axis model.
///
/// `e_fld` and `t_m` are held constant over a simulation; they are normally
/// back-solved from an [`OperatingPoint`] so that the chosen point is an exact
/// equilibrium. `beta` scales the damping term: `1.0` is the true machine,
/// values below one give the reduced-fidelity model used for residual learning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorParams {
    pub t_d0_prime: f64,
    pub t_q0_prime: f64,
    pub x_d: f64,
    pub x_d_prime: f64,
    pub x_q: f64,
    pub x_q_prime: f64,
    /// Inertia constant (s).
    pub h: f64,
    /// Damping (p.u.).
    pub d: f64,
    pub omega_s: f64,
    pub e_fld: f64,
    pub t_m: f64,
    #[serde(default = "one")]
    pub beta: f64,
    /// Multiplier on `d(delta)/dt`; 1 keeps speed and angle in per-unit time.
    #[serde(default = "one")]
    pub omega_base: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for GeneratorParams {
    fn default() -> Self {
        // Three-machine textbook data (machine 1); exciter and governor
        // outputs are placeholders until back-solved.
        Self {
            t_d0_prime: 6.0,
            t_q0_prime: 0.535,
            x_d: 0.8958,
            x_d_prime: 0.1198,
            x_q: 0.8645,
            x_q_prime: 0.1969,
            h: 3.2,
            d: 2.0,
            omega_s: 1.0,
            e_fld: 1.0,
            t_m: 0.0,
            beta: 1.0,
            omega_base: 1.0,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        let all = [
            self.t_d0_prime,
            self.t_q0_prime,
            self.x_d,
            self.x_d_prime,
            self.x_q,
            self.x_q_prime,
            self.h,
            self.d,
            self.omega_s,
            self.e_fld,
            self.t_m,
            self.beta,
            self.omega_base,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return fail("generator parameters must be finite");
        }
        if self.t_d0_prime <= 0.0 || self.t_q0_prime <= 0.0 {
            return fail("open-circuit time constants must be positive");
        }
        if self.h <= 0.0 {
            return fail("inertia constant must be positive");
        }
        if !(self.x_d >= self.x_d_prime && self.x_d_prime > 0.0) {
            return fail("require x_d >= x_d_prime > 0");
        }
        if !(self.x_q >= self.x_q_prime && self.x_q_prime > 0.0) {
            return fail("require x_q >= x_q_prime > 0");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return fail("beta must lie in [0, 1]");
        }
        Ok(())
    }

    /// Same machine with the damping fidelity set to `beta`.
    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }
}

/// Infinite-bus network seen from the generator terminals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridParams {
    pub r_s: f64,
    pub r_e: f64,
    pub x_ep: f64,
    pub v_inf: f64,
    pub theta_inf: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            r_s: 0.0,
            r_e: 0.02,
            x_ep: 0.3,
            v_inf: 1.0,
            theta_inf: 0.0,
        }
    }
}

impl GridParams {
    pub fn validate(&self) -> Result<()> {
        if ![self.r_s, self.r_e, self.x_ep, self.v_inf, self.theta_inf]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidParameter("grid parameters must be finite".into()));
        }
        if self.v_inf < 0.0 {
            return Err(Error::InvalidParameter("v_inf must be non-negative".into()));
        }
        Ok(())
    }

    /// Same grid with the external reactance multiplied by `factor`.
    pub fn with_reactance_scaled(mut self, factor: f64) -> Self {
        self.x_ep *= factor;
        self
    }
}

/// Impedance change applied on `[t_start, t_start + duration)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub t_start: f64,
    pub duration: f64,
    pub faulted_grid: GridParams,
}

/// Tolerance used when comparing event times with partition points.
pub const EVENT_TIME_TOL: f64 = 1e-9;

impl FaultEvent {
    pub fn new(t_start: f64, duration: f64, faulted_grid: GridParams) -> Result<Self> {
        if !(t_start >= 0.0) || !(duration > 0.0) {
            return Err(Error::InvalidParameter(
                "fault requires t_start >= 0 and duration > 0".into(),
            ));
        }
        Ok(Self {
            t_start,
            duration,
            faulted_grid,
        })
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.duration
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.t_start - EVENT_TIME_TOL && t < self.t_end() - EVENT_TIME_TOL
    }
}

/// Grid in force at time `t`: the last listed active fault wins.
pub fn grid_at(base: &GridParams, faults: &[FaultEvent], t: f64) -> GridParams {
    faults
        .iter()
        .rev()
        .find(|f| f.is_active(t))
        .map(|f| f.faulted_grid)
        .unwrap_or(*base)
}

/// Operating point `(delta*, e_q_prime*)` from which the exciter and governor
/// constants are derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatingPoint {
    pub delta: f64,
    pub e_q_prime: f64,
}

impl Default for OperatingPoint {
    fn default() -> Self {
        Self {
            delta: 0.8,
            e_q_prime: 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        GeneratorParams::default().validate().unwrap();
        GridParams::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_reactances() {
        let gp = GeneratorParams {
            x_d_prime: 1.5,
            ..Default::default()
        };
        assert!(gp.validate().is_err());
        let gp = GeneratorParams {
            beta: 1.5,
            ..Default::default()
        };
        assert!(gp.validate().is_err());
    }

    #[test]
    fn fault_window_is_half_open() {
        let f = FaultEvent::new(1.0, 0.1, GridParams::default().with_reactance_scaled(5.0)).unwrap();
        assert!(!f.is_active(0.95));
        assert!(f.is_active(1.0));
        assert!(f.is_active(1.05));
        assert!(!f.is_active(1.1));
        assert!(FaultEvent::new(1.0, 0.0, GridParams::default()).is_err());
    }
}
