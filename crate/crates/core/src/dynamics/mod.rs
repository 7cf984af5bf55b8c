//! Two-axis synchronous generator on an infinite bus.
//!
//! The state is ordered `(delta, omega, e_d_prime, e_q_prime)` and the
//! algebraic interface is the stator current pair `(i_d, i_q)` obtained from
//! the network equations. Everything here is pure: the same inputs always
//! produce the same outputs, so trajectories can be generated in parallel.

mod equilibrium;
mod integrate;
mod model;
mod params;

pub use equilibrium::{back_solve_operating_point, equilibrium_residual, find_equilibrium};
pub use integrate::{
    integrate_resolved, integrate_with_input, rk4_step, simulate_truth, Coupling, InputSignal,
};
pub use model::{electrical_torque, network_residual, solve_network, two_axis_rhs};
pub use params::{grid_at, FaultEvent, GeneratorParams, GridParams, OperatingPoint, EVENT_TIME_TOL};

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

/// Number of generator states.
pub const N_STATES: usize = 4;
/// Number of interface quantities (`i_d`, `i_q`).
pub const N_INPUTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub delta: f64,
    pub omega: f64,
    pub e_d_prime: f64,
    pub e_q_prime: f64,
}

/// Time derivative of a [`State`]; same layout and units per second.
pub type StateDerivative = State;

impl State {
    pub const fn new(delta: f64, omega: f64, e_d_prime: f64, e_q_prime: f64) -> Self {
        Self {
            delta,
            omega,
            e_d_prime,
            e_q_prime,
        }
    }

    pub fn from_array(a: [f64; N_STATES]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; N_STATES] {
        [self.delta, self.omega, self.e_d_prime, self.e_q_prime]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::new(s[0], s[1], s[2], s[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn norm_inf(&self) -> f64 {
        self.to_array().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm2(&self) -> f64 {
        self.to_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl Add for State {
    type Output = State;
    fn add(self, o: State) -> State {
        State::new(
            self.delta + o.delta,
            self.omega + o.omega,
            self.e_d_prime + o.e_d_prime,
            self.e_q_prime + o.e_q_prime,
        )
    }
}

impl Sub for State {
    type Output = State;
    fn sub(self, o: State) -> State {
        State::new(
            self.delta - o.delta,
            self.omega - o.omega,
            self.e_d_prime - o.e_d_prime,
            self.e_q_prime - o.e_q_prime,
        )
    }
}

impl Mul<f64> for State {
    type Output = State;
    fn mul(self, k: f64) -> State {
        State::new(
            self.delta * k,
            self.omega * k,
            self.e_d_prime * k,
            self.e_q_prime * k,
        )
    }
}

/// Stator currents in machine (d, q) coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InterfaceInput {
    pub i_d: f64,
    pub i_q: f64,
}

impl InterfaceInput {
    pub const fn new(i_d: f64, i_q: f64) -> Self {
        Self { i_d, i_q }
    }

    pub fn to_array(self) -> [f64; N_INPUTS] {
        [self.i_d, self.i_q]
    }

    pub fn is_finite(&self) -> bool {
        self.i_d.is_finite() && self.i_q.is_finite()
    }

    /// Linear blend `self + (other - self) * frac`.
    pub fn lerp(self, other: InterfaceInput, frac: f64) -> InterfaceInput {
        InterfaceInput::new(
            self.i_d + (other.i_d - self.i_d) * frac,
            self.i_q + (other.i_q - self.i_q) * frac,
        )
    }
}
