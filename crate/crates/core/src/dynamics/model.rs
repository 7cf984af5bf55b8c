use super::{GeneratorParams, GridParams, InterfaceInput, State, StateDerivative};
use crate::error::{Error, Result};

/// Determinant magnitude below which the network matrix is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

/// `T_E = E'd I_d + E'q I_q + (X'q - X'd) I_d I_q`.
pub fn electrical_torque(x: &State, y: &InterfaceInput, gp: &GeneratorParams) -> f64 {
    x.e_d_prime * y.i_d + x.e_q_prime * y.i_q + (gp.x_q_prime - gp.x_d_prime) * y.i_d * y.i_q
}

/// Right-hand side of the two-axis model for a given interface current.
///
/// The damping term is scaled by `gp.beta`, so the same function serves as
/// both the true and the reduced-fidelity vector field.
pub fn two_axis_rhs(
    x: &State,
    y: &InterfaceInput,
    gp: &GeneratorParams,
) -> Result<StateDerivative> {
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::NonFiniteState);
    }
    let speed_dev = x.omega - gp.omega_s;
    let t_e = electrical_torque(x, y, gp);
    Ok(State {
        delta: gp.omega_base * speed_dev,
        omega: gp.omega_s / (2.0 * gp.h) * (gp.t_m - t_e - gp.beta * gp.d * speed_dev),
        e_d_prime: (-x.e_d_prime + (gp.x_q - gp.x_q_prime) * y.i_q) / gp.t_q0_prime,
        e_q_prime: (-x.e_q_prime - (gp.x_d - gp.x_d_prime) * y.i_d + gp.e_fld) / gp.t_d0_prime,
    })
}

/// Solves the infinite-bus stator/network equations for `(I_d, I_q)`:
///
/// ```text
/// (Rs+Re) I_d - (X'q+Xep) I_q = E'd - V sin(delta - theta)
/// (X'd+Xep) I_d + (Rs+Re) I_q = E'q - V cos(delta - theta)
/// ```
pub fn solve_network(x: &State, gp: &GeneratorParams, grid: &GridParams) -> Result<InterfaceInput> {
    if !x.is_finite() {
        return Err(Error::NonFiniteState);
    }
    let r = grid.r_s + grid.r_e;
    let xq = gp.x_q_prime + grid.x_ep;
    let xd = gp.x_d_prime + grid.x_ep;
    let det = r * r + xq * xd;
    if det.abs() < SINGULAR_TOL {
        return Err(Error::SingularNetwork { det });
    }
    let angle = x.delta - grid.theta_inf;
    let b1 = x.e_d_prime - grid.v_inf * angle.sin();
    let b2 = x.e_q_prime - grid.v_inf * angle.cos();
    let i_d = (r * b1 + xq * b2) / det;
    let i_q = (r * b2 - xd * b1) / det;
    Ok(InterfaceInput::new(i_d, i_q))
}

/// Residuals of both network equations; zero for a consistent pair.
pub fn network_residual(
    x: &State,
    y: &InterfaceInput,
    gp: &GeneratorParams,
    grid: &GridParams,
) -> [f64; 2] {
    let r = grid.r_s + grid.r_e;
    let angle = x.delta - grid.theta_inf;
    [
        r * y.i_d - (gp.x_q_prime + grid.x_ep) * y.i_q - x.e_d_prime + grid.v_inf * angle.sin(),
        r * y.i_q + (gp.x_d_prime + grid.x_ep) * y.i_d - x.e_q_prime + grid.v_inf * angle.cos(),
    ]
}
