use nalgebra::{Matrix4, Vector4};

use super::{solve_network, two_axis_rhs, GeneratorParams, GridParams, OperatingPoint, State};
use crate::error::{Error, Result};

const MAX_ITERS: usize = 100;
const MAX_HALVINGS: usize = 8;
const TOL: f64 = 1e-10;

/// `f(x, solve_network(x))` evaluated with the true model (`beta = 1`).
pub fn equilibrium_residual(x: &State, gp: &GeneratorParams, grid: &GridParams) -> Result<State> {
    let gp = gp.with_beta(1.0);
    let y = solve_network(x, &gp, grid)?;
    two_axis_rhs(x, &y, &gp)
}

fn residual_vec(x: &Vector4<f64>, gp: &GeneratorParams, grid: &GridParams) -> Result<Vector4<f64>> {
    let r = equilibrium_residual(&State::new(x[0], x[1], x[2], x[3]), gp, grid)?;
    Ok(Vector4::from(r.to_array()))
}

fn jacobian(x: &Vector4<f64>, gp: &GeneratorParams, grid: &GridParams) -> Result<Matrix4<f64>> {
    let mut jac = Matrix4::zeros();
    for j in 0..4 {
        let step = 1e-7 * (1.0 + x[j].abs());
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += step;
        xm[j] -= step;
        let col = (residual_vec(&xp, gp, grid)? - residual_vec(&xm, gp, grid)?) / (2.0 * step);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Damped Newton iteration for the operating equilibrium.
///
/// The step is halved (up to eight times) whenever the full step does not
/// reduce the residual infinity norm.
pub fn find_equilibrium(gp: &GeneratorParams, grid: &GridParams, guess: &State) -> Result<State> {
    if !guess.is_finite() {
        return Err(Error::NonFiniteState);
    }
    let mut x = Vector4::from(guess.to_array());
    let mut r = residual_vec(&x, gp, grid)?;
    for _ in 0..MAX_ITERS {
        if r.amax() <= TOL {
            return Ok(State::new(x[0], x[1], x[2], x[3]));
        }
        let jac = jacobian(&x, gp, grid)?;
        let Some(dx) = jac.lu().solve(&(-r)) else {
            break;
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = x + dx * alpha;
            if let Ok(rt) = residual_vec(&trial, gp, grid) {
                if rt.amax() < r.amax() {
                    accepted = Some((trial, rt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        // No decrease even after halving: take the smallest step anyway.
        let (nx, nr) = match accepted {
            Some(v) => v,
            None => {
                let trial = x + dx * alpha;
                let rt = residual_vec(&trial, gp, grid)?;
                (trial, rt)
            }
        };
        x = nx;
        r = nr;
    }
    if r.amax() <= TOL {
        return Ok(State::new(x[0], x[1], x[2], x[3]));
    }
    Err(Error::EquilibriumNotFound {
        iterations: MAX_ITERS,
        residual: r.amax(),
    })
}

/// Derives `e_fld` and `t_m` so that the operating point
/// `(delta*, omega_s, E'd*, E'q*)` is an exact equilibrium.
///
/// `E'd*` follows from the q-axis flux balance `E'd = (X_q - X'_q) I_q`, which
/// is linear in `E'd` because the network solution is. Returns the completed
/// parameters and the equilibrium state, refined by [`find_equilibrium`].
pub fn back_solve_operating_point(
    gp: &GeneratorParams,
    grid: &GridParams,
    op: OperatingPoint,
) -> Result<(GeneratorParams, State)> {
    gp.validate()?;
    grid.validate()?;
    let k = gp.x_q - gp.x_q_prime;
    let base = solve_network(&State::new(op.delta, gp.omega_s, 0.0, op.e_q_prime), gp, grid)?;
    let unit = solve_network(&State::new(op.delta, gp.omega_s, 1.0, op.e_q_prime), gp, grid)?;
    let slope = unit.i_q - base.i_q;
    let denom = 1.0 - k * slope;
    if denom.abs() < 1e-12 {
        return Err(Error::InvalidParameter(
            "operating point has no consistent q-axis flux".into(),
        ));
    }
    let e_d = k * base.i_q / denom;
    let x = State::new(op.delta, gp.omega_s, e_d, op.e_q_prime);
    let y = solve_network(&x, gp, grid)?;
    let mut solved = *gp;
    solved.e_fld = op.e_q_prime + (gp.x_d - gp.x_d_prime) * y.i_d;
    solved.t_m = super::electrical_torque(&x, &y, gp);
    let x_star = find_equilibrium(&solved, grid, &x)?;
    Ok((solved, x_star))
}
