use super::params::{grid_at, EVENT_TIME_TOL};
use super::{
    solve_network, two_axis_rhs, FaultEvent, GeneratorParams, GridParams, InterfaceInput, State,
};
use crate::error::{Error, Result};
use crate::trajectory::{Provenance, TimePartition, Trajectory};

/// How the interface current is obtained inside an RK4 step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coupling {
    /// Re-solve the network equations at every stage state (truth generation).
    ResolveEachStage,
    /// Hold the supplied current over the whole step (single-sensor semantics).
    FrozenInput(InterfaceInput),
}

/// Interface current over one step as a function of the offset `s` in `[0, h]`.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSignal {
    Constant(InterfaceInput),
    /// Linear interpolation between sensor readings at increasing offsets;
    /// held constant outside the sensor span.
    Interpolated {
        offsets: Vec<f64>,
        values: Vec<InterfaceInput>,
    },
}

impl InputSignal {
    pub fn from_sensors(offsets: &[f64], values: &[InterfaceInput]) -> Self {
        if values.len() == 1 {
            InputSignal::Constant(values[0])
        } else {
            InputSignal::Interpolated {
                offsets: offsets.to_vec(),
                values: values.to_vec(),
            }
        }
    }

    pub fn at(&self, s: f64) -> InterfaceInput {
        match self {
            InputSignal::Constant(y) => *y,
            InputSignal::Interpolated { offsets, values } => {
                if s <= offsets[0] {
                    return values[0];
                }
                for k in 1..offsets.len() {
                    if s <= offsets[k] {
                        let span = offsets[k] - offsets[k - 1];
                        let frac = if span > 0.0 {
                            (s - offsets[k - 1]) / span
                        } else {
                            1.0
                        };
                        return values[k - 1].lerp(values[k], frac);
                    }
                }
                *values.last().expect("non-empty sensor set")
            }
        }
    }
}

fn rk4_generic<F>(x: &State, t: f64, h: f64, gp: &GeneratorParams, mut input: F) -> Result<State>
where
    F: FnMut(&State, f64) -> Result<InterfaceInput>,
{
    let half = 0.5 * h;
    let k1 = two_axis_rhs(x, &input(x, t)?, gp)?;
    let x2 = *x + k1 * half;
    let k2 = two_axis_rhs(&x2, &input(&x2, t + half)?, gp)?;
    let x3 = *x + k2 * half;
    let k3 = two_axis_rhs(&x3, &input(&x3, t + half)?, gp)?;
    let x4 = *x + k3 * h;
    let k4 = two_axis_rhs(&x4, &input(&x4, t + h)?, gp)?;
    let next = *x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    if !next.is_finite() {
        return Err(Error::NonFiniteState);
    }
    Ok(next)
}

/// One classical RK4 step of length `h`.
pub fn rk4_step(
    x: &State,
    grid: &GridParams,
    gp: &GeneratorParams,
    h: f64,
    coupling: Coupling,
) -> Result<State> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
    }
    match coupling {
        Coupling::ResolveEachStage => {
            rk4_generic(x, 0.0, h, gp, |s, _| solve_network(s, gp, grid))
        }
        Coupling::FrozenInput(y) => rk4_generic(x, 0.0, h, gp, |_, _| Ok(y)),
    }
}

/// Integrates over `[0, h]` with a prescribed input signal using `substeps`
/// equal RK4 steps.
pub fn integrate_with_input(
    x: &State,
    gp: &GeneratorParams,
    h: f64,
    substeps: usize,
    signal: &InputSignal,
) -> Result<State> {
    if !(h > 0.0) || substeps == 0 {
        return Err(Error::InvalidParameter(
            "integration needs h > 0 and at least one substep".into(),
        ));
    }
    let dt = h / substeps as f64;
    let mut state = *x;
    for i in 0..substeps {
        let t0 = i as f64 * dt;
        state = rk4_generic(&state, t0, dt, gp, |_, s| Ok(signal.at(s)))?;
    }
    Ok(state)
}

/// Integrates over `[0, h]` with `substeps` equal RK4 steps, re-solving the
/// network at every stage.
pub fn integrate_resolved(
    x: &State,
    gp: &GeneratorParams,
    grid: &GridParams,
    h: f64,
    substeps: usize,
) -> Result<State> {
    if substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be at least 1".into()));
    }
    let dt = h / substeps as f64;
    let mut state = *x;
    for _ in 0..substeps {
        state = rk4_step(&state, grid, gp, dt, Coupling::ResolveEachStage)?;
    }
    Ok(state)
}

/// Ground-truth simulation over `partition`.
///
/// Each macro step is split at fault boundaries that fall strictly inside it;
/// every piece is integrated with `substeps` RK4 steps per macro-step length
/// (at least one), re-solving the network at each stage under the grid that is
/// in force on that piece. The recorded input at `t_n` is the network solution
/// under the grid in force at `t_n`.
pub fn simulate_truth(
    x0: &State,
    partition: &TimePartition,
    gp: &GeneratorParams,
    grid: &GridParams,
    faults: &[FaultEvent],
    substeps: usize,
) -> Result<Trajectory> {
    if substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be at least 1".into()));
    }
    let points = partition.points();
    let mut states = Vec::with_capacity(points.len());
    let mut inputs = Vec::with_capacity(points.len());
    let mut x = *x0;
    states.push(x);
    inputs.push(solve_network(&x, gp, &grid_at(grid, faults, points[0]))?);

    for w in points.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let h = t1 - t0;
        let mut cuts = vec![t0];
        for f in faults {
            for te in [f.t_start, f.t_end()] {
                if te > t0 + EVENT_TIME_TOL && te < t1 - EVENT_TIME_TOL {
                    cuts.push(te);
                }
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        cuts.push(t1);
        for piece in cuts.windows(2) {
            let len = piece[1] - piece[0];
            let n = ((substeps as f64 * len / h).ceil() as usize).max(1);
            let g = grid_at(grid, faults, piece[0]);
            x = integrate_resolved(&x, gp, &g, len, n)?;
        }
        states.push(x);
        inputs.push(solve_network(&x, gp, &grid_at(grid, faults, t1))?);
    }

    Ok(Trajectory::new(partition.clone(), states, inputs, Provenance::Truth))
}
