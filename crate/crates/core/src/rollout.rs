//! Recursive prediction with a learned one-step operator.
//!
//! The data-driven scheme advances `x <- G(x, y)` (or `x + G` for the
//! incremental operator); the residual scheme advances
//! `x <- x_approx + G_eps(x, y)` where `x_approx` is one step of the
//! reduced-damping model. Inputs either come from the network equations at
//! the predicted state (closed loop) or from a recorded trajectory (shadow).

use rand::Rng;
use rayon::prelude::*;

use crate::data::TestCase;
use crate::dynamics::{
    grid_at, integrate_resolved, integrate_with_input, solve_network, FaultEvent, GeneratorParams,
    GridParams, InputSignal, InterfaceInput, State,
};
use crate::error::{Error, Result};
use crate::nn::{OutputMode, StepPredictor};
use crate::trajectory::{Provenance, TimePartition, Trajectory};

/// Any state component beyond this magnitude aborts a rollout.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

/// Where the interface current comes from during a rollout.
#[derive(Debug, Clone, Copy)]
pub enum InputProvider<'a> {
    /// Solve the network equations at the predicted state under the grid in
    /// force at `t_n`.
    ClosedLoop {
        gp: &'a GeneratorParams,
        grid: &'a GridParams,
        faults: &'a [FaultEvent],
    },
    /// Read (and linearly interpolate in time) a stored trajectory; the
    /// network equations are never solved.
    Recorded(&'a Trajectory),
}

impl InputProvider<'_> {
    fn recorded_at(tr: &Trajectory, t: f64) -> Result<InterfaceInput> {
        let ts = tr.times();
        let ys = tr.inputs();
        let tol = 1e-9;
        if t < ts[0] - tol || t > ts[ts.len() - 1] + tol {
            return Err(Error::PartitionMismatch(format!(
                "recorded inputs cover [{}, {}], requested t = {t}",
                ts[0],
                ts[ts.len() - 1]
            )));
        }
        let k = ts.partition_point(|&s| s < t - tol);
        if k < ts.len() && (ts[k] - t).abs() <= tol {
            return Ok(ys[k]);
        }
        let k = k.clamp(1, ts.len() - 1);
        let frac = (t - ts[k - 1]) / (ts[k] - ts[k - 1]);
        Ok(ys[k - 1].lerp(ys[k], frac))
    }

    /// Input recorded alongside the state at `t`.
    fn input_at(&self, x: &State, t: f64) -> Result<InterfaceInput> {
        match self {
            InputProvider::ClosedLoop { gp, grid, faults } => {
                solve_network(x, gp, &grid_at(grid, faults, t))
            }
            InputProvider::Recorded(tr) => Self::recorded_at(tr, t),
        }
    }

    /// Sensor readings for the step `[t, t + h]` with `m` sensors.
    fn sensors(&self, x: &State, t: f64, h: f64, m: usize) -> Result<(Vec<InterfaceInput>, Vec<f64>)> {
        match (self, m) {
            (_, 1) => Ok((vec![self.input_at(x, t)?], vec![0.0])),
            (InputProvider::Recorded(tr), _) => {
                let locs: Vec<f64> = (0..m).map(|k| h * k as f64 / (m - 1) as f64).collect();
                let ys = locs
                    .iter()
                    .map(|d| Self::recorded_at(tr, t + d))
                    .collect::<Result<_>>()?;
                Ok((ys, locs))
            }
            (InputProvider::ClosedLoop { .. }, _) => Err(Error::InvalidParameter(
                "closed-loop rollouts support a single sensor only".into(),
            )),
        }
    }
}

/// Which recursion to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    /// Full or incremental operator.
    DataDriven,
    /// Residual operator on top of `approx` integrated with `substeps` RK4 steps.
    Residual {
        approx: GeneratorParams,
        substeps: usize,
    },
}

impl Scheme {
    pub fn residual(gp: &GeneratorParams, approx_beta: f64) -> Self {
        Scheme::Residual {
            approx: gp.with_beta(approx_beta),
            substeps: 16,
        }
    }

    fn provenance(&self) -> Provenance {
        match self {
            Scheme::DataDriven => Provenance::RolloutDataDriven,
            Scheme::Residual { .. } => Provenance::RolloutResidual,
        }
    }
}

/// Result of a rollout that may have stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialRollout {
    /// States and inputs at `t_0 .. t_k` for the steps that completed.
    pub states: Vec<State>,
    pub inputs: Vec<InterfaceInput>,
    /// Step index at which the rollout diverged, if it did.
    pub diverged_at: Option<usize>,
}

impl PartialRollout {
    pub fn into_trajectory(self, partition: &TimePartition, provenance: Provenance) -> Result<Trajectory> {
        if let Some(step) = self.diverged_at {
            return Err(Error::RolloutDiverged { step });
        }
        Ok(Trajectory::new(partition.clone(), self.states, self.inputs, provenance))
    }
}

fn diverged(x: &State) -> bool {
    !x.is_finite() || x.norm_inf() > DIVERGENCE_LIMIT
}

/// Runs the recursion, stopping (without error) at the first divergent step.
/// Configuration errors and singular networks still return `Err`.
pub fn rollout_partial<M: StepPredictor + ?Sized>(
    model: &M,
    x0: &State,
    partition: &TimePartition,
    provider: &InputProvider<'_>,
    scheme: &Scheme,
) -> Result<PartialRollout> {
    let mode = model.output_mode();
    match (scheme, mode) {
        (Scheme::DataDriven, OutputMode::Residual) => {
            return Err(Error::InvalidParameter(
                "residual-mode model needs the residual scheme".into(),
            ))
        }
        (Scheme::Residual { .. }, OutputMode::Full | OutputMode::Incremental) => {
            return Err(Error::InvalidParameter(
                "the residual scheme needs a residual-mode model".into(),
            ))
        }
        _ => {}
    }
    let m = model.n_sensors();
    let pts = partition.points();
    let mut states = Vec::with_capacity(pts.len());
    let mut inputs = Vec::with_capacity(pts.len());
    let mut x = *x0;
    states.push(x);
    inputs.push(provider.input_at(&x, pts[0])?);
    for (n, w) in pts.windows(2).enumerate() {
        let (t, h) = (w[0], w[1] - w[0]);
        let (ys, locs) = provider.sensors(&x, t, h, m)?;
        let r = match model.predict(&x, &ys, &locs, h) {
            Ok(r) => r,
            Err(Error::NumericalBlowUp) => {
                return Ok(PartialRollout {
                    states,
                    inputs,
                    diverged_at: Some(n),
                })
            }
            Err(e) => return Err(e),
        };
        let next = match (scheme, mode) {
            (_, OutputMode::Full) => r,
            (_, OutputMode::Incremental) => x + r,
            (Scheme::Residual { approx, substeps }, OutputMode::Residual) => {
                let signal = InputSignal::from_sensors(&locs, &ys);
                match integrate_with_input(&x, approx, h, *substeps, &signal) {
                    Ok(xa) => xa + r,
                    Err(Error::NonFiniteState) => State::new(f64::NAN, 0.0, 0.0, 0.0),
                    Err(e) => return Err(e),
                }
            }
            (Scheme::DataDriven, OutputMode::Residual) => unreachable!(),
        };
        if diverged(&next) {
            return Ok(PartialRollout {
                states,
                inputs,
                diverged_at: Some(n),
            });
        }
        x = next;
        inputs.push(provider.input_at(&x, w[1])?);
        states.push(x);
    }
    Ok(PartialRollout {
        states,
        inputs,
        diverged_at: None,
    })
}

/// Data-driven recursion (full or incremental operator).
pub fn rollout_data_driven<M: StepPredictor + ?Sized>(
    model: &M,
    x0: &State,
    partition: &TimePartition,
    provider: &InputProvider<'_>,
) -> Result<Trajectory> {
    let scheme = Scheme::DataDriven;
    rollout_partial(model, x0, partition, provider, &scheme)?
        .into_trajectory(partition, scheme.provenance())
}

/// Residual recursion on top of the approximate model `approx`.
pub fn rollout_residual<M: StepPredictor + ?Sized>(
    model: &M,
    x0: &State,
    partition: &TimePartition,
    provider: &InputProvider<'_>,
    approx: &GeneratorParams,
) -> Result<Trajectory> {
    let scheme = Scheme::Residual {
        approx: *approx,
        substeps: 16,
    };
    rollout_partial(model, x0, partition, provider, &scheme)?
        .into_trajectory(partition, scheme.provenance())
}

/// Closed-loop rollouts of every case of a test suite, in parallel.
pub fn rollout_suite<M: StepPredictor + ?Sized>(
    model: &M,
    cases: &[TestCase],
    partition: &TimePartition,
    scheme: &Scheme,
    gp: &GeneratorParams,
    grid: &GridParams,
) -> Vec<Result<Trajectory>> {
    cases
        .par_iter()
        .map(|c| {
            let provider = InputProvider::ClosedLoop {
                gp,
                grid,
                faults: &c.faults,
            };
            rollout_partial(model, &c.x0, partition, &provider, scheme)?
                .into_trajectory(partition, scheme.provenance())
        })
        .collect()
}

/// `n_points` distinct uniform draws on `(0, t_end]`, sorted and prefixed
/// with 0. The whole set is redrawn while any step exceeds `max_step`.
pub fn irregular_partition<R: Rng + ?Sized>(
    t_end: f64,
    n_points: usize,
    max_step: f64,
    rng: &mut R,
) -> Result<TimePartition> {
    if n_points < 2 || !(t_end > 0.0) || !(max_step > 0.0) {
        return Err(Error::InvalidParameter(
            "irregular partition needs n_points >= 2 and positive t_end, max_step".into(),
        ));
    }
    if t_end / (n_points as f64) > max_step {
        return Err(Error::InvalidParameter("too few points to respect max_step".into()));
    }
    for _ in 0..10_000 {
        let mut pts: Vec<f64> = (0..n_points)
            .map(|_| t_end - rng.random_range(0.0..t_end))
            .collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        if pts.len() != n_points {
            continue;
        }
        pts.insert(0, 0.0);
        if pts.windows(2).all(|w| w[1] - w[0] <= max_step) {
            return TimePartition::new(pts, max_step);
        }
    }
    Err(Error::InvalidParameter("could not draw a partition within max_step".into()))
}

/// The true solution operator as a [`StepPredictor`]: integrates the full
/// model with the network re-solved at every stage and ignores the sensor
/// readings. Full-state output.
#[derive(Debug, Clone, Copy)]
pub struct TruthOperator<'a> {
    pub gp: &'a GeneratorParams,
    pub grid: &'a GridParams,
    pub substeps: usize,
}

impl StepPredictor for TruthOperator<'_> {
    fn output_mode(&self) -> OutputMode {
        OutputMode::Full
    }

    fn n_sensors(&self) -> usize {
        1
    }

    fn predict(&self, x: &State, _ys: &[InterfaceInput], _locs: &[f64], h: f64) -> Result<State> {
        integrate_resolved(x, self.gp, self.grid, h, self.substeps)
    }
}

/// Residual operator that always predicts zero correction.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroResidual;

impl StepPredictor for ZeroResidual {
    fn output_mode(&self) -> OutputMode {
        OutputMode::Residual
    }

    fn n_sensors(&self) -> usize {
        1
    }

    fn predict(&self, _x: &State, _ys: &[InterfaceInput], _locs: &[f64], _h: f64) -> Result<State> {
        Ok(State::default())
    }
}
