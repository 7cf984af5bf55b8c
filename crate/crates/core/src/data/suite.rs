//! Test trajectory suites: speed-perturbed starts and impedance faults.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampling::Interval;
use crate::dynamics::{simulate_truth, FaultEvent, GeneratorParams, GridParams, State};
use crate::error::{Error, Result};
use crate::trajectory::{TimePartition, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    /// Start at `(delta*, gamma * omega*, e_d'*, e_q'*)`.
    GammaPerturbed,
    /// Start at equilibrium and change the bus reactance for a while.
    Fault,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub gamma: Interval,
    pub fault_time: f64,
    pub fault_duration: Interval,
    /// Multiplier on the external reactance while the fault is active.
    pub fault_reactance_factor: f64,
    pub truth_substeps: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            gamma: Interval::new(0.2, 1.5),
            fault_time: 1.0,
            fault_duration: Interval::new(0.05, 1.0),
            fault_reactance_factor: 5.0,
            truth_substeps: 8,
        }
    }
}

/// One test trajectory together with what produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub x0: State,
    /// `gamma` for perturbed starts, the fault duration for faults.
    pub parameter: f64,
    pub faults: Vec<FaultEvent>,
    pub truth: Trajectory,
}

impl SuiteConfig {
    /// Initial state and fault schedule for a given suite parameter.
    pub fn case_inputs(
        &self,
        kind: SuiteKind,
        parameter: f64,
        x_star: &State,
        grid: &GridParams,
    ) -> Result<(State, Vec<FaultEvent>)> {
        Ok(match kind {
            SuiteKind::GammaPerturbed => {
                let mut x0 = *x_star;
                x0.omega *= parameter;
                (x0, Vec::new())
            }
            SuiteKind::Fault => {
                let faulted = grid.with_reactance_scaled(self.fault_reactance_factor);
                (*x_star, vec![FaultEvent::new(self.fault_time, parameter, faulted)?])
            }
        })
    }

    pub fn sample_parameter<R: Rng + ?Sized>(&self, kind: SuiteKind, rng: &mut R) -> f64 {
        let iv = match kind {
            SuiteKind::GammaPerturbed => self.gamma,
            SuiteKind::Fault => self.fault_duration,
        };
        rng.random_range(iv.lo..=iv.hi)
    }
}

/// `n_traj` truth trajectories on `partition`. Parameters are drawn
/// sequentially from `rng`; simulations run in parallel.
#[allow(clippy::too_many_arguments)]
pub fn build_test_suite<R: Rng + ?Sized>(
    kind: SuiteKind,
    n_traj: usize,
    partition: &TimePartition,
    gp: &GeneratorParams,
    grid: &GridParams,
    x_star: &State,
    cfg: &SuiteConfig,
    rng: &mut R,
) -> Result<Vec<TestCase>> {
    if cfg.truth_substeps == 0 {
        return Err(Error::InvalidParameter("truth_substeps must be >= 1".into()));
    }
    let params: Vec<f64> = (0..n_traj).map(|_| cfg.sample_parameter(kind, rng)).collect();
    params
        .into_par_iter()
        .map(|p| {
            let (x0, faults) = cfg.case_inputs(kind, p, x_star, grid)?;
            let truth = simulate_truth(&x0, partition, gp, grid, &faults, cfg.truth_substeps)?;
            Ok(TestCase {
                x0,
                parameter: p,
                faults,
                truth,
            })
        })
        .collect()
}

/// Convenience: a suite seeded directly from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn build_test_suite_seeded(
    kind: SuiteKind,
    n_traj: usize,
    partition: &TimePartition,
    gp: &GeneratorParams,
    grid: &GridParams,
    x_star: &State,
    cfg: &SuiteConfig,
    seed: u64,
) -> Result<Vec<TestCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_test_suite(kind, n_traj, partition, gp, grid, x_star, cfg, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{back_solve_operating_point, OperatingPoint};

    fn machine() -> (GeneratorParams, GridParams, State) {
        let grid = GridParams::default();
        let (gp, x) =
            back_solve_operating_point(&GeneratorParams::default(), &grid, OperatingPoint::default())
                .unwrap();
        (gp, grid, x)
    }

    #[test]
    fn unit_gamma_stays_at_equilibrium() {
        let (gp, grid, xs) = machine();
        let cfg = SuiteConfig::default();
        let p = TimePartition::uniform(10.0, 0.05).unwrap();
        let (x0, f) = cfg.case_inputs(SuiteKind::GammaPerturbed, 1.0, &xs, &grid).unwrap();
        assert!(f.is_empty());
        let tr = simulate_truth(&x0, &p, &gp, &grid, &f, cfg.truth_substeps).unwrap();
        assert!(tr.states().iter().all(|s| (*s - xs).norm_inf() <= 1e-8));
    }

    #[test]
    fn fault_suite_is_flat_before_onset() {
        let (gp, grid, xs) = machine();
        let cfg = SuiteConfig::default();
        let p = TimePartition::uniform(3.0, 0.05).unwrap();
        let suite =
            build_test_suite_seeded(SuiteKind::Fault, 6, &p, &gp, &grid, &xs, &cfg, 1).unwrap();
        assert_eq!(suite.len(), 6);
        for case in &suite {
            assert!(cfg.fault_duration.contains(case.parameter));
            for (t, s) in case.truth.times().iter().zip(case.truth.states()) {
                if *t < cfg.fault_time - 1e-9 {
                    assert!((*s - xs).norm_inf() <= 1e-8);
                }
            }
            let moved = case.truth.states().iter().any(|s| (*s - xs).norm_inf() > 1e-4);
            assert!(moved);
        }
    }

    #[test]
    fn gamma_suite_draws_in_range_and_is_reproducible() {
        let (gp, grid, xs) = machine();
        let cfg = SuiteConfig::default();
        let p = TimePartition::uniform(1.0, 0.05).unwrap();
        let a = build_test_suite_seeded(SuiteKind::GammaPerturbed, 5, &p, &gp, &grid, &xs, &cfg, 3)
            .unwrap();
        let b = build_test_suite_seeded(SuiteKind::GammaPerturbed, 5, &p, &gp, &grid, &xs, &cfg, 3)
            .unwrap();
        assert_eq!(a, b);
        for c in &a {
            assert!(cfg.gamma.contains(c.parameter));
            assert!((c.x0.omega - c.parameter * xs.omega).abs() < 1e-15);
        }
    }
}
