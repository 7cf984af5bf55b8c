//! Error metrics, the cumulative error bound of the residual scheme and its
//! empirical check, and sensitivity sweeps.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::data::{DatasetSample, SamplingRanges, TestCase};
use crate::dynamics::{
    integrate_with_input, two_axis_rhs, GeneratorParams, GridParams, InputSignal, InterfaceInput,
    State,
};
use crate::error::{Error, Result};
use crate::nn::{OutputMode, StepPredictor};
use crate::rollout::{rollout_partial, InputProvider, Scheme};
use crate::trajectory::{Quantity, TimePartition, Trajectory};

/// Floor on `||truth||` in the relative error.
pub const L2_DENOM_FLOOR: f64 = 1e-12;
/// Safety factor applied to every estimated bound constant.
pub const INFLATION: f64 = 2.0;

fn check_partitions(a: &TimePartition, b: &TimePartition) -> Result<()> {
    let (pa, pb) = (a.points(), b.points());
    if pa.len() != pb.len() || pa.iter().zip(pb).any(|(s, t)| (s - t).abs() > 1e-9) {
        return Err(Error::PartitionMismatch(format!(
            "prediction has {} points on [0, {}], truth {} on [0, {}]",
            pa.len(),
            a.t_end(),
            pb.len(),
            b.t_end()
        )));
    }
    Ok(())
}

/// `100 * ||pred - truth||_2 / ||truth||_2` over the sampled series of `q`.
pub fn l2_relative_error(pred: &Trajectory, truth: &Trajectory, q: Quantity) -> Result<f64> {
    check_partitions(pred.partition(), truth.partition())?;
    let (a, b) = (pred.series(q), truth.series(q));
    let num = a.iter().zip(&b).map(|(p, t)| (p - t) * (p - t)).sum::<f64>().sqrt();
    let den = b.iter().map(|t| t * t).sum::<f64>().sqrt().max(L2_DENOM_FLOOR);
    Ok(100.0 * num / den)
}

/// Relative errors of all six quantities for one trajectory pair.
pub fn trajectory_errors(pred: &Trajectory, truth: &Trajectory) -> Result<[f64; 6]> {
    let mut e = [0.0; 6];
    for (k, q) in Quantity::ALL.iter().enumerate() {
        e[k] = l2_relative_error(pred, truth, *q)?;
    }
    Ok(e)
}

/// Mean and population standard deviation (divide by N) of the per-trajectory
/// L2-relative errors, in percent, for delta, omega, e_d', e_q', i_d, i_q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub n_trajectories: usize,
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

impl ErrorTable {
    pub fn from_errors(per_traj: &[[f64; 6]]) -> Result<Self> {
        if per_traj.is_empty() {
            return Err(Error::Empty("error table trajectory set"));
        }
        let n = per_traj.len() as f64;
        let mut mean = [0.0; 6];
        let mut std = [0.0; 6];
        for k in 0..6 {
            mean[k] = per_traj.iter().map(|e| e[k]).sum::<f64>() / n;
            let var = per_traj.iter().map(|e| (e[k] - mean[k]).powi(2)).sum::<f64>() / n;
            std[k] = var.sqrt();
        }
        Ok(Self {
            n_trajectories: per_traj.len(),
            mean,
            std,
        })
    }

    pub fn mean_of(&self, q: Quantity) -> f64 {
        self.mean[Quantity::ALL.iter().position(|p| *p == q).unwrap()]
    }

    pub fn std_of(&self, q: Quantity) -> f64 {
        self.std[Quantity::ALL.iter().position(|p| *p == q).unwrap()]
    }

    /// Rows `mean` and `std_population`; one column per quantity.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["stat"];
        header.extend(Quantity::ALL.iter().map(|q| q.name()));
        out.write_record(&header)?;
        for (label, row) in [("mean", &self.mean), ("std_population", &self.std)] {
            let mut rec = vec![label.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Twin<'a> {
            quantities: Vec<&'static str>,
            std_convention: &'static str,
            #[serde(flatten)]
            table: &'a ErrorTable,
        }
        Ok(serde_json::to_string_pretty(&Twin {
            quantities: Quantity::ALL.iter().map(|q| q.name()).collect(),
            std_convention: "population",
            table: self,
        })?)
    }
}

/// Pairs `preds[i]` with `truths[i]`.
pub fn error_table(preds: &[Trajectory], truths: &[Trajectory]) -> Result<ErrorTable> {
    if preds.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            got: preds.len(),
        });
    }
    let errs = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| trajectory_errors(p, t))
        .collect::<Result<Vec<_>>>()?;
    ErrorTable::from_errors(&errs)
}

/// Error table of a suite's rollouts. Diverged rollouts are excluded from
/// the statistics and counted separately.
pub fn suite_error_table(
    rollouts: &[Result<Trajectory>],
    cases: &[TestCase],
) -> Result<(ErrorTable, usize)> {
    let mut errs = Vec::with_capacity(cases.len());
    let mut diverged = 0;
    for (r, c) in rollouts.iter().zip(cases) {
        match r {
            Ok(tr) => errs.push(trajectory_errors(tr, &c.truth)?),
            Err(Error::RolloutDiverged { .. }) => diverged += 1,
            Err(e) => return Err(Error::InvalidParameter(format!("rollout failed: {e}"))),
        }
    }
    Ok((ErrorTable::from_errors(&errs)?, diverged))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Largest `||f(x1, y) - f(x2, y)|| / ||x1 - x2||` and the same quotient in
/// `y`, over `n_probe` random probes from `ranges`. Uninflated. Each probe
/// draws `x1, x2, y1, y2` in that order, so estimates for nested probe
/// counts from the same seed are monotone.
pub fn lipschitz_field<F, R>(field: F, ranges: &SamplingRanges, n_probe: usize, rng: &mut R) -> Result<f64>
where
    F: Fn(&State, &InterfaceInput) -> Result<State>,
    R: Rng + ?Sized,
{
    if n_probe < 2 {
        return Err(Error::InvalidParameter("n_probe must be >= 2".into()));
    }
    let mut best: f64 = 0.0;
    for _ in 0..n_probe {
        let x1 = ranges.sample_state(rng);
        let x2 = ranges.sample_state(rng);
        let y1 = ranges.sample_input(rng);
        let y2 = ranges.sample_input(rng);
        let f11 = field(&x1, &y1)?.to_array();
        let dx = dist(&x1.to_array(), &x2.to_array());
        if dx > 0.0 {
            best = best.max(dist(&f11, &field(&x2, &y1)?.to_array()) / dx);
        }
        let dy = dist(&y1.to_array(), &y2.to_array());
        if dy > 0.0 {
            best = best.max(dist(&f11, &field(&x1, &y2)?.to_array()) / dy);
        }
    }
    Ok(best)
}

/// Inflated Lipschitz estimate `L` of the true vector field.
pub fn estimate_lipschitz_f<R: Rng + ?Sized>(
    gp: &GeneratorParams,
    ranges: &SamplingRanges,
    n_probe: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(INFLATION * lipschitz_field(|x, y| two_axis_rhs(x, y, gp), ranges, n_probe, rng)?)
}

/// Inflated Lipschitz estimate `L_Phi` (in the state) of the one-step flow
/// of the true model with the input frozen over a step of length `h`.
pub fn estimate_lipschitz_flow<R: Rng + ?Sized>(
    gp: &GeneratorParams,
    ranges: &SamplingRanges,
    h: f64,
    substeps: usize,
    n_probe: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_probe < 2 {
        return Err(Error::InvalidParameter("n_probe must be >= 2".into()));
    }
    let mut best: f64 = 0.0;
    for _ in 0..n_probe {
        let x1 = ranges.sample_state(rng);
        let x2 = ranges.sample_state(rng);
        let y = InputSignal::Constant(ranges.sample_input(rng));
        let p1 = integrate_with_input(&x1, gp, h, substeps, &y)?;
        let p2 = integrate_with_input(&x2, gp, h, substeps, &y)?;
        let dx = dist(&x1.to_array(), &x2.to_array());
        if dx > 0.0 {
            best = best.max(dist(&p1.to_array(), &p2.to_array()) / dx);
        }
    }
    Ok(INFLATION * best)
}

/// Constants of the cumulative error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Lipschitz constant of the vector field.
    pub l: f64,
    /// Lipschitz constant of the one-step flow map.
    pub l_phi: f64,
    /// Network approximation error.
    pub eps: f64,
    /// Input approximation error over one step.
    pub kappa: f64,
    /// Largest step.
    pub h: f64,
    pub n: usize,
}

/// `sum_{k<n} q^k`, with the limit form `n` within 1e-9 of `q = 1`.
fn geometric(q: f64, n: usize) -> f64 {
    if (q - 1.0).abs() < 1e-9 {
        n as f64
    } else {
        (1.0 - q.powi(n as i32)) / (1.0 - q)
    }
}

/// `(1 - r^n)/(1 - r) E + (1 - L_Phi^n)/(1 - L_Phi) eps` with
/// `r = exp(L h)` and `E = L h kappa exp(L h)`.
pub fn cumulative_bound(b: &BoundInputs) -> f64 {
    let r = (b.l * b.h).exp();
    let e = b.l * b.h * b.kappa * r;
    geometric(r, b.n) * e + geometric(b.l_phi, b.n) * b.eps
}

/// Variable-step form: `E = max_n L h_n kappa_n exp(L h_n)` over the
/// supplied `(h_n, kappa_n)` and `r = exp(L max h_n)`.
pub fn cumulative_bound_variable(l: f64, l_phi: f64, eps: f64, steps: &[(f64, f64)]) -> f64 {
    let h_max = steps.iter().map(|s| s.0).fold(0.0, f64::max);
    let e = steps
        .iter()
        .map(|&(h, k)| l * h * k * (l * h).exp())
        .fold(0.0, f64::max);
    let n = steps.len();
    geometric((l * h_max).exp(), n) * e + geometric(l_phi, n) * eps
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundConfig {
    /// Rollouts checked against the bound.
    pub n_rollouts: usize,
    /// Probe pairs for each Lipschitz estimate.
    pub n_probe: usize,
    /// Substeps of the frozen-input flow map and of the residual scheme.
    pub substeps: usize,
    pub approx_beta: f64,
    /// Replaces the estimated `kappa` when set.
    pub kappa_override: Option<f64>,
    pub ranges: SamplingRanges,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            n_rollouts: 20,
            n_probe: 1000,
            substeps: 16,
            approx_beta: 0.5,
            kappa_override: None,
            ranges: SamplingRanges::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBound {
    /// `||x(t_n) - x_hat(t_n)||_2` for every completed step.
    pub errors: Vec<f64>,
    pub max_error: f64,
    /// First step whose error exceeds the bound.
    pub first_violation: Option<usize>,
    pub diverged_at: Option<usize>,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Estimated constants; `n` is the partition's step count.
    pub constants: BoundInputs,
    /// Bound value after `n` steps, `n = 0..=N`.
    pub bound: Vec<f64>,
    pub rollouts: Vec<RolloutBound>,
    pub n_satisfied: usize,
    pub satisfied: bool,
}

/// Largest input change over one step of the recorded truth, inflated.
fn estimate_kappa(cases: &[TestCase]) -> f64 {
    let mut best: f64 = 0.0;
    for c in cases {
        for w in c.truth.inputs().windows(2) {
            best = best.max(dist(&w[0].to_array(), &w[1].to_array()));
        }
    }
    INFLATION * best
}

/// Largest `||model - label||_2` over residual validation samples, inflated.
fn estimate_eps<M: StepPredictor + ?Sized>(model: &M, validation: &[DatasetSample]) -> Result<f64> {
    let mut best: f64 = 0.0;
    for s in validation {
        let p = model.predict(&s.x, &s.y_sensors, &s.sensor_locs, s.h)?;
        best = best.max(dist(&p.to_array(), &s.label));
    }
    Ok(INFLATION * best)
}

/// Estimates the bound constants and checks the closed-loop residual
/// rollouts of `cases` against the bound at every step. An unsatisfied
/// bound is reported, not raised.
#[allow(clippy::too_many_arguments)]
pub fn verify_bound<M, R>(
    model: &M,
    validation: &[DatasetSample],
    cases: &[TestCase],
    partition: &TimePartition,
    gp: &GeneratorParams,
    grid: &GridParams,
    cfg: &BoundConfig,
    rng: &mut R,
) -> Result<BoundReport>
where
    M: StepPredictor + ?Sized,
    R: Rng + ?Sized,
{
    if model.output_mode() != OutputMode::Residual {
        return Err(Error::InvalidParameter("bound verification needs a residual model".into()));
    }
    if validation.is_empty() || cases.is_empty() {
        return Err(Error::Empty("validation samples or rollout cases"));
    }
    let h = partition.max_step();
    let l = estimate_lipschitz_f(gp, &cfg.ranges, cfg.n_probe, rng)?;
    let l_phi = estimate_lipschitz_flow(gp, &cfg.ranges, h, cfg.substeps, cfg.n_probe, rng)?;
    let eps = estimate_eps(model, validation)?;
    let kappa = cfg.kappa_override.unwrap_or_else(|| estimate_kappa(cases));
    let n_steps = partition.n_steps();
    let constants = BoundInputs {
        l,
        l_phi,
        eps,
        kappa,
        h,
        n: n_steps,
    };
    let bound: Vec<f64> = (0..=n_steps)
        .map(|n| cumulative_bound(&BoundInputs { n, ..constants }))
        .collect();

    let scheme = Scheme::Residual {
        approx: gp.with_beta(cfg.approx_beta),
        substeps: cfg.substeps,
    };
    let rollouts = cases
        .par_iter()
        .map(|c| {
            let provider = InputProvider::ClosedLoop {
                gp,
                grid,
                faults: &c.faults,
            };
            let r = rollout_partial(model, &c.x0, partition, &provider, &scheme)?;
            let errors: Vec<f64> = r
                .states
                .iter()
                .zip(c.truth.states())
                .map(|(p, t)| (*p - *t).norm2())
                .collect();
            let first_violation = errors.iter().zip(&bound).position(|(e, b)| e > b);
            let max_error = errors.iter().copied().fold(0.0, f64::max);
            Ok(RolloutBound {
                satisfied: first_violation.is_none() && r.diverged_at.is_none(),
                errors,
                max_error,
                first_violation,
                diverged_at: r.diverged_at,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_satisfied = rollouts.iter().filter(|r| r.satisfied).count();
    for (i, r) in rollouts.iter().enumerate().filter(|(_, r)| !r.satisfied) {
        log::warn!(
            "bound violated on rollout {i} (first step {:?}, diverged {:?}); constants {constants:?}",
            r.first_violation,
            r.diverged_at
        );
    }
    Ok(BoundReport {
        constants,
        bound,
        satisfied: n_satisfied == rollouts.len(),
        n_satisfied,
        rollouts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NTrain,
    DaggerIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: usize,
    pub seed: u64,
    pub table: ErrorTable,
}

/// Runs `run(value, seed)` for every point and seed (the same seeds at every
/// point), in parallel across points.
pub fn sensitivity_sweep<F>(axis: SweepAxis, values: &[usize], seeds: &[u64], run: F) -> Result<Vec<SweepPoint>>
where
    F: Fn(usize, u64) -> Result<ErrorTable> + Sync,
{
    let jobs: Vec<(usize, u64)> = values
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    jobs.into_par_iter()
        .map(|(value, seed)| {
            Ok(SweepPoint {
                axis,
                value,
                seed,
                table: run(value, seed)?,
            })
        })
        .collect()
}

/// One row per sweep point: axis, value, seed, then mean and population std
/// per quantity.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["axis".to_string(), "value".into(), "seed".into()];
    for q in Quantity::ALL {
        header.push(format!("{}_mean", q.name()));
    }
    for q in Quantity::ALL {
        header.push(format!("{}_std_population", q.name()));
    }
    out.write_record(&header)?;
    for p in points {
        let axis = match p.axis {
            SweepAxis::NTrain => "n_train",
            SweepAxis::DaggerIters => "dagger_iters",
        };
        let mut rec = vec![axis.to_string(), p.value.to_string(), p.seed.to_string()];
        rec.extend(p.table.mean.iter().chain(&p.table.std).map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_test_suite_seeded, SuiteConfig, SuiteKind};
    use crate::dynamics::{back_solve_operating_point, OperatingPoint};
    use crate::rollout::ZeroResidual;
    use crate::trajectory::Provenance;
    use nalgebra::Matrix4;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn series_traj(delta: &[f64]) -> Trajectory {
        let n = delta.len();
        let p = TimePartition::uniform((n - 1) as f64, 1.0).unwrap();
        let states = delta.iter().map(|&d| State::new(d, 1.0, 0.0, 1.0)).collect();
        Trajectory::new(p, states, vec![InterfaceInput::new(1.0, 1.0); n], Provenance::Truth)
    }

    #[test]
    fn l2_hand_example() {
        let truth = series_traj(&[3.0, 4.0]);
        let pred = series_traj(&[3.0, 4.4]);
        let e = l2_relative_error(&pred, &truth, Quantity::Delta).unwrap();
        assert!((e - 8.0).abs() < 1e-12);
        assert_eq!(l2_relative_error(&truth, &truth, Quantity::Delta).unwrap(), 0.0);
        let short = series_traj(&[3.0, 4.0, 5.0]);
        assert!(matches!(
            l2_relative_error(&short, &truth, Quantity::Delta),
            Err(Error::PartitionMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn l2_is_scale_invariant(
            t in prop::collection::vec(-5.0f64..5.0, 2..20),
            noise in prop::collection::vec(-1.0f64..1.0, 20),
            c in 0.01f64..100.0,
        ) {
            let p: Vec<f64> = t.iter().zip(&noise).map(|(a, b)| a + b).collect();
            let e1 = l2_relative_error(&series_traj(&p), &series_traj(&t), Quantity::Delta).unwrap();
            let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
            let ts: Vec<f64> = t.iter().map(|v| v * c).collect();
            let e2 = l2_relative_error(&series_traj(&ps), &series_traj(&ts), Quantity::Delta).unwrap();
            if t.iter().map(|v| v * v).sum::<f64>().sqrt() > 1e-6 {
                prop_assert!((e1 - e2).abs() <= 1e-9 * e1.max(1.0));
            }
        }

        #[test]
        fn bound_is_monotone_in_n(
            l in 0.0f64..5.0, l_phi in 0.0f64..3.0, eps in 0.0f64..1.0,
            kappa in 0.0f64..1.0, h in 1e-3f64..0.25, n in 0usize..300,
        ) {
            let b = BoundInputs { l, l_phi, eps, kappa, h, n };
            let next = cumulative_bound(&BoundInputs { n: n + 1, ..b });
            prop_assert!(next >= cumulative_bound(&b));
        }

        #[test]
        fn error_table_matches_reaggregation(
            errs in prop::collection::vec(prop::array::uniform6(0.0f64..50.0), 1..30)
        ) {
            let t = ErrorTable::from_errors(&errs).unwrap();
            for k in 0..6 {
                let col: Vec<f64> = errs.iter().map(|e| e[k]).collect();
                let mut sum = 0.0;
                for v in &col { sum += v; }
                let mean = sum / col.len() as f64;
                let mut ss = 0.0;
                for v in &col { ss += (v - mean) * (v - mean); }
                prop_assert!((t.mean[k] - mean).abs() <= 1e-12 * mean.max(1.0));
                prop_assert!((t.std[k] - (ss / col.len() as f64).sqrt()).abs() <= 1e-9);
                prop_assert!(t.std[k] >= 0.0);
            }
        }
    }

    #[test]
    fn table_single_pair_and_identical_sets() {
        let truth = series_traj(&[3.0, 4.0]);
        let pred = series_traj(&[3.0, 4.4]);
        let t = error_table(std::slice::from_ref(&pred), std::slice::from_ref(&truth)).unwrap();
        assert!((t.mean_of(Quantity::Delta) - 8.0).abs() < 1e-12);
        assert_eq!(t.std, [0.0; 6]);
        let z = error_table(&[truth.clone(), pred.clone()], &[truth, pred]).unwrap();
        assert_eq!(z.mean, [0.0; 6]);
        assert!(error_table(&[], &[]).is_err());
    }

    #[test]
    fn table_csv_and_json_layout() {
        let t = ErrorTable::from_errors(&[[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "stat,delta,omega,e_d_prime,e_q_prime,i_d,i_q");
        assert_eq!(lines[1], "mean,1,2,3,4,5,6");
        assert!(lines[2].starts_with("std_population,0"));
        let j: serde_json::Value = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        assert_eq!(j["std_convention"], "population");
        assert_eq!(j["mean"][5], 6.0);
    }

    #[test]
    fn lipschitz_linear_field_oracle() {
        let a = Matrix4::new(
            0.3, -1.2, 0.0, 0.5, 2.0, 0.1, -0.4, 0.0, 0.0, 0.7, -1.5, 0.2, 0.9, 0.0, 0.3, -0.6,
        );
        let norm = a.singular_values().max();
        let field = |x: &State, _: &InterfaceInput| {
            let v = a * nalgebra::Vector4::from(x.to_array());
            Ok(State::new(v[0], v[1], v[2], v[3]))
        };
        let ranges = SamplingRanges::default();
        let raw = lipschitz_field(field, &ranges, 20_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let est = INFLATION * raw;
        assert!(raw <= norm * (1.0 + 1e-12));
        assert!(est >= norm && est <= 2.0 * norm * 1.05, "{est} vs {norm}");
    }

    #[test]
    fn lipschitz_constant_field_is_zero_and_nested_probes_monotone() {
        let ranges = SamplingRanges::default();
        let c = |_: &State, _: &InterfaceInput| Ok(State::new(1.0, 2.0, 3.0, 4.0));
        let raw = lipschitz_field(c, &ranges, 100, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(raw <= 1e-10);
        let gp = GeneratorParams::default();
        let mut last = 0.0;
        for n in [2, 10, 50, 200] {
            let l = estimate_lipschitz_f(&gp, &ranges, n, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            assert!(l >= last);
            last = l;
        }
        assert!(lipschitz_field(c, &ranges, 1, &mut ChaCha8Rng::seed_from_u64(2)).is_err());
    }

    fn loop_sum(b: &BoundInputs) -> f64 {
        let r = (b.l * b.h).exp();
        let e = b.l * b.h * b.kappa * r;
        let mut total = 0.0;
        let (mut rk, mut pk) = (1.0, 1.0);
        for _ in 0..b.n {
            total += rk * e + pk * b.eps;
            rk *= r;
            pk *= b.l_phi;
        }
        total
    }

    #[test]
    fn cumulative_bound_matches_loop_summation() {
        let b = BoundInputs {
            l: 1.0,
            l_phi: 1.05,
            eps: 1e-3,
            kappa: 0.01,
            h: 0.05,
            n: 100,
        };
        let v = cumulative_bound(&b);
        assert!((v - loop_sum(&b)).abs() <= 1e-12 * v.max(1.0));
        let one = BoundInputs { n: 1, ..b };
        let e = b.l * b.h * b.kappa * (b.l * b.h).exp();
        assert!((cumulative_bound(&one) - (e + b.eps)).abs() <= 1e-15);
        let zero = BoundInputs { kappa: 0.0, eps: 0.0, ..b };
        assert_eq!(cumulative_bound(&zero), 0.0);
        // Limit forms at r = 1 and L_Phi = 1.
        let lim = BoundInputs { l: 0.0, l_phi: 1.0, ..b };
        assert!((cumulative_bound(&lim) - 100.0 * 1e-3).abs() <= 1e-12);
        let near = BoundInputs { l_phi: 1.0 + 1e-10, ..b };
        assert!((cumulative_bound(&near) - loop_sum(&near)).abs() <= 1e-9);
    }

    #[test]
    fn variable_bound_reduces_to_uniform() {
        let b = BoundInputs {
            l: 0.8,
            l_phi: 1.1,
            eps: 2e-3,
            kappa: 0.02,
            h: 0.05,
            n: 40,
        };
        let steps = vec![(b.h, b.kappa); b.n];
        let v = cumulative_bound_variable(b.l, b.l_phi, b.eps, &steps);
        assert!((v - cumulative_bound(&b)).abs() <= 1e-12 * v);
    }

    #[test]
    fn zero_residual_stub_with_zero_kappa_has_zero_error() {
        // With beta = 1 the approximate model is the truth; frozen-input
        // rollouts against a frozen-input truth then agree exactly.
        let grid = GridParams::default();
        let (gp, xs) =
            back_solve_operating_point(&GeneratorParams::default(), &grid, OperatingPoint::default())
                .unwrap();
        let p = TimePartition::uniform(2.0, 0.05).unwrap();
        let mut cases =
            build_test_suite_seeded(SuiteKind::GammaPerturbed, 3, &p, &gp, &grid, &xs, &SuiteConfig::default(), 5)
                .unwrap();
        let cfg = BoundConfig {
            approx_beta: 1.0,
            kappa_override: Some(0.0),
            n_probe: 50,
            ..Default::default()
        };
        let provider_scheme = Scheme::Residual {
            approx: gp,
            substeps: cfg.substeps,
        };
        for c in &mut cases {
            let provider = InputProvider::ClosedLoop {
                gp: &gp,
                grid: &grid,
                faults: &c.faults,
            };
            let r = rollout_partial(&ZeroResidual, &c.x0, &p, &provider, &provider_scheme).unwrap();
            c.truth = r.into_trajectory(&p, Provenance::Truth).unwrap();
        }
        let val = vec![DatasetSample {
            x: xs,
            y_sensors: vec![InterfaceInput::new(0.5, 0.5)],
            sensor_locs: vec![0.0],
            h: 0.05,
            label: [0.0; 4],
        }];
        let rep = verify_bound(&ZeroResidual, &val, &cases, &p, &gp, &grid, &cfg, &mut ChaCha8Rng::seed_from_u64(6))
            .unwrap();
        assert!(rep.satisfied);
        assert_eq!(rep.constants.eps, 0.0);
        assert!(rep.rollouts.iter().all(|r| r.max_error == 0.0));
        assert!(rep.bound.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(rep.bound.len(), p.n_steps() + 1);
    }

    #[test]
    fn sweep_has_one_point_per_value_and_seed() {
        let pts = sensitivity_sweep(SweepAxis::NTrain, &[100, 500], &[1, 2, 3], |v, s| {
            ErrorTable::from_errors(&[[v as f64, s as f64, 0.0, 0.0, 0.0, 0.0]])
        })
        .unwrap();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[4].value, 500);
        assert_eq!(pts[4].table.mean[1], 2.0);
        let mut buf = Vec::new();
        write_sweep_csv(&pts, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
    }
}
