//! Training-sample generation: the two state/input sampling procedures,
//! sensor placement and operator labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DatasetSample;
use crate::dynamics::{
    integrate_resolved, integrate_with_input, solve_network, GeneratorParams, GridParams,
    InputSignal, InterfaceInput, State, N_STATES,
};
use crate::error::{Error, Result};
use crate::nn::OutputMode;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.random_range(self.lo..self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingRanges {
    pub delta: Interval,
    pub omega: Interval,
    pub e_d_prime: Interval,
    pub e_q_prime: Interval,
    pub i_d: Interval,
    pub i_q: Interval,
    /// Step lengths are drawn from `(h_min, h_max]`.
    pub h_min: f64,
    pub h_max: f64,
}

impl Default for SamplingRanges {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self {
            delta: Interval::new(-PI, 4.0 * PI),
            omega: Interval::new(0.0, PI / 2.0),
            e_d_prime: Interval::new(-1.0, 1.0),
            e_q_prime: Interval::new(0.0, 1.5),
            i_d: Interval::new(-1.0, 3.0),
            i_q: Interval::new(-1.0, 1.0),
            h_min: 1e-3,
            h_max: 0.25,
        }
    }
}

impl SamplingRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, iv) in [
            ("delta", self.delta),
            ("omega", self.omega),
            ("e_d_prime", self.e_d_prime),
            ("e_q_prime", self.e_q_prime),
            ("i_d", self.i_d),
            ("i_q", self.i_q),
        ] {
            if !(iv.lo < iv.hi) || !iv.lo.is_finite() || !iv.hi.is_finite() {
                return Err(Error::InvalidParameter(format!("range {name}: need lo < hi")));
            }
        }
        if !(self.h_min > 0.0 && self.h_min < self.h_max) {
            return Err(Error::InvalidParameter("need 0 < h_min < h_max".into()));
        }
        Ok(())
    }

    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        State::new(
            self.delta.sample(rng),
            self.omega.sample(rng),
            self.e_d_prime.sample(rng),
            self.e_q_prime.sample(rng),
        )
    }

    pub fn sample_input<R: Rng + ?Sized>(&self, rng: &mut R) -> InterfaceInput {
        InterfaceInput::new(self.i_d.sample(rng), self.i_q.sample(rng))
    }

    /// Uniform on `(h_min, h_max]`.
    pub fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.h_max - rng.random_range(0.0..self.h_max - self.h_min)
    }
}

/// How `(x, y)` pairs are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    /// `x` and `y` independently uniform over their boxes.
    StateInput,
    /// `x` uniform, `y` from the network equations at `x`.
    NetworkEquations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorRule {
    /// One reading at the step start.
    Singleton,
    /// `d_0 = 0`, the rest uniform on `(0, h_n)` and sorted.
    FixedPlusUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSpec {
    pub m: usize,
    pub rule: SensorRule,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self::singleton()
    }
}

impl SensorSpec {
    pub const fn singleton() -> Self {
        Self {
            m: 1,
            rule: SensorRule::Singleton,
        }
    }

    pub const fn fixed_plus_uniform(m: usize) -> Self {
        Self {
            m,
            rule: SensorRule::FixedPlusUniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.m, self.rule) {
            (0, _) => Err(Error::InvalidParameter("sensor count must be >= 1".into())),
            (1, SensorRule::Singleton) | (2.., SensorRule::FixedPlusUniform) => Ok(()),
            (1, _) => Err(Error::InvalidParameter("m = 1 requires the singleton rule".into())),
            _ => Err(Error::InvalidParameter("singleton rule requires m = 1".into())),
        }
    }

    /// Offsets `0 = d_0 < d_1 < ... <= h`.
    pub fn sample_offsets<R: Rng + ?Sized>(&self, h: f64, rng: &mut R) -> Vec<f64> {
        let mut locs = vec![0.0];
        if self.rule == SensorRule::FixedPlusUniform {
            while locs.len() < self.m {
                // open interval (0, h)
                let d = h * (1.0 - rng.random_range(0.0..1.0));
                if d > 0.0 && d < h && !locs.contains(&d) {
                    locs.push(d);
                }
            }
            locs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
        locs
    }
}

/// Integration settings for operator labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    pub substeps: usize,
    /// Damping fidelity of the approximate model used by residual labels.
    pub approx_beta: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            substeps: 16,
            approx_beta: 0.5,
        }
    }
}

/// Procedure 1: independent uniform draws of the state and one input.
pub fn sample_state_input<R: Rng + ?Sized>(ranges: &SamplingRanges, rng: &mut R) -> (State, InterfaceInput) {
    let x = ranges.sample_state(rng);
    let y = ranges.sample_input(rng);
    (x, y)
}

/// Procedure 2: uniform state, network-consistent input.
pub fn sample_state_solve_network<R: Rng + ?Sized>(
    ranges: &SamplingRanges,
    gp: &GeneratorParams,
    grid: &GridParams,
    rng: &mut R,
) -> Result<(State, InterfaceInput)> {
    let x = ranges.sample_state(rng);
    let y = solve_network(&x, gp, grid)?;
    Ok((x, y))
}

/// The state reached after `h` under the true model (`gp`) and the
/// approximate model, both driven by the sensor-interpolated input.
pub fn label_endpoints(
    x: &State,
    y_sensors: &[InterfaceInput],
    sensor_locs: &[f64],
    h: f64,
    gp: &GeneratorParams,
    cfg: &LabelConfig,
) -> Result<(State, State)> {
    let signal = InputSignal::from_sensors(sensor_locs, y_sensors);
    let truth = integrate_with_input(x, gp, h, cfg.substeps, &signal)?;
    let approx = integrate_with_input(x, &gp.with_beta(cfg.approx_beta), h, cfg.substeps, &signal)?;
    Ok((truth, approx))
}

/// Operator label for one step: the next state (`full`), its increment, or
/// its deviation from the approximate model.
pub fn make_label(
    x: &State,
    y_sensors: &[InterfaceInput],
    sensor_locs: &[f64],
    h: f64,
    mode: OutputMode,
    gp: &GeneratorParams,
    cfg: &LabelConfig,
) -> Result<[f64; N_STATES]> {
    if y_sensors.is_empty() || y_sensors.len() != sensor_locs.len() {
        return Err(Error::DimensionMismatch {
            expected: sensor_locs.len(),
            got: y_sensors.len(),
        });
    }
    let signal = InputSignal::from_sensors(sensor_locs, y_sensors);
    let truth = integrate_with_input(x, gp, h, cfg.substeps, &signal)?;
    let label = match mode {
        OutputMode::Full => truth,
        OutputMode::Incremental => truth - *x,
        OutputMode::Residual => {
            let approx_gp = gp.with_beta(cfg.approx_beta);
            truth - integrate_with_input(x, &approx_gp, h, cfg.substeps, &signal)?
        }
    };
    Ok(label.to_array())
}

/// Rewrites labels between the full and incremental forms.
pub fn convert_labels(
    samples: &[DatasetSample],
    from: OutputMode,
    to: OutputMode,
) -> Result<Vec<DatasetSample>> {
    use OutputMode::*;
    let shift = |s: &DatasetSample, sign: f64| {
        let mut t = s.clone();
        let x = s.x.to_array();
        for (l, xi) in t.label.iter_mut().zip(x) {
            *l += sign * xi;
        }
        t
    };
    match (from, to) {
        (a, b) if a == b => Ok(samples.to_vec()),
        (Incremental, Full) => Ok(samples.iter().map(|s| shift(s, 1.0)).collect()),
        (Full, Incremental) => Ok(samples.iter().map(|s| shift(s, -1.0)).collect()),
        _ => Err(Error::InvalidParameter(
            "residual labels cannot be converted without the approximate model".into(),
        )),
    }
}

/// Everything needed to draw one training sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec<'a> {
    pub procedure: Procedure,
    pub mode: OutputMode,
    pub sensors: SensorSpec,
    pub ranges: &'a SamplingRanges,
    pub gp: &'a GeneratorParams,
    pub grid: &'a GridParams,
    pub label: LabelConfig,
}

impl SampleSpec<'_> {
    pub fn validate(&self) -> Result<()> {
        self.ranges.validate()?;
        self.sensors.validate()?;
        self.gp.validate()?;
        self.grid.validate()?;
        if self.label.substeps == 0 || !(0.0..=1.0).contains(&self.label.approx_beta) {
            return Err(Error::InvalidParameter("label substeps >= 1, approx_beta in [0, 1]".into()));
        }
        Ok(())
    }

    /// Draws one sample from `rng`. Draw order: step, sensor offsets, state,
    /// then one input per sensor.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DatasetSample> {
        let h = self.ranges.sample_step(rng);
        let locs = self.sensors.sample_offsets(h, rng);
        let x = self.ranges.sample_state(rng);
        let ys = match self.procedure {
            Procedure::StateInput => locs.iter().map(|_| self.ranges.sample_input(rng)).collect(),
            Procedure::NetworkEquations => {
                let mut ys = Vec::with_capacity(locs.len());
                for &d in &locs {
                    let xd = if d > 0.0 {
                        integrate_resolved(&x, self.gp, self.grid, d, self.label.substeps)?
                    } else {
                        x
                    };
                    ys.push(solve_network(&xd, self.gp, self.grid)?);
                }
                ys
            }
        };
        let label = make_label(&x, &ys, &locs, h, self.mode, self.gp, &self.label)?;
        Ok(DatasetSample {
            x,
            y_sensors: ys,
            sensor_locs: locs,
            h,
            label,
        })
    }
}

/// `n` i.i.d. samples. Sample `i` uses its own ChaCha stream derived from one
/// base seed drawn from `rng`, so the result does not depend on thread count.
pub fn build_training_set<R: Rng + ?Sized>(
    n: usize,
    spec: &SampleSpec<'_>,
    rng: &mut R,
) -> Result<Vec<DatasetSample>> {
    if n == 0 {
        return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
    }
    spec.validate()?;
    let base: u64 = rng.random();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(base);
            r.set_stream(i as u64);
            spec.draw(&mut r)
        })
        .collect()
}
