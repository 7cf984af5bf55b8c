//! Time partitions, trajectories and their on-disk formats.
//!
//! A trajectory file is JSON-lines with one record per time point:
//! `{"traj":k,"t":..,"state":[delta,omega,e_d',e_q'],"input":[i_d,i_q],"provenance":".."}`.
//! Several trajectories (a test suite) may share one file, distinguished by
//! `traj`. The CSV twin carries the same columns flattened.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::dynamics::{InterfaceInput, State};
use crate::error::{Error, Result};

/// `0 = t_0 < t_1 < ... < t_M` with every step in `(0, max_step]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePartition {
    points: Vec<f64>,
    max_step: f64,
}

/// Slack allowed when checking steps against `max_step`.
const STEP_TOL: f64 = 1e-12;

impl TimePartition {
    pub fn new(points: Vec<f64>, max_step: f64) -> Result<Self> {
        if !(max_step > 0.0) {
            return Err(Error::InvalidParameter("max_step must be positive".into()));
        }
        if points.len() < 2 {
            return Err(Error::InvalidParameter("partition needs at least two points".into()));
        }
        if points[0] != 0.0 {
            return Err(Error::InvalidParameter("partition must start at 0".into()));
        }
        for w in points.windows(2) {
            let h = w[1] - w[0];
            if !(h > 0.0) || h > max_step + STEP_TOL {
                return Err(Error::InvalidParameter(format!(
                    "step {h} outside (0, {max_step}]"
                )));
            }
        }
        Ok(Self { points, max_step })
    }

    /// Uniform grid on `[0, t_end]` with step `h`; `t_end / h` is rounded to
    /// the nearest whole number of steps.
    pub fn uniform(t_end: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) || !(t_end > 0.0) {
            return Err(Error::InvalidParameter("uniform partition needs t_end, h > 0".into()));
        }
        let m = (t_end / h).round().max(1.0) as usize;
        let points = (0..=m).map(|i| i as f64 * h).collect();
        Self::new(points, h)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn max_step(&self) -> f64 {
        self.max_step
    }

    /// Number of steps `M`.
    pub fn n_steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn steps(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.windows(2).map(|w| w[1] - w[0])
    }

    pub fn t_end(&self) -> f64 {
        *self.points.last().unwrap()
    }

    /// Leading sub-partition covering the first `n_steps` steps.
    pub fn truncated(&self, n_steps: usize) -> Self {
        let n = n_steps.clamp(1, self.n_steps());
        Self {
            points: self.points[..=n].to_vec(),
            max_step: self.max_step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Truth,
    RolloutDataDriven,
    RolloutResidual,
    Shadow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    partition: TimePartition,
    states: Vec<State>,
    inputs: Vec<InterfaceInput>,
    provenance: Provenance,
}

impl Trajectory {
    /// Panics if the state or input count does not match the partition.
    pub fn new(
        partition: TimePartition,
        states: Vec<State>,
        inputs: Vec<InterfaceInput>,
        provenance: Provenance,
    ) -> Self {
        assert_eq!(states.len(), partition.points().len(), "state count");
        assert_eq!(inputs.len(), partition.points().len(), "input count");
        Self {
            partition,
            states,
            inputs,
            provenance,
        }
    }

    pub fn partition(&self) -> &TimePartition {
        &self.partition
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn inputs(&self) -> &[InterfaceInput] {
        &self.inputs
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn times(&self) -> &[f64] {
        self.partition.points()
    }

    /// Time series of one of the six reported quantities.
    pub fn series(&self, q: Quantity) -> Vec<f64> {
        (0..self.states.len()).map(|n| q.value(&self.states[n], &self.inputs[n])).collect()
    }
}

/// The six quantities reported in error tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Delta,
    Omega,
    EdPrime,
    EqPrime,
    Id,
    Iq,
}

impl Quantity {
    pub const ALL: [Quantity; 6] = [
        Quantity::Delta,
        Quantity::Omega,
        Quantity::EdPrime,
        Quantity::EqPrime,
        Quantity::Id,
        Quantity::Iq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Delta => "delta",
            Quantity::Omega => "omega",
            Quantity::EdPrime => "e_d_prime",
            Quantity::EqPrime => "e_q_prime",
            Quantity::Id => "i_d",
            Quantity::Iq => "i_q",
        }
    }

    pub fn value(self, x: &State, y: &InterfaceInput) -> f64 {
        match self {
            Quantity::Delta => x.delta,
            Quantity::Omega => x.omega,
            Quantity::EdPrime => x.e_d_prime,
            Quantity::EqPrime => x.e_q_prime,
            Quantity::Id => y.i_d,
            Quantity::Iq => y.i_q,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PointRecord {
    traj: usize,
    t: f64,
    state: [f64; 4],
    input: [f64; 2],
    provenance: Provenance,
}

/// Writes trajectories as JSON-lines; `max_step` of each partition is not
/// stored and is recovered as the largest observed step.
pub fn write_trajectories_jsonl<W: Write>(mut w: W, trajs: &[Trajectory]) -> Result<()> {
    for (k, tr) in trajs.iter().enumerate() {
        for n in 0..tr.states.len() {
            let rec = PointRecord {
                traj: k,
                t: tr.partition.points[n],
                state: tr.states[n].to_array(),
                input: tr.inputs[n].to_array(),
                provenance: tr.provenance,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories_jsonl<R: BufRead>(r: R) -> Result<Vec<Trajectory>> {
    let mut groups: Vec<Vec<PointRecord>> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PointRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        if rec.traj == groups.len() {
            groups.push(Vec::new());
        } else if rec.traj + 1 != groups.len() {
            return Err(Error::Format(format!(
                "line {}: trajectory index {} out of order",
                lineno + 1,
                rec.traj
            )));
        }
        groups.last_mut().unwrap().push(rec);
    }
    groups
        .into_iter()
        .map(|g| {
            let points: Vec<f64> = g.iter().map(|r| r.t).collect();
            let max_step = points.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
            let partition = TimePartition::new(points, max_step)?;
            let provenance = g[0].provenance;
            let states = g.iter().map(|r| State::from_array(r.state)).collect();
            let inputs = g.iter().map(|r| InterfaceInput::new(r.input[0], r.input[1])).collect();
            Ok(Trajectory::new(partition, states, inputs, provenance))
        })
        .collect()
}

pub fn write_trajectories_csv<W: Write>(w: W, trajs: &[Trajectory]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "traj", "t", "delta", "omega", "e_d_prime", "e_q_prime", "i_d", "i_q", "provenance",
    ])?;
    for (k, tr) in trajs.iter().enumerate() {
        let prov = serde_json::to_value(tr.provenance)?;
        let prov = prov.as_str().unwrap_or_default().to_string();
        for n in 0..tr.states.len() {
            let s = tr.states[n].to_array();
            let y = tr.inputs[n].to_array();
            let mut row = vec![k.to_string(), tr.partition.points[n].to_string()];
            row.extend(s.iter().chain(y.iter()).map(|v| v.to_string()));
            row.push(prov.clone());
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}
