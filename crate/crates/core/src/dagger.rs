//! Dataset aggregation: retrain on the states the model itself visits in
//! closed loop, labelled by the true solution operator.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_label, DatasetSample, Interval, LabelConfig};
use crate::dynamics::{GeneratorParams, GridParams, InterfaceInput, State};
use crate::error::{Error, Result};
use crate::nn::{fine_tune, train, LossHistory, OutputMode, StepPredictor, Trainable, TrainingConfig};
use crate::rollout::{rollout_partial, InputProvider, PartialRollout, Scheme};
use crate::trajectory::TimePartition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DaggerConfig {
    pub n_iter: usize,
    pub n_rollout: usize,
    /// Rollout horizon and step, `[0, t_end]` with uniform `h`.
    pub t_end: f64,
    pub h: f64,
    /// Rollouts start at `(delta*, gamma * omega*, e_d'*, e_q'*)`.
    pub gamma: Interval,
    pub training: TrainingConfig,
    /// Fine-tune the previous iterate instead of retraining from the template.
    pub warm_start: bool,
    /// Epochs per warm-start iteration; half of `training.epochs` when unset.
    pub fine_tune_epochs: Option<usize>,
    pub label: LabelConfig,
}

impl Default for DaggerConfig {
    fn default() -> Self {
        Self {
            n_iter: 5,
            n_rollout: 10,
            t_end: 5.0,
            h: 0.05,
            gamma: Interval::new(0.2, 1.5),
            training: TrainingConfig::default(),
            warm_start: true,
            fine_tune_epochs: None,
            label: LabelConfig::default(),
        }
    }
}

impl DaggerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 || self.n_rollout == 0 {
            return Err(Error::InvalidParameter("dagger: n_iter and n_rollout must be >= 1".into()));
        }
        if !(self.gamma.lo <= self.gamma.hi) {
            return Err(Error::InvalidParameter("dagger: empty gamma interval".into()));
        }
        if self.fine_tune_epochs == Some(0) {
            return Err(Error::InvalidParameter("dagger: fine_tune_epochs must be >= 1".into()));
        }
        self.training.validate()?;
        self.partition().map(|_| ())
    }

    pub fn partition(&self) -> Result<TimePartition> {
        TimePartition::uniform(self.t_end, self.h)
    }

    fn fine_tune_config(&self) -> TrainingConfig {
        let mut cfg = self.training.clone();
        cfg.epochs = self
            .fine_tune_epochs
            .unwrap_or_else(|| (self.training.epochs / 2).max(1));
        cfg
    }
}

/// One input tuple visited by a rollout: state, interface input and step.
pub type Visited = (State, InterfaceInput, f64);

/// One tuple per executed step of a closed-loop rollout, carrying the
/// rollout's own states. A diverged rollout contributes the steps before
/// the divergence.
pub fn collect_visited(rollout: &PartialRollout, partition: &TimePartition) -> Vec<Visited> {
    let steps: Vec<f64> = partition.steps().collect();
    let executed = (rollout.states.len() - 1).min(steps.len());
    (0..executed)
        .map(|n| (rollout.states[n], rollout.inputs[n], steps[n]))
        .collect()
}

/// Labels visited tuples with the true operator (single sensor at the step
/// start).
pub fn label_visited(
    visited: &[Visited],
    mode: OutputMode,
    gp: &GeneratorParams,
    cfg: &LabelConfig,
) -> Result<Vec<DatasetSample>> {
    visited
        .par_iter()
        .map(|&(x, y, h)| {
            let label = make_label(&x, &[y], &[0.0], h, mode, gp, cfg)?;
            Ok(DatasetSample {
                x,
                y_sensors: vec![y],
                sensor_locs: vec![0.0],
                h,
                label,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DaggerOutcome<M> {
    pub model: M,
    /// The model after each iteration's training phase.
    pub snapshots: Vec<M>,
    pub dataset: Vec<DatasetSample>,
    /// Aggregate size used for training in each iteration.
    pub train_sizes: Vec<usize>,
    pub histories: Vec<LossHistory>,
    /// Rollouts that diverged during each iteration's collection pass.
    pub diverged: Vec<usize>,
}

/// Runs `cfg.n_iter` rounds of train → closed-loop rollouts → label →
/// aggregate, starting from `initial` and the untrained `template`.
#[allow(clippy::too_many_arguments)]
pub fn run_dagger<M, R>(
    initial: &[DatasetSample],
    template: &M,
    cfg: &DaggerConfig,
    gp: &GeneratorParams,
    grid: &GridParams,
    x_star: &State,
    rng: &mut R,
) -> Result<DaggerOutcome<M>>
where
    M: Trainable + StepPredictor + Clone,
    R: Rng + ?Sized,
{
    if initial.is_empty() {
        return Err(Error::Empty("initial DAgger dataset"));
    }
    cfg.validate()?;
    let partition = cfg.partition()?;
    let mode = template.output_mode();
    let scheme = match mode {
        OutputMode::Residual => Scheme::Residual {
            approx: gp.with_beta(cfg.label.approx_beta),
            substeps: cfg.label.substeps,
        },
        _ => Scheme::DataDriven,
    };
    let provider = InputProvider::ClosedLoop {
        gp,
        grid,
        faults: &[],
    };

    let mut dataset = initial.to_vec();
    let mut model = template.clone();
    let mut out = DaggerOutcome {
        model: template.clone(),
        snapshots: Vec::with_capacity(cfg.n_iter),
        dataset: Vec::new(),
        train_sizes: Vec::with_capacity(cfg.n_iter),
        histories: Vec::with_capacity(cfg.n_iter),
        diverged: Vec::with_capacity(cfg.n_iter),
    };
    for iter in 0..cfg.n_iter {
        let history = if iter == 0 || !cfg.warm_start {
            model = template.clone();
            train(&mut model, &dataset, &cfg.training)?
        } else {
            fine_tune(&mut model, &dataset, &cfg.fine_tune_config())?
        };
        out.train_sizes.push(dataset.len());
        out.histories.push(history);
        out.snapshots.push(model.clone());

        let starts: Vec<State> = (0..cfg.n_rollout)
            .map(|_| {
                let mut x0 = *x_star;
                x0.omega *= rng.random_range(cfg.gamma.lo..=cfg.gamma.hi);
                x0
            })
            .collect();
        let rollouts = starts
            .par_iter()
            .map(|x0| rollout_partial(&model, x0, &partition, &provider, &scheme))
            .collect::<Result<Vec<_>>>()?;
        let visited: Vec<Visited> = rollouts
            .iter()
            .flat_map(|r| collect_visited(r, &partition))
            .collect();
        let n_div = rollouts.iter().filter(|r| r.diverged_at.is_some()).count();
        out.diverged.push(n_div);
        log::info!(
            "dagger iteration {}: trained on {}, collected {} tuples, {} diverged",
            iter + 1,
            dataset.len(),
            visited.len(),
            n_div
        );
        dataset.extend(label_visited(&visited, mode, gp, &cfg.label)?);
    }
    out.model = model;
    out.dataset = dataset;
    Ok(out)
}
