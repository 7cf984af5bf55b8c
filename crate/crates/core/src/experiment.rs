//! Config-driven pipeline steps shared by the command-line driver and the
//! acceptance suite. Every random draw comes from a stream derived from the
//! configuration's master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, Machine, Stream};
use crate::dagger::{run_dagger, DaggerOutcome};
use crate::data::{
    build_test_suite, build_training_set, convert_labels, DatasetSample, SampleSpec, SuiteKind,
    TestCase,
};
use crate::error::Result;
use crate::eval::{sensitivity_sweep, suite_error_table, verify_bound, BoundReport, ErrorTable, SweepAxis, SweepPoint};
use crate::nn::{
    train, validation_subset, DeepONetModel, FnnModel, LossHistory, OutputMode, StepPredictor,
};
use crate::rollout::{rollout_suite, Scheme};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub machine: Machine,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let machine = cfg.machine()?;
        Ok(Self { cfg, machine })
    }

    /// The same experiment under another master seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut cfg = self.cfg.clone();
        cfg.seed = seed;
        Self {
            cfg,
            machine: self.machine,
        }
    }

    pub fn sample_spec(&self, mode: OutputMode) -> SampleSpec<'_> {
        let d = &self.cfg.data;
        SampleSpec {
            procedure: d.procedure,
            mode,
            sensors: d.sensors,
            ranges: &d.ranges,
            gp: &self.machine.gp,
            grid: &self.machine.grid,
            label: d.label,
        }
    }

    /// `n` training samples labelled for `mode`. The draws do not depend on
    /// `mode`, and the first `k` samples of a larger set equal a set of size
    /// `k`.
    pub fn training_set(&self, n: usize, mode: OutputMode) -> Result<Vec<DatasetSample>> {
        let mut r = rng(self.cfg.seed_for(Stream::TrainData));
        build_training_set(n, &self.sample_spec(mode), &mut r)
    }

    pub fn suite(&self, kind: SuiteKind, n: usize) -> Result<Vec<TestCase>> {
        let stream = match kind {
            SuiteKind::GammaPerturbed => Stream::GammaSuite,
            SuiteKind::Fault => Stream::FaultSuite,
        };
        let m = &self.machine;
        build_test_suite(
            kind,
            n,
            &self.cfg.test.partition()?,
            &m.gp,
            &m.grid,
            &m.x_star,
            &self.cfg.test.suite,
            &mut rng(self.cfg.seed_for(stream)),
        )
    }

    pub fn new_deeponet(&self, mode: OutputMode) -> Result<DeepONetModel> {
        DeepONetModel::new(&self.cfg.deeponet_config(mode), &mut rng(self.cfg.seed_for(Stream::ModelInit)))
    }

    /// Trains a fresh operator network whose mode matches the labels of `data`.
    pub fn train_deeponet(&self, data: &[DatasetSample], mode: OutputMode) -> Result<(DeepONetModel, LossHistory)> {
        let mut model = self.new_deeponet(mode)?;
        let history = train(&mut model, data, &self.cfg.training_config())?;
        Ok((model, history))
    }

    /// Trains the FNN baseline from incremental-label data.
    pub fn train_fnn(&self, incremental: &[DatasetSample]) -> Result<(FnnModel, LossHistory)> {
        let fcfg = &self.cfg.model.fnn;
        let data = convert_labels(incremental, OutputMode::Incremental, fcfg.output_mode)?;
        let mut model = FnnModel::new(fcfg, &mut rng(self.cfg.seed_for(Stream::ModelInit)))?;
        let history = train(&mut model, &data, &self.cfg.training_config())?;
        Ok((model, history))
    }

    /// Samples the validation split of `data` under the training config.
    pub fn validation_split(&self, data: &[DatasetSample]) -> Vec<DatasetSample> {
        validation_subset(data, &self.cfg.training_config())
    }

    pub fn scheme(&self, mode: OutputMode) -> Scheme {
        match mode {
            OutputMode::Residual => Scheme::Residual {
                approx: self.machine.gp.with_beta(self.cfg.data.label.approx_beta),
                substeps: self.cfg.data.label.substeps,
            },
            _ => Scheme::DataDriven,
        }
    }

    /// Closed-loop rollouts of every case on the test partition.
    pub fn rollouts<M: StepPredictor + ?Sized>(&self, model: &M, cases: &[TestCase]) -> Result<Vec<Result<Trajectory>>> {
        let m = &self.machine;
        let scheme = self.scheme(model.output_mode());
        Ok(rollout_suite(model, cases, &self.cfg.test.partition()?, &scheme, &m.gp, &m.grid))
    }

    /// Error table over the non-diverged rollouts, and the divergence count.
    pub fn evaluate<M: StepPredictor + ?Sized>(&self, model: &M, cases: &[TestCase]) -> Result<(ErrorTable, usize)> {
        suite_error_table(&self.rollouts(model, cases)?, cases)
    }

    /// Residual DAgger from `data.n_dagger_initial` samples.
    pub fn dagger(&self) -> Result<DaggerOutcome<DeepONetModel>> {
        let initial = self.training_set(self.cfg.data.n_dagger_initial, OutputMode::Residual)?;
        let template = self.new_deeponet(OutputMode::Residual)?;
        let m = &self.machine;
        run_dagger(
            &initial,
            &template,
            &self.cfg.dagger_config(),
            &m.gp,
            &m.grid,
            &m.x_star,
            &mut rng(self.cfg.seed_for(Stream::Dagger)),
        )
    }

    /// Bound check of a residual model on `bound.n_rollouts` gamma cases;
    /// `validation` provides the network error estimate.
    pub fn verify_bound<M: StepPredictor + ?Sized>(&self, model: &M, validation: &[DatasetSample]) -> Result<BoundReport> {
        let cases = self.suite(SuiteKind::GammaPerturbed, self.cfg.bound.n_rollouts)?;
        let m = &self.machine;
        verify_bound(
            model,
            validation,
            &cases,
            &self.cfg.test.partition()?,
            &m.gp,
            &m.grid,
            &self.cfg.bound,
            &mut rng(self.cfg.seed_for(Stream::Bound)),
        )
    }

    fn sweep_seeds(&self) -> Vec<u64> {
        self.cfg.sweep.seed_offsets.iter().map(|o| self.cfg.seed.wrapping_add(*o)).collect()
    }

    /// Data-driven error on the gamma suite for every `sweep.n_train` size
    /// and seed.
    pub fn n_train_sweep(&self, mode: OutputMode) -> Result<Vec<SweepPoint>> {
        sensitivity_sweep(SweepAxis::NTrain, &self.cfg.sweep.n_train, &self.sweep_seeds(), |n, seed| {
            let exp = self.reseeded(seed);
            let data = exp.training_set(n, mode)?;
            let (model, _) = exp.train_deeponet(&data, mode)?;
            let cases = exp.suite(SuiteKind::GammaPerturbed, exp.cfg.test.n_gamma)?;
            Ok(exp.evaluate(&model, &cases)?.0)
        })
    }

    /// Fault-suite error of the DAgger snapshot after each requested
    /// iteration count, one DAgger run per seed.
    pub fn dagger_sweep(&self) -> Result<Vec<SweepPoint>> {
        let iters = &self.cfg.sweep.dagger_iters;
        let mut points = Vec::new();
        for seed in self.sweep_seeds() {
            let exp = self.reseeded(seed);
            let mut cfg = exp.cfg.clone();
            cfg.dagger.n_iter = iters.iter().copied().max().unwrap_or(1).max(1);
            let exp = Experiment { cfg, ..exp };
            let out = exp.dagger()?;
            let cases = exp.suite(SuiteKind::Fault, exp.cfg.test.n_fault)?;
            for &k in iters.iter().filter(|&&k| k >= 1) {
                points.push(SweepPoint {
                    axis: SweepAxis::DaggerIters,
                    value: k,
                    seed,
                    table: exp.evaluate(&out.snapshots[k - 1], &cases)?.0,
                });
            }
        }
        Ok(points)
    }
}
