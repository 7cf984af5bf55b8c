//! Experiment configuration (TOML). Every section is optional except the
//! top-level `seed`; omitted sections take the shipped defaults.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::dagger::DaggerConfig;
use crate::data::{LabelConfig, Procedure, SamplingRanges, SensorSpec, SuiteConfig};
use crate::dynamics::{
    back_solve_operating_point, GeneratorParams, GridParams, OperatingPoint, State,
};
use crate::error::{Error, Result};
use crate::eval::BoundConfig;
use crate::nn::{DeepOnetConfig, FnnConfig, OutputMode, TrainingConfig};
use crate::trajectory::TimePartition;

/// The shipped defaults, with comments on every key.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../../../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub machine: MachineSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub test: TestSection,
    #[serde(default)]
    pub dagger: DaggerConfig,
    #[serde(default)]
    pub bound: BoundConfig,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MachineSection {
    /// `e_fld` and `t_m` are overwritten by the operating-point back-solve.
    pub generator: GeneratorParams,
    pub grid: GridParams,
    pub operating_point: OperatingPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_train: usize,
    /// Size of the initial supervised dataset of a DAgger run.
    pub n_dagger_initial: usize,
    pub procedure: Procedure,
    pub sensors: SensorSpec,
    pub ranges: SamplingRanges,
    pub label: LabelConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_dagger_initial: 100,
            procedure: Procedure::StateInput,
            sensors: SensorSpec::singleton(),
            ranges: SamplingRanges::default(),
            label: LabelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Operator network; its `output_mode` is the data-driven default
    /// (`incremental`) and is replaced by `residual` for residual runs.
    pub deeponet: DeepOnetConfig,
    pub fnn: FnnConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            deeponet: DeepOnetConfig::new(OutputMode::Incremental),
            fnn: FnnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestSection {
    pub n_gamma: usize,
    pub n_fault: usize,
    pub t_end: f64,
    pub h: f64,
    pub suite: SuiteConfig,
}

impl Default for TestSection {
    fn default() -> Self {
        Self {
            n_gamma: 500,
            n_fault: 500,
            t_end: 10.0,
            h: 0.05,
            suite: SuiteConfig::default(),
        }
    }
}

impl TestSection {
    pub fn partition(&self) -> Result<TimePartition> {
        TimePartition::uniform(self.t_end, self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub n_train: Vec<usize>,
    pub dagger_iters: Vec<usize>,
    /// Offsets added to the master seed, one run per entry.
    pub seed_offsets: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            n_train: vec![100, 500, 1000, 2000, 4000],
            dagger_iters: vec![1, 2, 3, 4, 5],
            seed_offsets: vec![0, 1, 2],
        }
    }
}

/// A generator with its back-solved equilibrium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Machine {
    pub gp: GeneratorParams,
    pub grid: GridParams,
    pub x_star: State,
}

impl Machine {
    pub fn new(generator: &GeneratorParams, grid: &GridParams, op: OperatingPoint) -> Result<Self> {
        let (gp, x_star) = back_solve_operating_point(generator, grid, op)?;
        Ok(Self {
            gp,
            grid: *grid,
            x_star,
        })
    }
}

impl Default for Machine {
    fn default() -> Self {
        Self::new(&GeneratorParams::default(), &GridParams::default(), OperatingPoint::default())
            .expect("default operating point is feasible")
    }
}

/// Named random streams derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    TrainData,
    ModelInit,
    Training,
    GammaSuite,
    FaultSuite,
    Dagger,
    Bound,
}

/// SplitMix64 finalizer of `seed` and the stream tag.
pub fn derive_seed(seed: u64, stream: Stream) -> u64 {
    let mut z = seed ^ (stream as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ExperimentConfig {
    /// Defaults with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            output: OutputSection::default(),
            machine: MachineSection::default(),
            data: DataSection::default(),
            model: ModelSection::default(),
            training: TrainingConfig::default(),
            test: TestSection::default(),
            dagger: DaggerConfig::default(),
            bound: BoundConfig::default(),
            sweep: SweepSection::default(),
        }
    }

    /// Parses and validates; errors carry the line and column of the
    /// offending key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.machine.generator.validate()?;
        self.machine.grid.validate()?;
        self.data.ranges.validate()?;
        self.data.sensors.validate()?;
        self.training.validate()?;
        self.dagger.validate()?;
        self.test.partition()?;
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.training.seed != 0 || self.dagger.training.seed != 0 {
            return bad("training seeds are derived from the top-level seed; remove `training.seed`");
        }
        if self.data.n_train < 10 || self.data.n_dagger_initial < 10 {
            return bad("data.n_train and data.n_dagger_initial must be >= 10");
        }
        if self.test.h > self.data.ranges.h_max {
            return bad("test.h exceeds the largest training step data.ranges.h_max");
        }
        if self.bound.n_rollouts == 0 || self.bound.n_probe < 2 {
            return bad("bound.n_rollouts >= 1 and bound.n_probe >= 2 required");
        }
        Ok(())
    }

    pub fn machine(&self) -> Result<Machine> {
        let m = &self.machine;
        Machine::new(&m.generator, &m.grid, m.operating_point)
    }

    pub fn seed_for(&self, stream: Stream) -> u64 {
        derive_seed(self.seed, stream)
    }

    /// The training configuration with its derived seed.
    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            seed: self.seed_for(Stream::Training),
            ..self.training.clone()
        }
    }

    pub fn deeponet_config(&self, mode: OutputMode) -> DeepOnetConfig {
        DeepOnetConfig {
            output_mode: mode,
            n_sensors: self.data.sensors.m,
            ..self.model.deeponet.clone()
        }
    }

    pub fn dagger_config(&self) -> DaggerConfig {
        let mut d = self.dagger.clone();
        d.training.seed = self.seed_for(Stream::Training);
        d
    }
}
