//! On-disk layout of suites, models and rollouts.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{bail, Context, Result};
use genop_core::data::{read_dataset, DatasetHeader, DatasetSample, SuiteKind, TestCase};
use genop_core::dynamics::{FaultEvent, State};
use genop_core::nn::io::{deeponet_from_str, load_fnn};
use genop_core::nn::{DeepONetModel, FnnModel, OutputMode, StepPredictor};
use genop_core::trajectory::{read_trajectories_jsonl, Trajectory};
use serde::{Deserialize, Serialize};

pub fn suite_name(kind: SuiteKind) -> &'static str {
    match kind {
        SuiteKind::GammaPerturbed => "gamma",
        SuiteKind::Fault => "fault",
    }
}

pub fn dataset_rel(mode: OutputMode) -> String {
    format!("data/train_{}.jsonl", mode_name(mode))
}

pub fn suite_truth_rel(kind: SuiteKind) -> String {
    format!("data/{}_truth.jsonl", suite_name(kind))
}

pub fn suite_cases_rel(kind: SuiteKind) -> String {
    format!("data/{}_cases.json", suite_name(kind))
}

pub fn mode_name(mode: OutputMode) -> &'static str {
    match mode {
        OutputMode::Full => "full",
        OutputMode::Incremental => "incremental",
        OutputMode::Residual => "residual",
    }
}

/// Everything about a test case except its truth trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseMeta {
    pub x0: State,
    pub parameter: f64,
    pub faults: Vec<FaultEvent>,
}

pub fn case_meta(cases: &[TestCase]) -> Vec<CaseMeta> {
    cases
        .iter()
        .map(|c| CaseMeta {
            x0: c.x0,
            parameter: c.parameter,
            faults: c.faults.clone(),
        })
        .collect()
}

pub fn load_suite(out: &Path, kind: SuiteKind) -> Result<Vec<TestCase>> {
    let truth_path = out.join(suite_truth_rel(kind));
    let meta_path = out.join(suite_cases_rel(kind));
    let truths = read_trajectories_jsonl(BufReader::new(
        File::open(&truth_path).with_context(|| format!("opening {} (run `genop generate` first)", truth_path.display()))?,
    ))
    .with_context(|| format!("reading {}", truth_path.display()))?;
    let meta: Vec<CaseMeta> = serde_json::from_reader(BufReader::new(
        File::open(&meta_path).with_context(|| format!("opening {}", meta_path.display()))?,
    ))
    .with_context(|| format!("reading {}", meta_path.display()))?;
    if meta.len() != truths.len() {
        bail!("{} lists {} cases but {} holds {} trajectories", meta_path.display(), meta.len(), truth_path.display(), truths.len());
    }
    Ok(meta
        .into_iter()
        .zip(truths)
        .map(|(m, truth)| TestCase {
            x0: m.x0,
            parameter: m.parameter,
            faults: m.faults,
            truth,
        })
        .collect())
}

pub fn load_dataset(path: &Path) -> Result<(DatasetHeader, Vec<DatasetSample>)> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_dataset(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

/// A model file of either network family.
#[allow(clippy::large_enum_variant)]
pub enum AnyModel {
    DeepOnet(DeepONetModel),
    Fnn(FnnModel),
}

impl AnyModel {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        #[derive(Deserialize)]
        struct Tag {
            format: String,
        }
        let tag: Tag = serde_json::from_str(&text).with_context(|| format!("{} is not a model file", path.display()))?;
        match tag.format.as_str() {
            "genop-deeponet" => Ok(Self::DeepOnet(deeponet_from_str(&text).with_context(|| format!("loading {}", path.display()))?)),
            "genop-fnn" => Ok(Self::Fnn(load_fnn(path).with_context(|| format!("loading {}", path.display()))?)),
            other => bail!("{}: unknown model format {other:?}", path.display()),
        }
    }

    pub fn as_predictor(&self) -> &dyn StepPredictor {
        match self {
            Self::DeepOnet(m) => m,
            Self::Fnn(m) => m,
        }
    }
}

/// Completed rollouts are stored as trajectory JSON-lines; this sidecar maps
/// them back to suite cases and records divergences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutIndex {
    pub suite: SuiteKind,
    pub n_cases: usize,
    /// Case index of each stored trajectory, in file order.
    pub completed: Vec<usize>,
    pub diverged: Vec<Diverged>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diverged {
    pub case: usize,
    pub reason: String,
}

pub fn index_path(rollouts: &Path) -> std::path::PathBuf {
    rollouts.with_extension("index.json")
}

pub fn load_rollouts(path: &Path) -> Result<(RolloutIndex, Vec<Trajectory>)> {
    let trajs = read_trajectories_jsonl(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
        .with_context(|| format!("reading {}", path.display()))?;
    let ip = index_path(path);
    let index: RolloutIndex = serde_json::from_reader(BufReader::new(File::open(&ip).with_context(|| format!("opening {}", ip.display()))?))
        .with_context(|| format!("reading {}", ip.display()))?;
    if index.completed.len() != trajs.len() {
        bail!("{} lists {} completed rollouts but the file holds {}", ip.display(), index.completed.len(), trajs.len());
    }
    Ok((index, trajs))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(w, value)?;
    Ok(())
}
