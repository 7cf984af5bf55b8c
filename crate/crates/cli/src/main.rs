//! `genop`: config-driven experiment driver.
//!
//! Every command reads one TOML config (`--config`, else `$GENOP_CONFIG`,
//! else the built-in defaults), writes under the output directory and
//! records a `manifest-<command>.json` with artifact checksums.

mod artifacts;
mod manifest;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use genop_core::config::{ExperimentConfig, DEFAULT_CONFIG_TOML};
use genop_core::data::{write_dataset, DatasetHeader, SuiteKind};
use genop_core::eval::{error_table, write_sweep_csv, ErrorTable, SweepAxis};
use genop_core::experiment::Experiment;
use genop_core::nn::io::{save_deeponet, save_fnn};
use genop_core::nn::{LossHistory, OutputMode};
use genop_core::trajectory::{write_trajectories_csv, write_trajectories_jsonl, Quantity, Trajectory};
use genop_core::Error as CoreError;
use log::{info, warn};

use artifacts::*;
use manifest::Recorder;

#[derive(Parser, Debug)]
#[command(name = "genop", version, about = "Operator-network surrogates of a grid-connected generator")]
struct Cli {
    /// Experiment config (TOML). Defaults to $GENOP_CONFIG, then the built-in defaults.
    #[arg(long, global = true, env = "GENOP_CONFIG")]
    config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    /// Operator network predicting the state increment.
    Incremental,
    /// Operator network predicting the state.
    Full,
    /// Operator network correcting a reduced-fidelity step.
    Residual,
    /// Fully connected baseline.
    Fnn,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Suite {
    Gamma,
    Fault,
}

impl From<Suite> for SuiteKind {
    fn from(s: Suite) -> Self {
        match s {
            Suite::Gamma => SuiteKind::GammaPerturbed,
            Suite::Fault => SuiteKind::Fault,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Axis {
    NTrain,
    DaggerIters,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the incremental and residual training sets and both test suites.
    Generate {
        /// Skip the test suites.
        #[arg(long)]
        no_suites: bool,
    },
    /// Train a model on a generated dataset.
    Train {
        #[arg(long, value_enum)]
        mode: ModelKind,
        /// Dataset file; defaults to the matching file under <out>/data.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Closed-loop rollouts of a model on a test suite.
    Rollout {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "gamma")]
        suite: Suite,
        /// Output name under <out>/rollouts; defaults to <model stem>_<suite>.
        #[arg(long)]
        name: Option<String>,
    },
    /// Error table of a rollout file against its suite's truth.
    Evaluate {
        #[arg(long)]
        rollouts: PathBuf,
        /// Truth trajectories; defaults to the suite recorded with the rollouts.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Residual DAgger training from the configured initial set.
    Dagger,
    /// Check the cumulative error bound for a residual model.
    Bound {
        #[arg(long)]
        model: PathBuf,
        /// Residual dataset whose validation split estimates the network error.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Sensitivity sweep over training-set size or DAgger iterations.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
    },
    /// Per-quantity CSVs (t, truth, prediction) for plotting.
    ExportPlots {
        #[arg(long)]
        rollouts: PathBuf,
        /// Suite case indices to export.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        cases: Vec<usize>,
    },
    /// Print the effective config as TOML.
    Config,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Train { .. } => "train",
            Command::Rollout { .. } => "rollout",
            Command::Evaluate { .. } => "evaluate",
            Command::Dagger => "dagger",
            Command::Bound { .. } => "bound",
            Command::Sweep { .. } => "sweep",
            Command::ExportPlots { .. } => "export-plots",
            Command::Config => "config",
        }
    }
}

/// Config could not be read or is inconsistent.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A command ran but a checked contract failed (e.g. the error bound).
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

struct Ctx {
    exp: Experiment,
    source: String,
    rec: Recorder,
}

impl Ctx {
    fn out(&self) -> &Path {
        &self.rec.out
    }

    fn finish(self, command: &str) -> Result<()> {
        let toml = self.exp.cfg.to_toml_string()?;
        let mut anon = self.exp.cfg.clone();
        anon.output.dir = PathBuf::new();
        let hash = manifest::sha256_hex(anon.to_toml_string()?.as_bytes());
        let path = self.rec.finish(command, self.exp.cfg.seed, self.source, toml, hash)?;
        info!("wrote {}", path.display());
        Ok(())
    }

    fn write_history(&mut self, rel: &str, h: &LossHistory) -> Result<()> {
        let p = self.rec.path(rel)?;
        h.write_csv(BufWriter::new(File::create(&p)?))?;
        self.rec.record(p);
        Ok(())
    }

    fn write_table(&mut self, stem: &str, t: &ErrorTable) -> Result<()> {
        let p = self.rec.path(&format!("{stem}.csv"))?;
        t.write_csv(BufWriter::new(File::create(&p)?))?;
        self.rec.record(p);
        self.rec.write(&format!("{stem}.json"), t.to_json()?.as_bytes())?;
        Ok(())
    }

    fn write_trajectories(&mut self, stem: &str, trajs: &[Trajectory]) -> Result<PathBuf> {
        let p = self.rec.path(&format!("{stem}.jsonl"))?;
        write_trajectories_jsonl(BufWriter::new(File::create(&p)?), trajs)?;
        self.rec.record(p.clone());
        let c = self.rec.path(&format!("{stem}.csv"))?;
        write_trajectories_csv(BufWriter::new(File::create(&c)?), trajs)?;
        self.rec.record(c);
        Ok(p)
    }
}

fn load_config(cli: &Cli) -> Result<(ExperimentConfig, String)> {
    let (mut cfg, source) = match &cli.config {
        Some(p) => (
            ExperimentConfig::from_file(p).map_err(|e| ConfigError(e.to_string()))?,
            p.display().to_string(),
        ),
        None => (
            ExperimentConfig::from_toml_str(DEFAULT_CONFIG_TOML).map_err(|e| ConfigError(e.to_string()))?,
            "built-in defaults".to_string(),
        ),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok((cfg, source))
}

fn output_mode(kind: ModelKind) -> OutputMode {
    match kind {
        ModelKind::Full => OutputMode::Full,
        ModelKind::Residual => OutputMode::Residual,
        ModelKind::Incremental | ModelKind::Fnn => OutputMode::Incremental,
    }
}

fn kind_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Fnn => "fnn",
        k => mode_name(output_mode(k)),
    }
}

fn cmd_generate(ctx: &mut Ctx, no_suites: bool) -> Result<()> {
    let cfg = ctx.exp.cfg.clone();
    for mode in [OutputMode::Incremental, OutputMode::Residual] {
        let data = ctx.exp.training_set(cfg.data.n_train, mode)?;
        let header = DatasetHeader {
            n_samples: data.len(),
            procedure: cfg.data.procedure,
            mode,
            sensors: cfg.data.sensors,
            ranges: cfg.data.ranges,
            label: cfg.data.label,
            seed: cfg.seed,
        };
        let p = ctx.rec.path(&dataset_rel(mode))?;
        write_dataset(BufWriter::new(File::create(&p)?), &header, &data)?;
        info!("{} {} samples -> {}", data.len(), mode_name(mode), p.display());
        ctx.rec.record(p);
    }
    if !no_suites {
        for (kind, n) in [(SuiteKind::GammaPerturbed, cfg.test.n_gamma), (SuiteKind::Fault, cfg.test.n_fault)] {
            let cases = ctx.exp.suite(kind, n)?;
            let truths: Vec<Trajectory> = cases.iter().map(|c| c.truth.clone()).collect();
            let p = ctx.rec.path(&suite_truth_rel(kind))?;
            write_trajectories_jsonl(BufWriter::new(File::create(&p)?), &truths)?;
            ctx.rec.record(p);
            let m = ctx.rec.path(&suite_cases_rel(kind))?;
            write_json(&m, &case_meta(&cases))?;
            ctx.rec.record(m);
            info!("{n} {} test trajectories", suite_name(kind));
        }
    }
    Ok(())
}

fn cmd_train(ctx: &mut Ctx, kind: ModelKind, data: Option<PathBuf>) -> Result<()> {
    let mode = output_mode(kind);
    let path = data.unwrap_or_else(|| ctx.out().join(dataset_rel(if mode == OutputMode::Full { OutputMode::Incremental } else { mode })));
    let (header, samples) = load_dataset(&path)?;
    let name = kind_name(kind);
    let samples = if mode == OutputMode::Full {
        genop_core::data::convert_labels(&samples, header.mode, OutputMode::Full)?
    } else {
        if header.mode != mode {
            bail!("{} holds {} labels; `--mode {name}` needs {} labels", path.display(), mode_name(header.mode), mode_name(mode));
        }
        samples
    };
    info!("training {name} on {} samples from {}", samples.len(), path.display());
    let model_rel = format!("models/{name}.json");
    let history = match kind {
        ModelKind::Fnn => {
            let (m, h) = ctx.exp.train_fnn(&samples)?;
            let p = ctx.rec.path(&model_rel)?;
            save_fnn(&m, &p)?;
            ctx.rec.record(p);
            h
        }
        _ => match ctx.exp.train_deeponet(&samples, mode) {
            Ok((m, h)) => {
                let p = ctx.rec.path(&model_rel)?;
                save_deeponet(&m, &p)?;
                ctx.rec.record(p);
                h
            }
            Err(CoreError::TrainingDiverged { epoch, checkpoint }) => {
                let mut m = ctx.exp.new_deeponet(mode)?;
                m.set_params(checkpoint)?;
                let p = ctx.rec.path(&format!("models/{name}_checkpoint.json"))?;
                save_deeponet(&m, &p)?;
                bail!("training diverged at epoch {epoch}; last good parameters saved to {}", p.display());
            }
            Err(e) => return Err(e.into()),
        },
    };
    if let Some((epoch, v)) = history.best_validation() {
        info!("best validation loss {v:.4e} at epoch {}", epoch + 1);
    }
    ctx.write_history(&format!("models/{name}_loss.csv"), &history)
}

fn cmd_rollout(ctx: &mut Ctx, model: &Path, suite: Suite, name: Option<String>) -> Result<()> {
    let kind = SuiteKind::from(suite);
    let m = AnyModel::load(model)?;
    let cases = load_suite(ctx.out(), kind)?;
    let results = ctx.exp.rollouts(m.as_predictor(), &cases)?;
    let mut index = RolloutIndex {
        suite: kind,
        n_cases: cases.len(),
        completed: Vec::new(),
        diverged: Vec::new(),
    };
    let mut trajs = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => {
                index.completed.push(i);
                trajs.push(t);
            }
            Err(e) => {
                warn!("case {i}: {e}");
                index.diverged.push(Diverged { case: i, reason: e.to_string() });
            }
        }
    }
    let stem = name.unwrap_or_else(|| {
        let s = model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
        format!("{s}_{}", suite_name(kind))
    });
    let p = ctx.write_trajectories(&format!("rollouts/{stem}"), &trajs)?;
    let ip = index_path(&p);
    write_json(&ip, &index)?;
    ctx.rec.record(ip);
    info!("{} of {} rollouts completed -> {}", trajs.len(), cases.len(), p.display());
    Ok(())
}

fn cmd_evaluate(ctx: &mut Ctx, rollouts: &Path, truth: Option<PathBuf>) -> Result<()> {
    let (index, preds) = load_rollouts(rollouts)?;
    let truths = match truth {
        Some(p) => genop_core::trajectory::read_trajectories_jsonl(std::io::BufReader::new(File::open(&p)?))?,
        None => load_suite(ctx.out(), index.suite)?.into_iter().map(|c| c.truth).collect(),
    };
    if truths.len() != index.n_cases {
        bail!("rollouts cover {} cases but the truth set holds {}", index.n_cases, truths.len());
    }
    let matched: Vec<Trajectory> = index.completed.iter().map(|&i| truths[i].clone()).collect();
    let table = error_table(&preds, &matched)?;
    let stem = rollouts.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "rollouts".into());
    ctx.write_table(&format!("eval/{stem}_errors"), &table)?;
    println!("{stem}: {} trajectories, {} diverged", table.n_trajectories, index.diverged.len());
    println!("{:<10} {:>12} {:>12}", "quantity", "mean L2 %", "std L2 %");
    for q in Quantity::ALL {
        println!("{:<10} {:>12.4} {:>12.4}", q.name(), table.mean_of(q), table.std_of(q));
    }
    Ok(())
}

fn cmd_dagger(ctx: &mut Ctx) -> Result<()> {
    let out = ctx.exp.dagger()?;
    for (k, snap) in out.snapshots.iter().enumerate() {
        let p = ctx.rec.path(&format!("dagger/iter_{}.json", k + 1))?;
        save_deeponet(snap, &p)?;
        ctx.rec.record(p);
        ctx.write_history(&format!("dagger/iter_{}_loss.csv", k + 1), &out.histories[k])?;
    }
    let p = ctx.rec.path("dagger/final.json")?;
    save_deeponet(&out.model, &p)?;
    ctx.rec.record(p);

    let cfg = &ctx.exp.cfg;
    let header = DatasetHeader {
        n_samples: out.dataset.len(),
        procedure: cfg.data.procedure,
        mode: OutputMode::Residual,
        sensors: cfg.data.sensors,
        ranges: cfg.data.ranges,
        label: cfg.data.label,
        seed: cfg.seed,
    };
    let p = ctx.rec.path("dagger/aggregate.jsonl")?;
    write_dataset(BufWriter::new(File::create(&p)?), &header, &out.dataset)?;
    ctx.rec.record(p);

    #[derive(serde::Serialize)]
    struct Iteration {
        iteration: usize,
        train_size: usize,
        best_validation: Option<f64>,
        diverged_rollouts: usize,
        model: String,
    }
    let iters: Vec<Iteration> = (0..out.snapshots.len())
        .map(|k| Iteration {
            iteration: k + 1,
            train_size: out.train_sizes[k],
            best_validation: out.histories[k].best_validation().map(|(_, v)| v),
            diverged_rollouts: out.diverged[k],
            model: format!("iter_{}.json", k + 1),
        })
        .collect();
    for it in &iters {
        info!("iteration {}: {} samples, best validation {:?}, {} diverged", it.iteration, it.train_size, it.best_validation, it.diverged_rollouts);
    }
    let p = ctx.rec.path("dagger/iterations.json")?;
    write_json(&p, &iters)?;
    ctx.rec.record(p);
    Ok(())
}

fn cmd_bound(ctx: &mut Ctx, model: &Path, data: Option<PathBuf>) -> Result<()> {
    let m = match AnyModel::load(model)? {
        AnyModel::DeepOnet(m) if m.output_mode() == OutputMode::Residual => m,
        _ => bail!("{}: the bound applies to residual operator networks only", model.display()),
    };
    let path = data.unwrap_or_else(|| ctx.out().join(dataset_rel(OutputMode::Residual)));
    let (header, samples) = load_dataset(&path)?;
    if header.mode != OutputMode::Residual {
        bail!("{} must hold residual labels", path.display());
    }
    let validation = ctx.exp.validation_split(&samples);
    let report = ctx.exp.verify_bound(&m, &validation)?;
    let p = ctx.rec.path("bound/report.json")?;
    write_json(&p, &report)?;
    ctx.rec.record(p);

    let csv_path = ctx.rec.path("bound/bound.csv")?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&csv_path)?));
    let mut header = vec!["step".to_string(), "t".into(), "bound".into()];
    header.extend((0..report.rollouts.len()).map(|i| format!("error_{i}")));
    w.write_record(&header)?;
    let h = report.constants.h;
    for (n, b) in report.bound.iter().enumerate() {
        let mut row = vec![n.to_string(), (n as f64 * h).to_string(), b.to_string()];
        row.extend(report.rollouts.iter().map(|r| r.errors.get(n).map(|e| e.to_string()).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    drop(w);
    ctx.rec.record(csv_path);

    let c = report.constants;
    println!("L {:.4}  L_phi {:.4}  eps {:.3e}  kappa {:.3e}  h {}  N {}", c.l, c.l_phi, c.eps, c.kappa, c.h, c.n);
    println!("final bound {:.4e}; {}/{} rollouts within the bound", report.bound.last().copied().unwrap_or(0.0), report.n_satisfied, report.rollouts.len());
    if !report.satisfied {
        return Err(CheckFailed(format!("{} rollouts exceeded the bound", report.rollouts.len() - report.n_satisfied)).into());
    }
    Ok(())
}

fn cmd_sweep(ctx: &mut Ctx, axis: Axis) -> Result<()> {
    let (points, name) = match axis {
        Axis::NTrain => (ctx.exp.n_train_sweep(OutputMode::Incremental)?, "n_train"),
        Axis::DaggerIters => (ctx.exp.dagger_sweep()?, "dagger_iters"),
    };
    let p = ctx.rec.path(&format!("sweep/{name}.csv"))?;
    write_sweep_csv(&points, BufWriter::new(File::create(&p)?))?;
    ctx.rec.record(p);
    let j = ctx.rec.path(&format!("sweep/{name}.json"))?;
    write_json(&j, &points)?;
    ctx.rec.record(j);
    for pt in &points {
        let axis = if pt.axis == SweepAxis::NTrain { "n_train" } else { "iterations" };
        println!("{axis} {:>5} seed {:>20}: delta {:.4}%", pt.value, pt.seed, pt.table.mean_of(Quantity::Delta));
    }
    Ok(())
}

fn cmd_export_plots(ctx: &mut Ctx, rollouts: &Path, cases: &[usize]) -> Result<()> {
    let (index, preds) = load_rollouts(rollouts)?;
    let suite = load_suite(ctx.out(), index.suite)?;
    let stem = rollouts.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "rollouts".into());
    for &case in cases {
        if case >= suite.len() {
            bail!("case {case} out of range (suite has {})", suite.len());
        }
        let Some(k) = index.completed.iter().position(|&c| c == case) else {
            warn!("case {case} diverged; no prediction to export");
            continue;
        };
        let (pred, truth) = (&preds[k], &suite[case].truth);
        for q in Quantity::ALL {
            let p = ctx.rec.path(&format!("plots/{stem}/case{case}_{}.csv", q.name()))?;
            let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&p)?));
            w.write_record(["t", "truth", "prediction"])?;
            let tv = truth.series(q);
            let pv = pred.series(q);
            for ((t, a), b) in truth.times().iter().zip(&tv).zip(&pv) {
                w.write_record([t.to_string(), a.to_string(), b.to_string()])?;
            }
            w.flush()?;
            drop(w);
            ctx.rec.record(p);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (cfg, source) = load_config(&cli)?;
    if let Command::Config = cli.command {
        print!("{}", cfg.to_toml_string()?);
        return Ok(());
    }
    let command = cli.command.name();
    let rec = Recorder::new(&cfg.output.dir)?;
    let exp = Experiment::new(cfg).map_err(|e| ConfigError(e.to_string()))?;
    let mut ctx = Ctx { exp, source, rec };
    let result = match &cli.command {
        Command::Generate { no_suites } => cmd_generate(&mut ctx, *no_suites),
        Command::Train { mode, data } => cmd_train(&mut ctx, *mode, data.clone()),
        Command::Rollout { model, suite, name } => cmd_rollout(&mut ctx, model, *suite, name.clone()),
        Command::Evaluate { rollouts, truth } => cmd_evaluate(&mut ctx, rollouts, truth.clone()),
        Command::Dagger => cmd_dagger(&mut ctx),
        Command::Bound { model, data } => cmd_bound(&mut ctx, model, data.clone()),
        Command::Sweep { axis } => cmd_sweep(&mut ctx, *axis),
        Command::ExportPlots { rollouts, cases } => cmd_export_plots(&mut ctx, rollouts, cases),
        Command::Config => unreachable!(),
    };
    // Artifacts of a failed check are still recorded.
    match result {
        Err(e) if e.downcast_ref::<CheckFailed>().is_some() => {
            ctx.finish(command)?;
            Err(e)
        }
        Err(e) => Err(e),
        Ok(()) => ctx.finish(command),
    }
    .context(format!("genop {command}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<ConfigError>()) {
                ExitCode::from(2)
            } else if e.chain().any(|c| c.is::<CheckFailed>()) {
                ExitCode::from(3)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
