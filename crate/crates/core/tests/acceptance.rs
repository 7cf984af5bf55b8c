//! Acceptance criteria, one PASS/FAIL line each.
//!
//! `cargo test -p genop-core --test acceptance` runs all nine; pass criterion
//! numbers to run a subset, e.g. `... --test acceptance -- 1 3 9`.
//! Models trained for one criterion are reused by later ones.

use std::time::{Duration, Instant};

use genop_core::config::ExperimentConfig;
use genop_core::data::{
    label_endpoints, make_label, write_dataset, DatasetHeader, DatasetSample, LabelConfig,
    Procedure, SamplingRanges, SensorSpec, SuiteKind, TestCase,
};
use genop_core::dynamics::{
    grid_at, integrate_resolved, network_residual, simulate_truth,
};
use genop_core::eval::{cumulative_bound, BoundInputs, ErrorTable};
use genop_core::experiment::Experiment;
use genop_core::nn::deeponet::dot_readout;
use genop_core::nn::{
    Activation, Architecture, DeepONetModel, DeepOnetConfig, FnnConfig, FnnModel, LossHistory,
    OutputMode, Trainable,
};
use genop_core::trajectory::{write_trajectories_jsonl, Quantity, TimePartition};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 1;
const N_TEST: usize = 100;
const STATES: [Quantity; 4] = [Quantity::Delta, Quantity::Omega, Quantity::EdPrime, Quantity::EqPrime];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn fmt_states(t: &ErrorTable) -> String {
    STATES
        .iter()
        .map(|q| format!("{} {:.3}%", q.name(), t.mean_of(*q)))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Models and suites shared between criteria.
struct Shared {
    exp: Experiment,
    incremental: Option<Vec<DatasetSample>>,
    residual: Option<Vec<DatasetSample>>,
    data_driven: Option<DeepONetModel>,
    residual_model: Option<DeepONetModel>,
    gamma: Option<Vec<TestCase>>,
    train_time: Duration,
}

impl Shared {
    fn new() -> Self {
        let mut cfg = ExperimentConfig::with_seed(SEED);
        cfg.test.n_gamma = N_TEST;
        cfg.test.n_fault = N_TEST;
        Self {
            exp: Experiment::new(cfg).unwrap(),
            incremental: None,
            residual: None,
            data_driven: None,
            residual_model: None,
            gamma: None,
            train_time: Duration::ZERO,
        }
    }

    fn data(&mut self, mode: OutputMode) -> &[DatasetSample] {
        let n = self.exp.cfg.data.n_train;
        let slot = if mode == OutputMode::Residual { &mut self.residual } else { &mut self.incremental };
        slot.get_or_insert_with(|| self.exp.training_set(n, mode).unwrap())
    }

    fn gamma(&mut self) -> &[TestCase] {
        let n = self.exp.cfg.test.n_gamma;
        self.gamma
            .get_or_insert_with(|| self.exp.suite(SuiteKind::GammaPerturbed, n).unwrap())
    }

    fn model(&mut self, mode: OutputMode) -> &DeepONetModel {
        let have = if mode == OutputMode::Residual { self.residual_model.is_some() } else { self.data_driven.is_some() };
        if !have {
            let data = self.data(mode).to_vec();
            let t = Instant::now();
            let (m, _) = self.exp.train_deeponet(&data, mode).unwrap();
            self.train_time += t.elapsed();
            if mode == OutputMode::Residual {
                self.residual_model = Some(m);
            } else {
                self.data_driven = Some(m);
            }
        }
        if mode == OutputMode::Residual { self.residual_model.as_ref().unwrap() } else { self.data_driven.as_ref().unwrap() }
    }
}

fn c1_physics(s: &mut Shared) -> Outcome {
    let m = s.exp.machine;
    let p = TimePartition::uniform(10.0, 0.05).unwrap();
    let eq = simulate_truth(&m.x_star, &p, &m.gp, &m.grid, &[], 8).unwrap();
    let drift = eq.states().iter().map(|x| (*x - m.x_star).norm_inf()).fold(0.0, f64::max);

    let mut worst_res: f64 = 0.0;
    let mut n_traj = 0;
    for kind in [SuiteKind::GammaPerturbed, SuiteKind::Fault] {
        for c in s.exp.suite(kind, 20).unwrap() {
            n_traj += 1;
            let tr = &c.truth;
            for ((x, y), t) in tr.states().iter().zip(tr.inputs()).zip(tr.times()) {
                let r = network_residual(x, y, &m.gp, &grid_at(&m.grid, &c.faults, *t));
                worst_res = worst_res.max(r[0].abs()).max(r[1].abs());
            }
        }
    }

    let mut x0 = m.x_star;
    x0.omega *= 1.3;
    x0.delta += 0.3;
    let t = 0.5;
    let reference = integrate_resolved(&x0, &m.gp, &m.grid, t, 512).unwrap();
    let err = |n| (integrate_resolved(&x0, &m.gp, &m.grid, t, n).unwrap() - reference).norm_inf();
    let order = (err(8) / err(16)).log2();

    let pass = drift <= 1e-8 && worst_res <= 1e-10 && (3.8..=4.2).contains(&order);
    outcome(
        pass,
        format!(
            "equilibrium drift {drift:.1e} (<= 1e-8), network residual {worst_res:.1e} over {n_traj} truths (<= 1e-10), RK4 order {order:.3} (in [3.8, 4.2])"
        ),
    )
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<DatasetSample> {
    let ranges = SamplingRanges::default();
    (0..n)
        .map(|_| {
            let h = ranges.sample_step(rng);
            let locs = SensorSpec::fixed_plus_uniform(m.max(2)).sample_offsets(h, rng);
            let locs = if m == 1 { vec![0.0] } else { locs[..m].to_vec() };
            DatasetSample {
                x: ranges.sample_state(rng),
                y_sensors: locs.iter().map(|_| ranges.sample_input(rng)).collect(),
                sensor_locs: locs,
                h,
                label: [0.0; 4].map(|_| rng.random_range(-1.0..1.0)),
            }
        })
        .collect()
}

/// Largest relative analytic-vs-central-difference error over `n_check`
/// random parameters.
fn worst_grad_error<M: Trainable>(model: &mut M, batch: &[DatasetSample], n_check: usize, rng: &mut ChaCha8Rng) -> f64 {
    model.fit_normalization(batch).unwrap();
    let data = model.prepare(batch).unwrap();
    let idx: Vec<usize> = (0..batch.len()).collect();
    let p = model.params().to_vec();
    let mut g = vec![0.0; p.len()];
    model.loss_grad(&p, &data, &idx, Some(&mut g));
    let mut worst: f64 = 0.0;
    for _ in 0..n_check {
        let i = rng.random_range(0..p.len());
        let step = 1e-5;
        let mut pp = p.clone();
        pp[i] += step;
        let lp = model.loss_grad(&pp, &data, &idx, None);
        pp[i] -= 2.0 * step;
        let lm = model.loss_grad(&pp, &data, &idx, None);
        let fd = (lp - lm) / (2.0 * step);
        worst = worst.max((g[i] - fd).abs() / (g[i].abs() + 1e-8));
    }
    worst
}

fn c2_gradients(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    let mut names = Vec::new();
    let variants = [
        (OutputMode::Incremental, 1, Activation::Tanh, Architecture::ModifiedFc),
        (OutputMode::Residual, 3, Activation::Tanh, Architecture::ModifiedFc),
        (OutputMode::Full, 1, Activation::LeakyRelu { slope: 0.01 }, Architecture::ModifiedFc),
        (OutputMode::Incremental, 2, Activation::Tanh, Architecture::Plain),
    ];
    for (mode, m, act, arch) in variants {
        let mut cfg = DeepOnetConfig::new(mode);
        cfg.n_sensors = m;
        cfg.activation = act;
        cfg.architecture = arch;
        let mut model = DeepONetModel::new(&cfg, &mut rng).unwrap();
        let batch = random_batch(&mut rng, 16, m);
        let w = worst_grad_error(&mut model, &batch, 100, &mut rng);
        names.push(format!("deeponet/{mode:?}/m={m}: {w:.1e}"));
        worst = worst.max(w);
    }
    let mut fnn = FnnModel::new(&FnnConfig::default(), &mut rng).unwrap();
    let batch = random_batch(&mut rng, 16, 1);
    let w = worst_grad_error(&mut fnn, &batch, 100, &mut rng);
    names.push(format!("fnn: {w:.1e}"));
    worst = worst.max(w);
    outcome(worst <= 1e-4, format!("max relative error {worst:.2e} (<= 1e-4); {}", names.join(", ")))
}

fn c3_oracles(s: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let (q, n_x, rows) = (20, 4, 50);
    let beta = Array2::from_shape_fn((rows, q * n_x), |_| rng.random_range(-2.0..2.0));
    let phi = Array2::from_shape_fn((rows, q * n_x), |_| rng.random_range(-2.0..2.0));
    let out = dot_readout(&beta, &phi, q, n_x);
    let mut readout: f64 = 0.0;
    for r in 0..rows {
        for i in 0..n_x {
            let naive: f64 = (0..q).map(|k| beta[[r, i * q + k]] * phi[[r, i * q + k]]).sum();
            readout = readout.max((out[[r, i]] - naive).abs());
        }
    }

    let m = s.exp.machine;
    let cfg = LabelConfig::default();
    let ranges = SamplingRanges::default();
    let mut labels: f64 = 0.0;
    let mut degeneracy: f64 = 0.0;
    for _ in 0..200 {
        let x = ranges.sample_state(&mut rng);
        let y = ranges.sample_input(&mut rng);
        let h = ranges.sample_step(&mut rng);
        let lab = |mode| make_label(&x, &[y], &[0.0], h, mode, &m.gp, &cfg).unwrap();
        let (full, inc, res) = (lab(OutputMode::Full), lab(OutputMode::Incremental), lab(OutputMode::Residual));
        let (_, approx) = label_endpoints(&x, &[y], &[0.0], h, &m.gp, &cfg).unwrap();
        let xa = x.to_array();
        let aa = approx.to_array();
        for k in 0..4 {
            labels = labels.max((full[k] - (inc[k] + xa[k])).abs());
            labels = labels.max((full[k] - (aa[k] + res[k])).abs());
        }
        let locs = [0.0, 0.3 * h, 0.8 * h];
        let multi = make_label(&x, &[y; 3], &locs, h, OutputMode::Full, &m.gp, &cfg).unwrap();
        for k in 0..4 {
            degeneracy = degeneracy.max((multi[k] - full[k]).abs());
        }
    }

    let b = BoundInputs {
        l: 1.0,
        l_phi: 1.05,
        eps: 1e-3,
        kappa: 0.01,
        h: 0.05,
        n: 100,
    };
    let (r, e) = ((b.l * b.h).exp(), b.l * b.h * b.kappa * (b.l * b.h).exp());
    let (mut sum, mut rk, mut pk) = (0.0, 1.0, 1.0);
    for _ in 0..b.n {
        sum += rk * e + pk * b.eps;
        rk *= r;
        pk *= b.l_phi;
    }
    let bound = (cumulative_bound(&b) - sum).abs() / sum;

    let pass = readout <= 1e-12 && labels <= 1e-12 && degeneracy <= 1e-12 && bound <= 1e-12;
    outcome(
        pass,
        format!(
            "readout {readout:.1e}, label consistency {labels:.1e}, sensor degeneracy {degeneracy:.1e}, bound vs loop {bound:.1e} (all <= 1e-12)"
        ),
    )
}

fn c4_rollout_accuracy(s: &mut Shared) -> Outcome {
    let start = Instant::now();
    s.data(OutputMode::Incremental);
    s.data(OutputMode::Residual);
    s.gamma();
    s.model(OutputMode::Incremental);
    s.model(OutputMode::Residual);
    let cases = s.gamma.as_ref().unwrap();
    let (dd, dd_div) = s.exp.evaluate(s.data_driven.as_ref().unwrap(), cases).unwrap();
    let (res, res_div) = s.exp.evaluate(s.residual_model.as_ref().unwrap(), cases).unwrap();
    let elapsed = start.elapsed();
    let dd_ok = STATES.iter().all(|q| dd.mean_of(*q) <= 5.0) && dd_div == 0;
    let res_ok = STATES.iter().all(|q| res.mean_of(*q) <= 1.5) && res_div == 0;
    let time_ok = elapsed <= Duration::from_secs(15 * 60);
    outcome(
        dd_ok && res_ok && time_ok,
        format!(
            "data-driven [{}] (<= 5%, reference delta 1.284%), {dd_div} diverged; residual [{}] (<= 1.5%, reference delta 0.209%), {res_div} diverged; {:.0}s (<= 900s)",
            fmt_states(&dd),
            fmt_states(&res),
            elapsed.as_secs_f64()
        ),
    )
}

fn c5_baseline(s: &mut Shared) -> Outcome {
    s.model(OutputMode::Incremental);
    s.gamma();
    let data = s.data(OutputMode::Incremental).to_vec();
    let (fnn, _) = s.exp.train_fnn(&data).unwrap();
    let cases = s.gamma.as_ref().unwrap();
    let (dd, _) = s.exp.evaluate(s.data_driven.as_ref().unwrap(), cases).unwrap();
    let rollouts = s.exp.rollouts(&fnn, cases).unwrap();
    let diverged = rollouts.iter().filter(|r| r.is_err()).count();
    let dd_delta = dd.mean_of(Quantity::Delta);
    let (fnn_delta, pass) = if diverged == rollouts.len() {
        (f64::INFINITY, true)
    } else {
        let (t, _) = genop_core::eval::suite_error_table(&rollouts, cases).unwrap();
        let v = t.mean_of(Quantity::Delta);
        (v, v >= 3.0 * dd_delta)
    };
    outcome(
        pass,
        format!(
            "FNN delta {fnn_delta:.3}% over {} completed ({diverged} diverged) vs DeepONet {dd_delta:.3}%: ratio {:.1} (>= 3; reference 22.515% vs 1.284%)",
            rollouts.len() - diverged,
            fnn_delta / dd_delta
        ),
    )
}

fn delta_error(exp: &Experiment, n: usize, cases: &[TestCase]) -> f64 {
    let data = exp.training_set(n, OutputMode::Incremental).unwrap();
    let (model, _) = exp.train_deeponet(&data, OutputMode::Incremental).unwrap();
    let (t, div) = exp.evaluate(&model, cases).unwrap();
    if div > 0 {
        eprintln!("  n_train {n}: {div} rollouts diverged");
    }
    t.mean_of(Quantity::Delta)
}

fn c6_training_size(s: &mut Shared) -> Outcome {
    let start = Instant::now();
    let (mut small, mut large, mut p1, mut p2) = (0.0, 0.0, 0.0, 0.0);
    let seeds = [SEED, SEED + 1, SEED + 2];
    for &seed in &seeds {
        let exp = s.exp.reseeded(seed);
        let cases = exp.suite(SuiteKind::GammaPerturbed, N_TEST).unwrap();
        small += delta_error(&exp, 100, &cases);
        large += delta_error(&exp, 4000, &cases);
        p1 += if seed == SEED {
            s.model(OutputMode::Incremental);
            s.exp.evaluate(s.data_driven.as_ref().unwrap(), &cases).unwrap().0.mean_of(Quantity::Delta)
        } else {
            delta_error(&exp, 2000, &cases)
        };
        let mut cfg2 = exp.cfg.clone();
        cfg2.data.procedure = Procedure::NetworkEquations;
        p2 += delta_error(&Experiment::new(cfg2).unwrap(), 2000, &cases);
    }
    let k = seeds.len() as f64;
    let (small, large, p1, p2) = (small / k, large / k, p1 / k, p2 / k);
    let ratio = p2.max(p1) / p2.min(p1);
    outcome(
        large < small && ratio <= 3.0,
        format!(
            "mean delta over {} seeds: N=100 {small:.3}%, N=4000 {large:.3}% (must drop); state-input {p1:.3}% vs network-equations {p2:.3}% (ratio {ratio:.2} <= 3); {:.0}s",
            seeds.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn c7_dagger(s: &mut Shared) -> Outcome {
    let start = Instant::now();
    let seeds = [SEED, SEED + 1, SEED + 2];
    let (mut first, mut last) = ([0.0; 4], [0.0; 4]);
    let mut div = 0;
    for &seed in &seeds {
        let exp = s.exp.reseeded(seed);
        let out = exp.dagger().unwrap();
        let cases = exp.suite(SuiteKind::Fault, N_TEST).unwrap();
        let (t1, d1) = exp.evaluate(&out.snapshots[0], &cases).unwrap();
        let (t5, d5) = exp.evaluate(&out.model, &cases).unwrap();
        div += d5;
        eprintln!("  seed {seed}: 1 iteration [{}] ({d1} diverged), 5 iterations [{}]", fmt_states(&t1), fmt_states(&t5));
        for (k, q) in STATES.iter().enumerate() {
            first[k] += t1.mean_of(*q) / seeds.len() as f64;
            last[k] += t5.mean_of(*q) / seeds.len() as f64;
        }
    }
    let elapsed = start.elapsed();
    let level = last.iter().all(|v| *v <= 0.5) && div == 0;
    let trend = last.iter().zip(&first).all(|(l, f)| l <= f);
    let fmt = |v: &[f64; 4]| {
        STATES.iter().zip(v).map(|(q, e)| format!("{} {e:.4}%", q.name())).collect::<Vec<_>>().join(", ")
    };
    outcome(
        level && trend && elapsed <= Duration::from_secs(20 * 60),
        format!(
            "fault-test mean over {} seeds after 5 iterations [{}] (<= 0.5%, reference delta 0.0077%), {div} diverged; after 1 iteration [{}] (must not be lower); {:.0}s (<= 1200s)",
            seeds.len(),
            fmt(&last),
            fmt(&first),
            elapsed.as_secs_f64()
        ),
    )
}

fn c8_bound(s: &mut Shared) -> Outcome {
    s.model(OutputMode::Residual);
    let data = s.data(OutputMode::Residual).to_vec();
    let validation = s.exp.validation_split(&data);
    let report = s.exp.verify_bound(s.residual_model.as_ref().unwrap(), &validation).unwrap();
    let c = report.constants;
    let violations: Vec<String> = report
        .rollouts
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.satisfied)
        .map(|(i, r)| format!("#{i} at step {:?}", r.first_violation.or(r.diverged_at)))
        .collect();
    outcome(
        report.n_satisfied >= 18,
        format!(
            "{}/{} rollouts within the bound (>= 18); L {:.3}, L_Phi {:.3}, eps {:.2e}, kappa {:.2e}, h {}; final bound {:.2e}; violations: [{}]",
            report.n_satisfied,
            report.rollouts.len(),
            c.l,
            c.l_phi,
            c.eps,
            c.kappa,
            c.h,
            report.bound.last().unwrap(),
            violations.join(", ")
        ),
    )
}

fn determinism_run(cfg: &ExperimentConfig) -> (Vec<u8>, LossHistory, Vec<u8>) {
    let exp = Experiment::new(cfg.clone()).unwrap();
    let data = exp.training_set(cfg.data.n_train, OutputMode::Incremental).unwrap();
    let header = DatasetHeader {
        n_samples: data.len(),
        procedure: cfg.data.procedure,
        mode: OutputMode::Incremental,
        sensors: cfg.data.sensors,
        ranges: cfg.data.ranges,
        label: cfg.data.label,
        seed: cfg.seed,
    };
    let mut data_bytes = Vec::new();
    write_dataset(&mut data_bytes, &header, &data).unwrap();
    let (model, history) = exp.train_deeponet(&data, OutputMode::Incremental).unwrap();
    let cases = exp.suite(SuiteKind::GammaPerturbed, cfg.test.n_gamma).unwrap();
    let trajs: Vec<_> = exp.rollouts(&model, &cases).unwrap().into_iter().filter_map(|r| r.ok()).collect();
    let mut traj_bytes = Vec::new();
    write_trajectories_jsonl(&mut traj_bytes, &trajs).unwrap();
    (data_bytes, history, traj_bytes)
}

fn c9_determinism(_: &mut Shared) -> Outcome {
    let mut cfg = ExperimentConfig::with_seed(SEED + 9);
    cfg.data.n_train = 300;
    cfg.training.epochs = 40;
    cfg.test.n_gamma = 5;
    cfg.test.t_end = 3.0;
    let (d1, h1, t1) = determinism_run(&cfg);
    let (d2, h2, t2) = determinism_run(&cfg);
    let bits = |h: &LossHistory| {
        h.train.iter().chain(&h.validation).chain(&h.learning_rate).map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    let same_data = d1 == d2;
    let same_hist = bits(&h1) == bits(&h2);
    let same_traj = t1 == t2 && !t1.is_empty();
    outcome(
        same_data && same_hist && same_traj,
        format!(
            "dataset {} bytes identical: {same_data}; loss history ({} epochs) identical: {same_hist}; trajectories {} bytes identical: {same_traj}",
            d1.len(),
            h1.train.len(),
            t1.len()
        ),
    )
}

type Criterion = (usize, &'static str, fn(&mut Shared) -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "physics oracles", c1_physics),
        (2, "gradient correctness", c2_gradients),
        (3, "oracle equivalences", c3_oracles),
        (4, "rollout accuracy", c4_rollout_accuracy),
        (5, "baseline separation", c5_baseline),
        (6, "training-size trend", c6_training_size),
        (7, "DAgger on faults", c7_dagger),
        (8, "error-bound verification", c8_bound),
        (9, "determinism", c9_determinism),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut shared = Shared::new();
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let o = run(&mut shared);
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} ({name}): {verdict} [{:.1}s] {}", t.elapsed().as_secs_f64(), o.detail);
        if !o.pass {
            failed.push(n);
        }
    }
    if shared.train_time > Duration::ZERO {
        println!("shared model training time: {:.0}s", shared.train_time.as_secs_f64());
    }
    if !failed.is_empty() {
        println!("acceptance: FAILED criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
