//! Branch/trunk operator network with a blockwise dot-product readout.
//!
//! The branch net sees the current state, the sensor readings of the
//! interface current and (for more than one sensor) the sensor offsets; the
//! trunk net sees the step length. Output component `i` is
//! `sum_j beta[i*q + j] * phi[i*q + j]`, computed in normalized label space and
//! mapped back with the stored statistics.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Architecture, Mlp, MlpCache, NetworkSpec};
use super::norm::NormalizationStats;
use super::norm::Scaler;
use super::train::{Prepared, Regressor, Trainable};
use super::StepPredictor;
use crate::data::DatasetSample;
use crate::dynamics::{InterfaceInput, State, N_INPUTS, N_STATES};
use crate::error::{Error, Result};

/// What the raw network output represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Next state.
    Full,
    /// Next state minus current state.
    Incremental,
    /// True next state minus the reduced-fidelity next state.
    Residual,
}

/// Architecture choices for a new model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeepOnetConfig {
    pub q: usize,
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    pub activation: Activation,
    pub architecture: Architecture,
    pub n_sensors: usize,
    pub output_mode: OutputMode,
}

impl DeepOnetConfig {
    pub fn new(output_mode: OutputMode) -> Self {
        Self {
            q: 20,
            branch_hidden: vec![60, 60, 60],
            trunk_hidden: vec![60, 60, 60],
            activation: Activation::Tanh,
            architecture: Architecture::ModifiedFc,
            n_sensors: 1,
            output_mode,
        }
    }
}

impl Default for DeepOnetConfig {
    fn default() -> Self {
        Self::new(OutputMode::Incremental)
    }
}

/// Branch input width for `n_sensors` readings of the interface current.
pub fn branch_input_dim(n_sensors: usize) -> usize {
    let locs = if n_sensors > 1 { n_sensors } else { 0 };
    N_STATES + N_INPUTS * n_sensors + locs
}

/// Raw (un-normalized) branch input vector.
pub fn encode_branch(x: &State, ys: &[InterfaceInput], locs: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(branch_input_dim(ys.len()));
    v.extend_from_slice(&x.to_array());
    for y in ys {
        v.push(y.i_d);
        v.push(y.i_q);
    }
    if ys.len() > 1 {
        v.extend_from_slice(locs);
    }
    v
}

/// Blockwise dot product of branch coefficients and trunk basis values.
pub fn dot_readout(beta: &Array2<f64>, phi: &Array2<f64>, q: usize, n_x: usize) -> Array2<f64> {
    let mut out = Array2::zeros((beta.nrows(), n_x));
    for ((mut o, b), p) in out
        .axis_iter_mut(Axis(0))
        .zip(beta.axis_iter(Axis(0)))
        .zip(phi.axis_iter(Axis(0)))
    {
        let (b, p) = (b.as_slice().unwrap(), p.as_slice().unwrap());
        for i in 0..n_x {
            let mut acc = 0.0;
            for j in i * q..(i + 1) * q {
                acc += b[j] * p[j];
            }
            o[i] = acc;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepONetModel {
    branch: Mlp,
    trunk: Mlp,
    q: usize,
    n_x: usize,
    n_sensors: usize,
    output_mode: OutputMode,
    pub norm: NormalizationStats,
    params: Vec<f64>,
}

/// Intermediate values of a batched DeepONet forward pass.
pub struct DeepOnetCache {
    beta: Array2<f64>,
    phi: Array2<f64>,
    branch: MlpCache,
    trunk: MlpCache,
}

impl DeepONetModel {
    /// Fresh model with seeded initialization and identity normalization.
    pub fn new<R: Rng + ?Sized>(cfg: &DeepOnetConfig, rng: &mut R) -> Result<Self> {
        if cfg.q == 0 || cfg.n_sensors == 0 {
            return Err(Error::InvalidParameter("q and n_sensors must be >= 1".into()));
        }
        let width = cfg.q * N_STATES;
        let branch_spec = NetworkSpec {
            input_dim: branch_input_dim(cfg.n_sensors),
            output_dim: width,
            hidden_layers: cfg.branch_hidden.clone(),
            activation: cfg.activation,
            architecture: cfg.architecture,
        };
        let trunk_spec = NetworkSpec {
            input_dim: 1,
            output_dim: width,
            hidden_layers: cfg.trunk_hidden.clone(),
            activation: cfg.activation,
            architecture: cfg.architecture,
        };
        let norm = NormalizationStats::identity(branch_spec.input_dim, 1, N_STATES);
        let mut model = Self::from_parts(
            branch_spec,
            trunk_spec,
            cfg.q,
            N_STATES,
            cfg.n_sensors,
            cfg.output_mode,
            norm,
            None,
        )?;
        model.reinitialize(rng);
        Ok(model)
    }

    /// Assembles a model and checks its shape invariants. `params = None`
    /// gives an all-zero parameter vector.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        branch_spec: NetworkSpec,
        trunk_spec: NetworkSpec,
        q: usize,
        n_x: usize,
        n_sensors: usize,
        output_mode: OutputMode,
        norm: NormalizationStats,
        params: Option<Vec<f64>>,
    ) -> Result<Self> {
        if branch_spec.output_dim != q * n_x || trunk_spec.output_dim != q * n_x {
            return Err(Error::InvalidParameter(
                "branch and trunk outputs must both equal q * n_x".into(),
            ));
        }
        if branch_spec.input_dim != branch_input_dim(n_sensors) || trunk_spec.input_dim != 1 {
            return Err(Error::InvalidParameter("branch/trunk input width".into()));
        }
        if n_x != N_STATES {
            return Err(Error::InvalidParameter(format!("n_x must be {N_STATES}")));
        }
        let branch = Mlp::new(branch_spec, 0)?;
        let trunk = Mlp::new(trunk_spec, branch.n_params())?;
        let total = branch.n_params() + trunk.n_params();
        let params = params.unwrap_or_else(|| vec![0.0; total]);
        if params.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        norm.check_dims(branch.spec().input_dim, 1, n_x)?;
        Ok(Self {
            branch,
            trunk,
            q,
            n_x,
            n_sensors,
            output_mode,
            norm,
            params,
        })
    }

    pub fn reinitialize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.branch.init_params(&mut self.params, rng);
        self.trunk.init_params(&mut self.params, rng);
    }

    pub fn branch(&self) -> &Mlp {
        &self.branch
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn output_mode(&self) -> OutputMode {
        self.output_mode
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Raw readout on already-normalized inputs.
    pub fn forward_normalized(
        &self,
        params: &[f64],
        branch_in: ArrayView2<f64>,
        trunk_in: ArrayView2<f64>,
    ) -> (Array2<f64>, DeepOnetCache) {
        let (beta, branch) = self.branch.forward_batch(params, branch_in);
        let (phi, trunk) = self.trunk.forward_batch(params, trunk_in);
        let out = dot_readout(&beta, &phi, self.q, self.n_x);
        (
            out,
            DeepOnetCache {
                beta,
                phi,
                branch,
                trunk,
            },
        )
    }

    /// Accumulates the parameter gradient for upstream gradient `d_out`.
    pub fn backward_normalized(
        &self,
        params: &[f64],
        cache: &DeepOnetCache,
        d_out: &Array2<f64>,
        grad: &mut [f64],
    ) {
        let q = self.q;
        let mut d_beta = cache.phi.clone();
        let mut d_phi = cache.beta.clone();
        for (b, dr) in d_out.axis_iter(Axis(0)).enumerate() {
            for i in 0..self.n_x {
                let g = dr[i];
                for j in i * q..(i + 1) * q {
                    d_beta[[b, j]] *= g;
                    d_phi[[b, j]] *= g;
                }
            }
        }
        self.branch.backward_batch(params, &cache.branch, &d_beta, grad);
        self.trunk.backward_batch(params, &cache.trunk, &d_phi, grad);
    }

    fn check_sample_shape(&self, ys: &[InterfaceInput], locs: &[f64]) -> Result<()> {
        if ys.len() != self.n_sensors || locs.len() != self.n_sensors {
            return Err(Error::DimensionMismatch {
                expected: self.n_sensors,
                got: ys.len(),
            });
        }
        Ok(())
    }

    /// De-normalized network output for one step. Callers assemble the next
    /// state according to [`OutputMode`].
    pub fn predict(&self, x: &State, ys: &[InterfaceInput], locs: &[f64], h: f64) -> Result<State> {
        self.check_sample_shape(ys, locs)?;
        let b = self.norm.normalize_branch(&encode_branch(x, ys, locs));
        let t = self.norm.normalize_trunk(&[h]);
        let bv = ArrayView2::from_shape((1, b.len()), &b).unwrap();
        let tv = ArrayView2::from_shape((1, 1), &t).unwrap();
        let (r, _) = self.forward_normalized(&self.params, bv, tv);
        let raw: Vec<f64> = r.iter().copied().collect();
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowUp);
        }
        Ok(State::from_slice(&self.norm.denormalize_output(&raw)))
    }

    /// Normalized design matrices for a set of samples.
    pub fn prepare(&self, samples: &[DatasetSample]) -> Result<Prepared> {
        let bd = self.branch.spec().input_dim;
        let mut branch = Array2::zeros((samples.len(), bd));
        let mut trunk = Array2::zeros((samples.len(), 1));
        let mut labels = Array2::zeros((samples.len(), self.n_x));
        for (k, s) in samples.iter().enumerate() {
            self.check_sample_shape(&s.y_sensors, &s.sensor_locs)?;
            let b = self.norm.normalize_branch(&encode_branch(&s.x, &s.y_sensors, &s.sensor_locs));
            branch.row_mut(k).assign(&ndarray::ArrayView1::from(&b));
            trunk[[k, 0]] = self.norm.normalize_trunk(&[s.h])[0];
            let l = self.norm.normalize_output(&s.label);
            labels.row_mut(k).assign(&ndarray::ArrayView1::from(&l));
        }
        Ok(Prepared {
            inputs: vec![branch, trunk],
            labels,
        })
    }

    /// Mean squared L2 error in normalized label space.
    pub fn loss(&self, batch: &[DatasetSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("loss batch"));
        }
        let data = self.prepare(batch)?;
        let idx: Vec<usize> = (0..batch.len()).collect();
        Ok(self.loss_grad(&self.params, &data, &idx, None))
    }

    /// Exact gradient of [`Self::loss`] with respect to every parameter.
    pub fn gradient(&self, batch: &[DatasetSample]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::Empty("gradient batch"));
        }
        let data = self.prepare(batch)?;
        let idx: Vec<usize> = (0..batch.len()).collect();
        let mut grad = vec![0.0; self.params.len()];
        self.loss_grad(&self.params, &data, &idx, Some(&mut grad));
        Ok(grad)
    }
}

impl Trainable for DeepONetModel {
    fn fit_normalization(&mut self, samples: &[DatasetSample]) -> Result<()> {
        let bd = self.branch.spec().input_dim;
        let mut rows = Vec::with_capacity(samples.len());
        for s in samples {
            self.check_sample_shape(&s.y_sensors, &s.sensor_locs)?;
            rows.push(encode_branch(&s.x, &s.y_sensors, &s.sensor_locs));
        }
        let hs: Vec<[f64; 1]> = samples.iter().map(|s| [s.h]).collect();
        self.norm = NormalizationStats {
            branch: Scaler::fit(rows.iter().map(|r| r.as_slice()), bd)?,
            trunk: Scaler::fit(hs.iter().map(|r| r.as_slice()), 1)?,
            output: Scaler::fit(samples.iter().map(|s| s.label.as_slice()), self.n_x)?,
        };
        Ok(())
    }

    fn prepare(&self, samples: &[DatasetSample]) -> Result<Prepared> {
        DeepONetModel::prepare(self, samples)
    }
}

impl StepPredictor for DeepONetModel {
    fn output_mode(&self) -> OutputMode {
        self.output_mode
    }

    fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    fn predict(&self, x: &State, ys: &[InterfaceInput], locs: &[f64], h: f64) -> Result<State> {
        DeepONetModel::predict(self, x, ys, locs, h)
    }
}

impl Regressor for DeepONetModel {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn loss_grad(
        &self,
        params: &[f64],
        data: &Prepared,
        idx: &[usize],
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let branch_in = data.inputs[0].select(Axis(0), idx);
        let trunk_in = data.inputs[1].select(Axis(0), idx);
        let labels = data.labels.select(Axis(0), idx);
        let (out, cache) = self.forward_normalized(params, branch_in.view(), trunk_in.view());
        let diff = out - &labels;
        let n = idx.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        if let Some(grad) = grad {
            let d_out = diff * (2.0 / n);
            self.backward_normalized(params, &cache, &d_out, grad);
        }
        loss
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::set_block;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(mode: OutputMode) -> DeepOnetConfig {
        DeepOnetConfig {
            q: 3,
            branch_hidden: vec![5, 5],
            trunk_hidden: vec![5, 5],
            activation: Activation::Tanh,
            architecture: Architecture::ModifiedFc,
            n_sensors: 1,
            output_mode: mode,
        }
    }

    fn sample(rng: &mut ChaCha8Rng) -> DatasetSample {
        DatasetSample {
            x: State::new(
                rng.random_range(-3.0..12.0),
                rng.random_range(0.0..1.5),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..1.5),
            ),
            y_sensors: vec![InterfaceInput::new(
                rng.random_range(-1.0..3.0),
                rng.random_range(-1.0..1.0),
            )],
            sensor_locs: vec![0.0],
            h: rng.random_range(0.001..0.25),
            label: [
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
            ],
        }
    }

    #[test]
    fn ones_readout_sums_to_q() {
        let beta = Array2::ones((2, 8));
        let phi = Array2::ones((2, 8));
        let r = dot_readout(&beta, &phi, 2, 4);
        assert!(r.iter().all(|&v| v == 2.0));
        let r = dot_readout(&Array2::ones((1, 4)), &Array2::ones((1, 4)), 1, 4);
        assert!(r.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn forced_unit_outputs_give_unit_readout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cfg = small_cfg(OutputMode::Incremental);
        cfg.q = 1;
        let mut model = DeepONetModel::new(&cfg, &mut rng).unwrap();
        let (bo, to) = (model.branch().output_block(), model.trunk().output_block());
        let p = model.params_mut();
        set_block(p, bo, &vec![0.0; bo.fan_in * bo.fan_out], &[1.0; 4]);
        set_block(p, to, &vec![0.0; to.fan_in * to.fan_out], &[1.0; 4]);
        let s = sample(&mut rng);
        let out = model.predict(&s.x, &s.y_sensors, &s.sensor_locs, s.h).unwrap();
        assert_eq!(out.to_array(), [1.0; 4]);
    }

    #[test]
    fn readout_matches_naive_blockwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = DeepONetModel::new(&small_cfg(OutputMode::Full), &mut rng).unwrap();
        let s = sample(&mut rng);
        let b = encode_branch(&s.x, &s.y_sensors, &s.sensor_locs);
        let beta = model.branch().forward(model.params(), &b).unwrap();
        let phi = model.trunk().forward(model.params(), &[s.h]).unwrap();
        let out = model.predict(&s.x, &s.y_sensors, &s.sensor_locs, s.h).unwrap().to_array();
        for i in 0..4 {
            let naive: f64 = (0..3).map(|j| beta[i * 3 + j] * phi[i * 3 + j]).sum();
            assert!((out[i] - naive).abs() <= 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = DeepONetModel::new(&small_cfg(OutputMode::Incremental), &mut rng).unwrap();
        let mut s = sample(&mut rng);
        let pred = model.predict(&s.x, &s.y_sensors, &s.sensor_locs, s.h).unwrap().to_array();
        s.label = pred;
        assert!(model.loss(std::slice::from_ref(&s)).unwrap() < 1e-28);
        s.label[0] = pred[0] - 0.1;
        assert!((model.loss(std::slice::from_ref(&s)).unwrap() - 0.01).abs() < 1e-12);
        let mut s1 = s.clone();
        s1.label[1] = pred[1] - 0.1;
        let mut s2 = s.clone();
        s2.label = pred;
        s2.label[1] = pred[1] + 0.2;
        // squared norms 0.02 and 0.04 -> mean 0.03
        let l = model.loss(&[s1, s2]).unwrap();
        assert!((l - 0.03).abs() < 1e-12);
    }

    #[test]
    fn zero_branch_block_kills_trunk_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = DeepONetModel::new(&small_cfg(OutputMode::Residual), &mut rng).unwrap();
        let bo = model.branch().output_block();
        set_block(
            model.params_mut(),
            bo,
            &vec![0.0; bo.fan_in * bo.fan_out],
            &vec![0.0; bo.fan_out],
        );
        let batch: Vec<_> = (0..4).map(|_| sample(&mut rng)).collect();
        let g = model.gradient(&batch).unwrap();
        let start = model.branch().n_params();
        assert!(g[start..].iter().all(|v| v.abs() <= 1e-12));
        assert!(g[bo.bias_range()].iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn doubling_residual_doubles_output_bias_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = DeepONetModel::new(&small_cfg(OutputMode::Incremental), &mut rng).unwrap();
        let batch: Vec<_> = (0..5).map(|_| sample(&mut rng)).collect();
        let doubled: Vec<_> = batch
            .iter()
            .map(|s| {
                let p = model.predict(&s.x, &s.y_sensors, &s.sensor_locs, s.h).unwrap().to_array();
                let mut t = s.clone();
                for (l, pi) in t.label.iter_mut().zip(p) {
                    *l = pi - 2.0 * (pi - *l);
                }
                t
            })
            .collect();
        let g1 = model.gradient(&batch).unwrap();
        let g2 = model.gradient(&doubled).unwrap();
        for i in model.branch().output_block().bias_range() {
            assert!((g2[i] - 2.0 * g1[i]).abs() <= 1e-10 * (1.0 + g1[i].abs()));
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut cfg = small_cfg(OutputMode::Incremental);
        cfg.n_sensors = 2;
        let model = DeepONetModel::new(&cfg, &mut rng).unwrap();
        let batch: Vec<_> = (0..6)
            .map(|_| {
                let mut s = sample(&mut rng);
                s.y_sensors.push(InterfaceInput::new(0.3, -0.2));
                s.sensor_locs.push(0.5 * s.h);
                s
            })
            .collect();
        let data = model.prepare(&batch).unwrap();
        let idx: Vec<usize> = (0..batch.len()).collect();
        let p = model.params().to_vec();
        let mut g = vec![0.0; p.len()];
        model.loss_grad(&p, &data, &idx, Some(&mut g));
        let mut worst: f64 = 0.0;
        for i in 0..p.len() {
            let mut pp = p.clone();
            pp[i] += 1e-5;
            let lp = model.loss_grad(&pp, &data, &idx, None);
            pp[i] -= 2e-5;
            let lm = model.loss_grad(&pp, &data, &idx, None);
            let fd = (lp - lm) / 2e-5;
            worst = worst.max((g[i] - fd).abs() / (g[i].abs() + 1e-8));
        }
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn rejects_sensor_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = DeepONetModel::new(&small_cfg(OutputMode::Full), &mut rng).unwrap();
        let x = State::default();
        let y = InterfaceInput::default();
        assert!(model.predict(&x, &[y, y], &[0.0, 0.1], 0.1).is_err());
        assert!(model.loss(&[]).is_err());
    }

    #[test]
    fn two_sensor_branch_includes_offsets() {
        assert_eq!(branch_input_dim(1), 6);
        assert_eq!(branch_input_dim(2), 10);
        let v = encode_branch(
            &State::new(1.0, 2.0, 3.0, 4.0),
            &[InterfaceInput::new(5.0, 6.0), InterfaceInput::new(7.0, 8.0)],
            &[0.0, 0.03],
        );
        assert_eq!(v, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 0.0, 0.03]);
    }
}
