//! Plain fully connected next-step baseline `(x_n, y_n, h) -> x_{n+1}`.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::deeponet::OutputMode;
use super::mlp::{Activation, Architecture, Mlp, NetworkSpec};
use super::norm::Scaler;
use super::train::{Prepared, Regressor, Trainable};
use super::StepPredictor;
use crate::data::DatasetSample;
use crate::dynamics::{InterfaceInput, State, N_INPUTS, N_STATES};
use crate::error::{Error, Result};

pub const FNN_INPUT_DIM: usize = N_STATES + N_INPUTS + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FnnConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// `full` (the baseline proper) or `incremental`.
    pub output_mode: OutputMode,
}

impl Default for FnnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![60, 60, 60],
            activation: Activation::Tanh,
            output_mode: OutputMode::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FnnModel {
    net: Mlp,
    output_mode: OutputMode,
    pub input_norm: Scaler,
    pub output_norm: Scaler,
    params: Vec<f64>,
}

fn encode(x: &State, y: &InterfaceInput, h: f64) -> [f64; FNN_INPUT_DIM] {
    [x.delta, x.omega, x.e_d_prime, x.e_q_prime, y.i_d, y.i_q, h]
}

impl FnnModel {
    pub fn new<R: Rng + ?Sized>(cfg: &FnnConfig, rng: &mut R) -> Result<Self> {
        let spec = NetworkSpec {
            input_dim: FNN_INPUT_DIM,
            output_dim: N_STATES,
            hidden_layers: cfg.hidden.clone(),
            activation: cfg.activation,
            architecture: Architecture::Plain,
        };
        let mut m = Self::from_parts(
            spec,
            cfg.output_mode,
            Scaler::identity(FNN_INPUT_DIM),
            Scaler::identity(N_STATES),
            None,
        )?;
        m.net.init_params(&mut m.params, rng);
        Ok(m)
    }

    pub fn from_parts(
        spec: NetworkSpec,
        output_mode: OutputMode,
        input_norm: Scaler,
        output_norm: Scaler,
        params: Option<Vec<f64>>,
    ) -> Result<Self> {
        if output_mode == OutputMode::Residual {
            return Err(Error::InvalidParameter("the FNN baseline has no residual mode".into()));
        }
        if spec.input_dim != FNN_INPUT_DIM || spec.output_dim != N_STATES {
            return Err(Error::InvalidParameter("FNN input/output width".into()));
        }
        if input_norm.dim() != FNN_INPUT_DIM || output_norm.dim() != N_STATES {
            return Err(Error::InvalidParameter("FNN normalization width".into()));
        }
        let net = Mlp::new(spec, 0)?;
        let params = params.unwrap_or_else(|| vec![0.0; net.n_params()]);
        if params.len() != net.n_params() {
            return Err(Error::DimensionMismatch {
                expected: net.n_params(),
                got: params.len(),
            });
        }
        Ok(Self {
            net,
            output_mode,
            input_norm,
            output_norm,
            params,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn output_mode(&self) -> OutputMode {
        self.output_mode
    }
}

impl Regressor for FnnModel {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn loss_grad(&self, params: &[f64], data: &Prepared, idx: &[usize], grad: Option<&mut [f64]>) -> f64 {
        let input = data.inputs[0].select(Axis(0), idx);
        let labels = data.labels.select(Axis(0), idx);
        let (out, cache) = self.net.forward_batch(params, input.view());
        let diff = out - &labels;
        let n = idx.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        if let Some(grad) = grad {
            self.net.backward_batch(params, &cache, &(diff * (2.0 / n)), grad);
        }
        loss
    }
}

impl Trainable for FnnModel {
    fn fit_normalization(&mut self, samples: &[DatasetSample]) -> Result<()> {
        let inputs: Vec<[f64; FNN_INPUT_DIM]> = samples
            .iter()
            .map(|s| encode(&s.x, &s.y_sensors[0], s.h))
            .collect();
        self.input_norm = Scaler::fit(inputs.iter().map(|r| r.as_slice()), FNN_INPUT_DIM)?;
        self.output_norm = Scaler::fit(samples.iter().map(|s| s.label.as_slice()), N_STATES)?;
        Ok(())
    }

    fn prepare(&self, samples: &[DatasetSample]) -> Result<Prepared> {
        let mut input = Array2::zeros((samples.len(), FNN_INPUT_DIM));
        let mut labels = Array2::zeros((samples.len(), N_STATES));
        for (k, s) in samples.iter().enumerate() {
            if s.n_sensors() != 1 {
                return Err(Error::DimensionMismatch {
                    expected: 1,
                    got: s.n_sensors(),
                });
            }
            let v = self.input_norm.normalize(&encode(&s.x, &s.y_sensors[0], s.h));
            input.row_mut(k).assign(&ArrayView1::from(&v));
            let l = self.output_norm.normalize(&s.label);
            labels.row_mut(k).assign(&ArrayView1::from(&l));
        }
        Ok(Prepared {
            inputs: vec![input],
            labels,
        })
    }
}

impl StepPredictor for FnnModel {
    fn output_mode(&self) -> OutputMode {
        self.output_mode
    }

    fn n_sensors(&self) -> usize {
        1
    }

    fn predict(&self, x: &State, ys: &[InterfaceInput], _locs: &[f64], h: f64) -> Result<State> {
        if ys.len() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: ys.len(),
            });
        }
        let v = self.input_norm.normalize(&encode(x, &ys[0], h));
        let view = ArrayView2::from_shape((1, FNN_INPUT_DIM), &v).unwrap();
        let (out, _) = self.net.forward_batch(&self.params, view);
        let raw: Vec<f64> = out.iter().copied().collect();
        if raw.iter().any(|r| !r.is_finite()) {
            return Err(Error::NumericalBlowUp);
        }
        Ok(State::from_slice(&self.output_norm.denormalize(&raw)))
    }
}
