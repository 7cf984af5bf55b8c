//! Fully connected networks over a flat parameter vector.
//!
//! Parameters live in one contiguous `&[f64]` so a whole model (several
//! networks) can be optimized as a single vector. Each dense block stores its
//! weight row-major as `fan_in x fan_out`, followed by its bias.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if a > 0.0 {
                    a
                } else {
                    slope * a
                }
            }
            Activation::Tanh => a.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `a` and output `z`.
    #[inline]
    fn derivative(self, a: f64, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if a > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - z * z,
        }
    }

    fn init_gain_sq(self) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => 2.0 / (1.0 + slope * slope),
            Activation::Tanh => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Plain,
    /// Two input encoders `u`, `v`; every hidden layer mixes them through its
    /// activated output `z` as `(1 - z) * u + z * v`.
    ModifiedFc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub architecture: Architecture,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_layers.contains(&0)
        {
            return Err(Error::InvalidParameter("network dimensions must be >= 1".into()));
        }
        if let Activation::LeakyRelu { slope } = self.activation {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::InvalidParameter("leaky slope must lie in (0, 1)".into()));
            }
        }
        if self.architecture == Architecture::ModifiedFc {
            let Some(&w) = self.hidden_layers.first() else {
                return Err(Error::InvalidParameter(
                    "modified_fc needs at least one hidden layer".into(),
                ));
            };
            if self.hidden_layers.iter().any(|&x| x != w) {
                return Err(Error::InvalidParameter(
                    "modified_fc needs equal hidden widths".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Extent of one dense block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseBlock {
    pub offset: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl DenseBlock {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }

    pub fn len(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn weight<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.fan_in, self.fan_out), &p[self.weight_range()]).unwrap()
    }

    fn bias<'a>(&self, p: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&p[self.bias_range()])
    }

    /// `x W + b`
    fn affine(&self, p: &[f64], x: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.fan_out));
        out += &self.bias(p);
        general_mat_mul(1.0, x, &self.weight(p), 1.0, &mut out);
        out
    }

    /// Accumulates `dW += x^T dA`, `db += sum_rows dA` and returns `dA W^T`
    /// when `want_input_grad`.
    fn backward(
        &self,
        p: &[f64],
        x: &ArrayView2<f64>,
        d_pre: &Array2<f64>,
        grad: &mut [f64],
        want_input_grad: bool,
    ) -> Option<Array2<f64>> {
        {
            let mut gw = ArrayViewMut2::from_shape(
                (self.fan_in, self.fan_out),
                &mut grad[self.weight_range()],
            )
            .unwrap();
            general_mat_mul(1.0, &x.t(), d_pre, 1.0, &mut gw);
        }
        {
            let mut gb = ArrayViewMut1::from(&mut grad[self.bias_range()]);
            gb += &d_pre.sum_axis(Axis(0));
        }
        want_input_grad.then(|| d_pre.dot(&self.weight(p).t()))
    }
}

/// Layout of one network: encoder blocks (modified_fc only), hidden blocks and
/// the output block, in that order inside its parameter span.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: NetworkSpec,
    encoders: Option<(DenseBlock, DenseBlock)>,
    hidden: Vec<DenseBlock>,
    output: DenseBlock,
    n_params: usize,
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Array2<f64>,
    /// (pre-activation, activation) per hidden layer.
    layers: Vec<(Array2<f64>, Array2<f64>)>,
    /// Hidden state fed into each following block (after gating for modified_fc).
    states: Vec<Array2<f64>>,
    encoders: Option<EncoderCache>,
}

#[derive(Debug, Clone)]
struct EncoderCache {
    pre_u: Array2<f64>,
    u: Array2<f64>,
    pre_v: Array2<f64>,
    v: Array2<f64>,
}

impl Mlp {
    /// Lays out a network starting at `offset` in the shared parameter vector.
    pub fn new(spec: NetworkSpec, offset: usize) -> Result<Self> {
        spec.validate()?;
        let mut cursor = offset;
        let mut block = |fan_in: usize, fan_out: usize| {
            let b = DenseBlock {
                offset: cursor,
                fan_in,
                fan_out,
            };
            cursor += b.len();
            b
        };
        let encoders = match spec.architecture {
            Architecture::Plain => None,
            Architecture::ModifiedFc => {
                let w = spec.hidden_layers[0];
                Some((block(spec.input_dim, w), block(spec.input_dim, w)))
            }
        };
        let mut hidden = Vec::with_capacity(spec.hidden_layers.len());
        let mut fan_in = spec.input_dim;
        for &w in &spec.hidden_layers {
            hidden.push(block(fan_in, w));
            fan_in = w;
        }
        let output = block(fan_in, spec.output_dim);
        let n_params = cursor - offset;
        Ok(Self {
            spec,
            encoders,
            hidden,
            output,
            n_params,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn offset(&self) -> usize {
        self.encoders.map(|e| e.0.offset).unwrap_or_else(|| {
            self.hidden.first().map(|b| b.offset).unwrap_or(self.output.offset)
        })
    }

    /// All dense blocks in storage order.
    pub fn blocks(&self) -> Vec<DenseBlock> {
        let mut out = Vec::new();
        if let Some((u, v)) = self.encoders {
            out.push(u);
            out.push(v);
        }
        out.extend(self.hidden.iter().copied());
        out.push(self.output);
        out
    }

    pub fn output_block(&self) -> DenseBlock {
        self.output
    }

    pub fn encoder_blocks(&self) -> Option<(DenseBlock, DenseBlock)> {
        self.encoders
    }

    /// Uniform fan-in initialization with zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        let gain_sq = self.spec.activation.init_gain_sq();
        for b in self.blocks() {
            let is_output = b == self.output;
            let g = if is_output { 1.0 } else { gain_sq };
            let bound = (3.0 * g / b.fan_in as f64).sqrt();
            for w in &mut params[b.weight_range()] {
                *w = rng.random_range(-bound..bound);
            }
            for bias in &mut params[b.bias_range()] {
                *bias = 0.0;
            }
        }
    }

    fn activate(&self, pre: &Array2<f64>) -> Array2<f64> {
        let act = self.spec.activation;
        pre.mapv(|a| act.apply(a))
    }

    /// Batched forward pass; rows of `x` are samples.
    pub fn forward_batch(&self, params: &[f64], x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        debug_assert_eq!(x.ncols(), self.spec.input_dim);
        let encoders = self.encoders.map(|(bu, bv)| {
            let pre_u = bu.affine(params, &x);
            let u = self.activate(&pre_u);
            let pre_v = bv.affine(params, &x);
            let v = self.activate(&pre_v);
            EncoderCache { pre_u, u, pre_v, v }
        });
        let mut layers = Vec::with_capacity(self.hidden.len());
        let mut states: Vec<Array2<f64>> = Vec::with_capacity(self.hidden.len());
        for (l, b) in self.hidden.iter().enumerate() {
            let h_prev = if l == 0 { x.view() } else { states[l - 1].view() };
            let pre = b.affine(params, &h_prev);
            let z = self.activate(&pre);
            let h = match &encoders {
                None => z.clone(),
                Some(e) => {
                    // (1 - z) u + z v = u + z (v - u)
                    let mut h = &e.v - &e.u;
                    h *= &z;
                    h += &e.u;
                    h
                }
            };
            layers.push((pre, z));
            states.push(h);
        }
        let last = states.last().map(|s| s.view()).unwrap_or(x.view());
        let out = self.output.affine(params, &last);
        (
            out,
            MlpCache {
                input: x.to_owned(),
                layers,
                states,
                encoders,
            },
        )
    }

    /// Single-sample forward pass.
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                got: input.len(),
            });
        }
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        let (out, _) = self.forward_batch(params, x);
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// Accumulates the parameter gradient for an upstream gradient `d_out`
    /// (same shape as the forward output) into `grad`.
    pub fn backward_batch(
        &self,
        params: &[f64],
        cache: &MlpCache,
        d_out: &Array2<f64>,
        grad: &mut [f64],
    ) {
        let act = self.spec.activation;
        let n_hidden = self.hidden.len();
        let last_in = cache
            .states
            .last()
            .map(|s| s.view())
            .unwrap_or(cache.input.view());
        let mut d_h = self.output.backward(params, &last_in, d_out, grad, n_hidden > 0);

        let mut d_u: Option<Array2<f64>> = None;
        let mut d_v: Option<Array2<f64>> = None;
        for l in (0..n_hidden).rev() {
            let dh = d_h.take().expect("hidden gradient");
            let (pre, z) = &cache.layers[l];
            let mut d_z = match &cache.encoders {
                None => dh,
                Some(e) => {
                    // h = u + z (v - u)
                    let mut dz = &e.v - &e.u;
                    dz *= &dh;
                    let mut du = dh.clone();
                    du.zip_mut_with(z, |g, &zz| *g *= 1.0 - zz);
                    let mut dv = dh;
                    dv *= z;
                    match (&mut d_u, &mut d_v) {
                        (Some(au), Some(av)) => {
                            *au += &du;
                            *av += &dv;
                        }
                        _ => {
                            d_u = Some(du);
                            d_v = Some(dv);
                        }
                    }
                    dz
                }
            };
            ndarray::Zip::from(&mut d_z)
                .and(pre)
                .and(z)
                .for_each(|g, &a, &zz| *g *= act.derivative(a, zz));
            let h_prev = if l == 0 {
                cache.input.view()
            } else {
                cache.states[l - 1].view()
            };
            d_h = self.hidden[l].backward(params, &h_prev, &d_z, grad, l > 0);
        }

        if let (Some((bu, bv)), Some(e)) = (self.encoders, &cache.encoders) {
            let x = cache.input.view();
            if let Some(mut du) = d_u {
                ndarray::Zip::from(&mut du)
                    .and(&e.pre_u)
                    .and(&e.u)
                    .for_each(|g, &a, &zz| *g *= act.derivative(a, zz));
                bu.backward(params, &x, &du, grad, false);
            }
            if let Some(mut dv) = d_v {
                ndarray::Zip::from(&mut dv)
                    .and(&e.pre_v)
                    .and(&e.v)
                    .for_each(|g, &a, &zz| *g *= act.derivative(a, zz));
                bv.backward(params, &x, &dv, grad, false);
            }
        }
    }
}

/// Copies a row-major matrix into a parameter slice.
pub fn set_block(params: &mut [f64], block: DenseBlock, weight: &[f64], bias: &[f64]) {
    params[block.weight_range()].copy_from_slice(weight);
    params[block.bias_range()].copy_from_slice(bias);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(input: usize, hidden: Vec<usize>, output: usize, arch: Architecture) -> NetworkSpec {
        NetworkSpec {
            input_dim: input,
            output_dim: output,
            hidden_layers: hidden,
            activation: Activation::LeakyRelu { slope: 0.01 },
            architecture: arch,
        }
    }

    #[test]
    fn identity_affine_without_hidden_layers() {
        let net = Mlp::new(spec(3, vec![], 3, Architecture::Plain), 0).unwrap();
        let mut p = vec![0.0; net.n_params()];
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        set_block(&mut p, net.output_block(), &eye, &[0.0; 3]);
        let out = net.forward(&p, &[0.3, -1.2, 7.0]).unwrap();
        assert_eq!(out, vec![0.3, -1.2, 7.0]);
    }

    #[test]
    fn hand_computed_two_two_one() {
        // hidden pre = (x1 - x2 + 0.1, 2 x1 + 0.5 x2 - 0.2); leaky 0.01
        // x = (1, 3): pre = (-1.9, 3.3) -> (-0.019, 3.3)
        // out = 2 * (-0.019) - 1 * 3.3 + 0.05 = -3.288
        let net = Mlp::new(spec(2, vec![2], 1, Architecture::Plain), 0).unwrap();
        let mut p = vec![0.0; net.n_params()];
        let blocks = net.blocks();
        // weight is fan_in x fan_out, row-major
        set_block(&mut p, blocks[0], &[1.0, 2.0, -1.0, 0.5], &[0.1, -0.2]);
        set_block(&mut p, blocks[1], &[2.0, -1.0], &[0.05]);
        let out = net.forward(&p, &[1.0, 3.0]).unwrap();
        assert!((out[0] - (-3.288)).abs() < 1e-12, "{out:?}");
    }

    #[test]
    fn modified_fc_with_zero_and_one_encoders_is_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plain = Mlp::new(spec(3, vec![5, 5], 2, Architecture::Plain), 0).unwrap();
        let modified = Mlp::new(spec(3, vec![5, 5], 2, Architecture::ModifiedFc), 0).unwrap();
        let mut pp = vec![0.0; plain.n_params()];
        plain.init_params(&mut pp, &mut rng);
        for v in pp.iter_mut() {
            *v += 0.01;
        }
        let mut pm = vec![0.0; modified.n_params()];
        let (bu, bv) = modified.encoder_blocks().unwrap();
        set_block(&mut pm, bu, &[0.0; 15], &[0.0; 5]);
        set_block(&mut pm, bv, &[0.0; 15], &[1.0; 5]);
        let shift = bu.len() + bv.len();
        pm[shift..].copy_from_slice(&pp);
        let x = [0.4, -0.9, 1.3];
        let a = plain.forward(&pp, &x).unwrap();
        let b = modified.forward(&pm, &x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn modified_fc_with_equal_encoders_bypasses_hidden_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(spec(3, vec![4, 4], 2, Architecture::ModifiedFc), 0).unwrap();
        let mut p = vec![0.0; net.n_params()];
        net.init_params(&mut p, &mut rng);
        let (bu, bv) = net.encoder_blocks().unwrap();
        let copy: Vec<f64> = p[bu.offset..bu.offset + bu.len()].to_vec();
        p[bv.offset..bv.offset + bv.len()].copy_from_slice(&copy);
        let x = [0.2, 0.5, -0.7];
        let out = net.forward(&p, &x).unwrap();
        // h = u for every layer, so out = W_out u + b_out
        let u = bu.affine(&p, &ArrayView2::from_shape((1, 3), &x).unwrap());
        let u = u.mapv(|a| if a > 0.0 { a } else { 0.01 * a });
        let expected = net.output_block().affine(&p, &u.view());
        for (a, b) in out.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(Mlp::new(spec(0, vec![3], 1, Architecture::Plain), 0).is_err());
        assert!(Mlp::new(spec(2, vec![], 1, Architecture::ModifiedFc), 0).is_err());
        assert!(Mlp::new(spec(2, vec![3, 4], 1, Architecture::ModifiedFc), 0).is_err());
        let mut s = spec(2, vec![3], 1, Architecture::Plain);
        s.activation = Activation::LeakyRelu { slope: 1.5 };
        assert!(Mlp::new(s, 0).is_err());
        let net = Mlp::new(spec(2, vec![3], 1, Architecture::Plain), 0).unwrap();
        let p = vec![0.0; net.n_params()];
        assert!(net.forward(&p, &[1.0]).is_err());
    }

    fn half_sq_loss(net: &Mlp, p: &[f64], x: &Array2<f64>) -> f64 {
        let (out, _) = net.forward_batch(p, x.view());
        out.iter().map(|v| 0.5 * v * v).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (seed, arch, act) in [
            (1, Architecture::Plain, Activation::Tanh),
            (2, Architecture::ModifiedFc, Activation::Tanh),
            (3, Architecture::ModifiedFc, Activation::LeakyRelu { slope: 0.1 }),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = spec(3, vec![6, 6, 6], 4, arch);
            s.activation = act;
            let net = Mlp::new(s, 0).unwrap();
            let mut p = vec![0.0; net.n_params()];
            net.init_params(&mut p, &mut rng);
            for v in p.iter_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
            let x = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
            let (out, cache) = net.forward_batch(&p, x.view());
            let mut g = vec![0.0; p.len()];
            net.backward_batch(&p, &cache, &out, &mut g);
            for i in 0..p.len() {
                let step = 1e-6;
                let mut pp = p.clone();
                pp[i] += step;
                let lp = half_sq_loss(&net, &pp, &x);
                pp[i] -= 2.0 * step;
                let lm = half_sq_loss(&net, &pp, &x);
                let fd = (lp - lm) / (2.0 * step);
                assert!(
                    (fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()),
                    "{arch:?} param {i}: fd {fd} analytic {}",
                    g[i]
                );
            }
        }
    }
}
