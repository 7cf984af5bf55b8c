use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest standard deviation used when scaling.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension affine scaling of one vector kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Mean and population standard deviation of the rows, std floored.
    pub fn fit<'a, I>(rows: I, dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]> + Clone,
    {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        for r in rows.clone() {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Empty("normalization data"));
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| x * s + m)
            .collect()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.mean.len() != dim || self.std.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.mean.len(),
            });
        }
        if self.std.iter().any(|s| !(*s >= STD_FLOOR) || !s.is_finite())
            || self.mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::InvalidParameter("normalization std below floor".into()));
        }
        Ok(())
    }
}

/// Scalers for the branch input, trunk input and network output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub branch: Scaler,
    pub trunk: Scaler,
    pub output: Scaler,
}

impl NormalizationStats {
    pub fn identity(branch: usize, trunk: usize, output: usize) -> Self {
        Self {
            branch: Scaler::identity(branch),
            trunk: Scaler::identity(trunk),
            output: Scaler::identity(output),
        }
    }

    pub fn check_dims(&self, branch: usize, trunk: usize, output: usize) -> Result<()> {
        self.branch.validate(branch)?;
        self.trunk.validate(trunk)?;
        self.output.validate(output)
    }

    pub fn normalize_branch(&self, v: &[f64]) -> Vec<f64> {
        self.branch.normalize(v)
    }

    pub fn normalize_trunk(&self, v: &[f64]) -> Vec<f64> {
        self.trunk.normalize(v)
    }

    pub fn normalize_output(&self, v: &[f64]) -> Vec<f64> {
        self.output.normalize(v)
    }

    pub fn denormalize_output(&self, v: &[f64]) -> Vec<f64> {
        self.output.denormalize(v)
    }
}
