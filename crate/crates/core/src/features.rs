//! Random feature maps `φ(x) = tanh(Wx + b)` with `W ~ U(−ω, ω)`, `b ~ U(−β, β)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{self, stream};

/// What gets written to disk: the matrices are regenerated from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapDescriptor {
    pub d_x: usize,
    #[serde(rename = "D")]
    pub n_features: usize,
    pub omega: f64,
    pub beta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FeatureMapDescriptor", try_from = "FeatureMapDescriptor")]
pub struct FeatureMap {
    desc: FeatureMapDescriptor,
    /// `D × d_x`
    w: DMatrix<f64>,
    b: DVector<f64>,
}

impl From<FeatureMap> for FeatureMapDescriptor {
    fn from(m: FeatureMap) -> Self {
        m.desc
    }
}

impl TryFrom<FeatureMapDescriptor> for FeatureMap {
    type Error = Error;
    fn try_from(d: FeatureMapDescriptor) -> Result<Self> {
        sample_feature_map(d.d_x, d.n_features, d.omega, d.beta, d.seed)
    }
}

/// Draws `D` i.i.d. features `(w_i, b_i)`; feature `i` consumes `d_x + 1`
/// consecutive uniforms, so maps with the same seed share their prefix.
pub fn sample_feature_map(d_x: usize, n_features: usize, omega: f64, beta: f64, seed: u64) -> Result<FeatureMap> {
    if n_features == 0 || d_x == 0 {
        return Err(Error::invalid("feature map needs D >= 1 and d_x >= 1"));
    }
    if !(omega >= 0.0 && beta >= 0.0) || !omega.is_finite() || !beta.is_finite() {
        return Err(Error::invalid("omega and beta must be finite and non-negative"));
    }
    let mut r = rng::rng(seed, stream::FEATURES);
    let mut w = DMatrix::zeros(n_features, d_x);
    let mut b = DVector::zeros(n_features);
    for i in 0..n_features {
        for j in 0..d_x {
            w[(i, j)] = rng::symmetric_uniform(&mut r, omega);
        }
        b[i] = rng::symmetric_uniform(&mut r, beta);
    }
    Ok(FeatureMap {
        desc: FeatureMapDescriptor {
            d_x,
            n_features,
            omega,
            beta,
            seed,
        },
        w,
        b,
    })
}

impl FeatureMap {
    pub fn descriptor(&self) -> FeatureMapDescriptor {
        self.desc
    }

    pub fn d_x(&self) -> usize {
        self.desc.d_x
    }

    pub fn n_features(&self) -> usize {
        self.desc.n_features
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn biases(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.desc.d_x;
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = self.b[i];
            for j in 0..d {
                s += self.w[(i, j)] * x[j];
            }
            *o = s.tanh();
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim("feature map input", self.desc.d_x, x.len())?;
        let mut out = DVector::zeros(self.desc.n_features);
        self.eval_into(x, out.as_mut_slice());
        Ok(out)
    }

    /// Features of every row of `inputs` (`n × d_x`), as an `n × D` matrix.
    pub fn eval_rows(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("feature map batch", self.desc.d_x, inputs.ncols())?;
        let mut phi = inputs * self.w.transpose();
        for mut row in phi.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.b.iter()) {
                *v = (*v + b).tanh();
            }
        }
        Ok(phi)
    }
}

pub fn eval_features(map: &FeatureMap, x: &[f64]) -> Result<DVector<f64>> {
    map.eval(x)
}
