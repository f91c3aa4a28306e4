//! Vector fields: the true systems, their imperfect nominal models, the
//! model-error terms separating them, and the embedded 4-D systems used to
//! study invariant-manifold instability.

use std::f64::consts::PI;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{self, stream};

/// An autonomous vector field `x ↦ f(x)` on `R^dim`.
///
/// `eval_into` is the hot path used by the integrators; it may assume the
/// slices have length `dim()`. [`VectorField::eval`] checks the contract.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval_into(&self, x: &[f64], out: &mut [f64]);

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("vector field input", self.dim(), x.len())?;
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        Ok(out)
    }
}

impl<T: VectorField + ?Sized> VectorField for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).eval_into(x, out)
    }
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).eval_into(x, out)
    }
}

impl<T: VectorField + ?Sized> VectorField for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).eval_into(x, out)
    }
}

pub type SharedField = Arc<dyn VectorField>;

/// Wraps a closure as a vector field.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

/// `f ≡ 0`; the nominal model of the purely data-driven variants.
#[derive(Debug, Clone, Copy)]
pub struct ZeroField(pub usize);

impl VectorField for ZeroField {
    fn dim(&self) -> usize {
        self.0
    }
    fn eval_into(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

// ---------------------------------------------------------------------------
// Lorenz '63

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L63Params {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for L63Params {
    fn default() -> Self {
        Self {
            a: 10.0,
            b: 28.0,
            c: 8.0 / 3.0,
        }
    }
}

#[inline]
fn l63_into(p: &L63Params, x: &[f64], out: &mut [f64]) {
    let (ux, uy, uz) = (x[0], x[1], x[2]);
    out[0] = p.a * (uy - ux);
    out[1] = p.b * ux - uy - ux * uz;
    out[2] = -p.c * uz + ux * uy;
}

pub fn l63_rhs(x: &[f64], p: &L63Params) -> Result<[f64; 3]> {
    check_dim("l63_rhs", 3, x.len())?;
    let mut out = [0.0; 3];
    l63_into(p, x, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Lorenz63 {
    pub params: L63Params,
}

impl Lorenz63 {
    pub fn new(params: L63Params) -> Self {
        Self { params }
    }
}

impl VectorField for Lorenz63 {
    fn dim(&self) -> usize {
        3
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        l63_into(&self.params, x, out)
    }
}

// ---------------------------------------------------------------------------
// Model error

/// Recipe for the additive model error `m† = ε·m₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelErrorSpec {
    /// `m₁(x) = (0, b·u_x, 0)`: the nominal model is L63 with `b̃ = b(1−ε)`.
    Parametric { eps: f64 },
    /// `m₁` is an approximate sample from a zero-mean GP with a
    /// squared-exponential kernel, one independent scalar draw per output.
    GpDraw {
        eps: f64,
        lengthscale: f64,
        n_fourier: usize,
        seed: u64,
    },
}

impl ModelErrorSpec {
    pub fn eps(&self) -> f64 {
        match *self {
            ModelErrorSpec::Parametric { eps } | ModelErrorSpec::GpDraw { eps, .. } => eps,
        }
    }

    pub fn gp(eps: f64, seed: u64) -> Self {
        ModelErrorSpec::GpDraw {
            eps,
            lengthscale: 10.0,
            n_fourier: 256,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
enum ErrorKind {
    Parametric {
        b: f64,
    },
    /// Row-major frequencies `[out][term][in]` and phases `[out][term]`.
    Gp {
        n_fourier: usize,
        freqs: Vec<f64>,
        phases: Vec<f64>,
    },
}

/// A realized model-error field `x ↦ ε·m₁(x)`.
#[derive(Debug, Clone)]
pub struct ModelError {
    dim: usize,
    eps: f64,
    kind: ErrorKind,
}

impl ModelError {
    /// Realizes `spec` on `R^dim`. The parametric form needs `dim = 3` and
    /// takes `b` from `l63`.
    pub fn from_spec(spec: &ModelErrorSpec, dim: usize, l63: &L63Params) -> Result<Self> {
        match *spec {
            ModelErrorSpec::Parametric { eps } => {
                check_dim("parametric model error", 3, dim)?;
                Ok(Self {
                    dim,
                    eps,
                    kind: ErrorKind::Parametric { b: l63.b },
                })
            }
            ModelErrorSpec::GpDraw {
                eps,
                lengthscale,
                n_fourier,
                seed,
            } => {
                if !(lengthscale > 0.0) {
                    return Err(Error::invalid("GP lengthscale must be > 0"));
                }
                if n_fourier == 0 {
                    return Err(Error::invalid("n_fourier must be >= 1"));
                }
                let mut r = rng::rng(seed, stream::GP_ERROR);
                let mut freqs = Vec::with_capacity(dim * n_fourier * dim);
                let mut phases = Vec::with_capacity(dim * n_fourier);
                for _out in 0..dim {
                    for _term in 0..n_fourier {
                        for _inp in 0..dim {
                            let z: f64 = StandardNormal.sample(&mut r);
                            freqs.push(z / lengthscale);
                        }
                        phases.push(2.0 * PI * rand::Rng::random::<f64>(&mut r));
                    }
                }
                Ok(Self {
                    dim,
                    eps,
                    kind: ErrorKind::Gp {
                        n_fourier,
                        freqs,
                        phases,
                    },
                })
            }
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Lipschitz constant of `ε·m₁` in the Euclidean norm.
    ///
    /// For the GP draw each component has gradient norm at most
    /// `√(2/N)·Σ‖w_k‖`; the vector bound is the root-sum-square.
    pub fn lipschitz_bound(&self) -> f64 {
        match &self.kind {
            ErrorKind::Parametric { b } => self.eps.abs() * b.abs(),
            ErrorKind::Gp {
                n_fourier, freqs, ..
            } => {
                let amp = (2.0 / *n_fourier as f64).sqrt();
                let per_out: Vec<f64> = freqs
                    .chunks(n_fourier * self.dim)
                    .map(|block| {
                        amp * block
                            .chunks(self.dim)
                            .map(|w| w.iter().map(|v| v * v).sum::<f64>().sqrt())
                            .sum::<f64>()
                    })
                    .collect();
                self.eps.abs() * per_out.iter().map(|l| l * l).sum::<f64>().sqrt()
            }
        }
    }
}

impl VectorField for ModelError {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            ErrorKind::Parametric { b } => {
                out[0] = 0.0;
                out[1] = self.eps * b * x[0];
                out[2] = 0.0;
            }
            ErrorKind::Gp {
                n_fourier,
                freqs,
                phases,
            } => {
                let d = self.dim;
                let amp = (2.0 / *n_fourier as f64).sqrt();
                for (i, o) in out.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for k in 0..*n_fourier {
                        let w = &freqs[(i * n_fourier + k) * d..(i * n_fourier + k + 1) * d];
                        let arg: f64 =
                            w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + phases[i * n_fourier + k];
                        s += arg.cos();
                    }
                    *o = self.eps * amp * s;
                }
            }
        }
    }
}

pub fn model_error_eval(error: &ModelError, x: &[f64]) -> Result<Vec<f64>> {
    error.eval(x)
}

/// `f0 = f† − m†`.
pub struct NominalField<F> {
    truth: F,
    error: ModelError,
}

impl<F: VectorField> VectorField for NominalField<F> {
    fn dim(&self) -> usize {
        self.truth.dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.truth.eval_into(x, out);
        let mut m = [0.0; 16];
        if self.error.dim <= m.len() {
            let m = &mut m[..self.error.dim];
            self.error.eval_into(x, m);
            out.iter_mut().zip(m.iter()).for_each(|(o, mi)| *o -= mi);
        } else {
            let mut m = vec![0.0; self.error.dim];
            self.error.eval_into(x, &mut m);
            out.iter_mut().zip(m.iter()).for_each(|(o, mi)| *o -= mi);
        }
    }
}

pub fn nominal_rhs<F: VectorField>(truth: F, error: ModelError) -> Result<NominalField<F>> {
    check_dim("nominal_rhs", truth.dim(), error.dim)?;
    Ok(NominalField { truth, error })
}

// ---------------------------------------------------------------------------
// Lorenz '96 multiscale

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L96Params {
    pub k: usize,
    pub j: usize,
    pub h_x: f64,
    pub h_y: f64,
    pub forcing: f64,
    pub eps: f64,
}

impl Default for L96Params {
    fn default() -> Self {
        Self {
            k: 9,
            j: 8,
            h_x: -0.8,
            h_y: 1.0,
            forcing: 10.0,
            eps: 1.0 / 128.0,
        }
    }
}

impl L96Params {
    pub fn validate(&self) -> Result<()> {
        if self.k < 4 || self.j < 4 {
            return Err(Error::invalid("L96 requires K >= 4 and J >= 4"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("L96 scale separation eps must be > 0"));
        }
        Ok(())
    }

    /// Full state length `K + K·J`, laid out slow block first.
    pub fn state_dim(&self) -> usize {
        self.k + self.k * self.j
    }
}

#[inline]
fn l96_slow_into(p: &L96Params, x: &[f64], out: &mut [f64]) {
    let k = p.k;
    for i in 0..k {
        let xm1 = x[(i + k - 1) % k];
        let xm2 = x[(i + k - 2) % k];
        let xp1 = x[(i + 1) % k];
        out[i] = -xm1 * (xm2 - xp1) - x[i] + p.forcing;
    }
}

/// Slow nominal model `f_k(X) = −X_{k−1}(X_{k−2} − X_{k+1}) − X_k + F`.
pub fn l96_slow_nominal(x: &[f64], p: &L96Params) -> Result<Vec<f64>> {
    check_dim("l96_slow_nominal", p.k, x.len())?;
    let mut out = vec![0.0; p.k];
    l96_slow_into(p, x, &mut out);
    Ok(out)
}

/// Exact closure target `h_x·Ȳ_k` for each slow variable.
pub fn l96_true_residual(state: &[f64], p: &L96Params) -> Result<Vec<f64>> {
    check_dim("l96_true_residual", p.state_dim(), state.len())?;
    let y = &state[p.k..];
    Ok((0..p.k)
        .map(|k| p.h_x * y[k * p.j..(k + 1) * p.j].iter().sum::<f64>() / p.j as f64)
        .collect())
}

pub fn l96ms_rhs(state: &[f64], p: &L96Params) -> Result<Vec<f64>> {
    check_dim("l96ms_rhs", p.state_dim(), state.len())?;
    let mut out = vec![0.0; state.len()];
    Lorenz96Multiscale { params: *p }.eval_into(state, &mut out);
    Ok(out)
}

/// Two-scale L96 on the flat state `[X_1..X_K, Y_{1,1}..Y_{K,J}]`.
///
/// The fast variables form one ring of length `K·J` (`Y_{k,j+J} = Y_{k+1,j}`).
#[derive(Debug, Clone, Copy)]
pub struct Lorenz96Multiscale {
    pub params: L96Params,
}

impl Lorenz96Multiscale {
    pub fn new(params: L96Params) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl VectorField for Lorenz96Multiscale {
    fn dim(&self) -> usize {
        self.params.state_dim()
    }

    fn eval_into(&self, state: &[f64], out: &mut [f64]) {
        let p = &self.params;
        let (kk, jj) = (p.k, p.j);
        let (x, y) = state.split_at(kk);
        let (dx, dy) = out.split_at_mut(kk);
        l96_slow_into(p, x, dx);
        for k in 0..kk {
            let ybar = y[k * jj..(k + 1) * jj].iter().sum::<f64>() / jj as f64;
            dx[k] += p.h_x * ybar;
        }
        let n = kk * jj;
        let inv_eps = 1.0 / p.eps;
        for idx in 0..n {
            let k = idx / jj;
            let yp1 = y[(idx + 1) % n];
            let yp2 = y[(idx + 2) % n];
            let ym1 = y[(idx + n - 1) % n];
            dy[idx] = inv_eps * (-yp1 * (yp2 - ym1) - y[idx] + p.h_y * x[k]);
        }
    }
}

/// The slow-only nominal L96 field.
#[derive(Debug, Clone, Copy)]
pub struct Lorenz96Slow {
    pub params: L96Params,
}

impl VectorField for Lorenz96Slow {
    fn dim(&self) -> usize {
        self.params.k
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        l96_slow_into(&self.params, x, out)
    }
}

// ---------------------------------------------------------------------------
// Embedded 4-D systems

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddedVariant {
    /// Observe `u_x` with `f0 = −a·u_x`; the hidden `m` replaces `a·u_y`.
    A,
    /// Observe `u_z` with `f0 = −c·u_z`; the hidden `m` replaces `u_x·u_y`.
    B,
}

/// L63 lifted to `(u_x, u_y, u_z, m)` with an evolution equation for the error term.
#[derive(Debug, Clone, Copy)]
pub struct Embedded4d {
    pub variant: EmbeddedVariant,
    pub params: L63Params,
}

impl Embedded4d {
    /// Value of the hidden variable on the invariant manifold.
    pub fn manifold_m(&self, x: &[f64]) -> f64 {
        match self.variant {
            EmbeddedVariant::A => self.params.a * x[1],
            EmbeddedVariant::B => x[0] * x[1],
        }
    }
}

impl VectorField for Embedded4d {
    fn dim(&self) -> usize {
        4
    }

    fn eval_into(&self, s: &[f64], out: &mut [f64]) {
        let p = &self.params;
        let (ux, uy, uz, m) = (s[0], s[1], s[2], s[3]);
        match self.variant {
            EmbeddedVariant::A => {
                let dy = p.b * ux - uy - ux * uz;
                out[0] = -p.a * ux + m;
                out[1] = dy;
                out[2] = -p.c * uz + ux * uy;
                out[3] = p.a * dy;
            }
            EmbeddedVariant::B => {
                let dx = p.a * (uy - ux);
                let dy = p.b * ux - uy - ux * uz;
                out[0] = dx;
                out[1] = dy;
                out[2] = -p.c * uz + m;
                out[3] = ux * dy + uy * dx;
            }
        }
    }
}

pub fn embedded4d_rhs(variant: EmbeddedVariant, state: &[f64], p: &L63Params) -> Result<[f64; 4]> {
    check_dim("embedded4d_rhs", 4, state.len())?;
    let mut out = [0.0; 4];
    Embedded4d {
        variant,
        params: *p,
    }
    .eval_into(state, &mut out);
    Ok(out)
}
