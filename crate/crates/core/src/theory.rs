//! Learning-theory diagnostics for the linear hypothesis class
//! `m(x) = Σ_ℓ θ_ℓ f_ℓ(x)`: the finite-data solve `A_T θ = b_T`, the excess
//! risk `R_T` and generalization error `G_T`, and their decay with `T`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::dynamics::{nominal_rhs, L63Params, Lorenz63, ModelError, ModelErrorSpec, SharedField, VectorField};
use crate::error::{check_dim, Error, Result};
use crate::features::{sample_feature_map, FeatureMap};
use crate::integrate::{integrate_uniform, sample_attractor_ics, IntegratorConfig};
use crate::linalg::{min_eigenvalue, pseudo_inverse_solve, solve_symmetric};
use crate::markovian::{build_residuals_ct, ResidualDataset};
use crate::rng::{self, derive_seed, stream};

/// Rows per partial sum; partial sums are added in index order so results
/// do not depend on the thread count.
const CHUNK_ROWS: usize = 8192;

/// A tanh feature map with `D = d_x`, used as one vector field `R^d → R^d`.
#[derive(Debug, Clone)]
pub struct FeatureField(pub FeatureMap);

impl VectorField for FeatureField {
    fn dim(&self) -> usize {
        self.0.d_x()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.0.eval_into(x, out)
    }
}

/// An ordered list of `p` vector fields spanning the hypothesis class.
#[derive(Clone)]
pub struct Dictionary {
    fields: Vec<SharedField>,
    d_x: usize,
}

impl std::fmt::Debug for Dictionary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dictionary").field("p", &self.fields.len()).field("d_x", &self.d_x).finish()
    }
}

impl Dictionary {
    pub fn new(fields: Vec<SharedField>) -> Result<Self> {
        let d_x = fields.first().ok_or_else(|| Error::invalid("dictionary needs p >= 1"))?.dim();
        if fields.iter().any(|f| f.dim() != d_x) {
            return Err(Error::invalid("dictionary fields must share their dimension"));
        }
        Ok(Self { fields, d_x })
    }

    /// `p` i.i.d. random fields `f_ℓ(x) = tanh(W_ℓ x + b_ℓ)`, `W_ℓ ∈ R^{d×d}`.
    pub fn random_tanh(d_x: usize, p: usize, omega: f64, beta: f64, seed: u64) -> Result<Self> {
        let fields = (0..p as u64)
            .map(|l| {
                let map = sample_feature_map(d_x, d_x, omega, beta, derive_seed(seed ^ stream::DICTIONARY, l))?;
                Ok(Arc::new(FeatureField(map)) as SharedField)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(fields)
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn fields(&self) -> &[SharedField] {
        &self.fields
    }

    /// `m(x; θ) = Σ θ_ℓ f_ℓ(x)`.
    pub fn eval(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        check_dim("dictionary coefficients", self.len(), theta.len())?;
        check_dim("dictionary input", self.d_x, x.len())?;
        let mut out = vec![0.0; self.d_x];
        let mut buf = vec![0.0; self.d_x];
        for (f, t) in self.fields.iter().zip(theta) {
            f.eval_into(x, &mut buf);
            for (o, v) in out.iter_mut().zip(&buf) {
                *o += t * v;
            }
        }
        Ok(out)
    }
}

/// The solve `A θ = b` on one dataset plus what is needed to evaluate the
/// empirical loss `I(θ) = mean ‖m† − Σθ_ℓ f_ℓ‖² = θᵀAθ − 2bᵀθ + c` anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHypothesisFit {
    pub theta: Vec<f64>,
    /// Row-major `p × p`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// `mean ‖m†‖²`.
    pub c: f64,
    /// Time span of the data.
    pub horizon: f64,
    pub n_samples: usize,
}

impl LinearHypothesisFit {
    pub fn p(&self) -> usize {
        self.b.len()
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.p(), self.p(), &self.a)
    }

    /// Empirical loss of `theta` on this fit's data.
    pub fn loss(&self, theta: &[f64]) -> f64 {
        let t = DVector::from_column_slice(theta);
        let b = DVector::from_column_slice(&self.b);
        (t.transpose() * self.a_matrix() * &t)[0] - 2.0 * b.dot(&t) + self.c
    }
}

fn chunk_sums(ds: &ResidualDataset, dict: &Dictionary, range: std::ops::Range<usize>) -> (DMatrix<f64>, DVector<f64>) {
    let (p, d) = (dict.len(), dict.d_x());
    let mut a = DMatrix::zeros(p, p);
    let mut b = DVector::zeros(p);
    let mut g = DMatrix::zeros(d, p);
    let mut x = vec![0.0; d];
    let mut buf = vec![0.0; d];
    for i in range {
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = ds.inputs[(i, j)];
        }
        for (l, f) in dict.fields().iter().enumerate() {
            f.eval_into(&x, &mut buf);
            g.column_mut(l).copy_from_slice(&buf);
        }
        a.gemm_tr(1.0, &g, &g, 1.0);
        let target = ds.targets.row(i).transpose();
        b.gemv_tr(1.0, &g, &target, 1.0);
    }
    (a, b)
}

/// `A_ij = mean ⟨f_i, f_j⟩`, `b_j = mean ⟨m†, f_j⟩` over the samples of `ds`
/// (uniform grid ⇒ left-Riemann = sample mean), then `θ = A⁻¹b`. A
/// numerically singular `A` is solved by truncated pseudo-inverse, giving the
/// minimum-norm minimizer.
pub fn fit_theta(ds: &ResidualDataset, dict: &Dictionary) -> Result<LinearHypothesisFit> {
    check_dim("linear hypothesis inputs", dict.d_x(), ds.d_x())?;
    check_dim("linear hypothesis targets", dict.d_x(), ds.d_out())?;
    let n = ds.len();
    if n == 0 {
        return Err(Error::invalid("fit_theta needs at least one sample"));
    }
    let p = dict.len();
    let chunks: Vec<(DMatrix<f64>, DVector<f64>)> = (0..n.div_ceil(CHUNK_ROWS))
        .into_par_iter()
        .map(|k| chunk_sums(ds, dict, k * CHUNK_ROWS..((k + 1) * CHUNK_ROWS).min(n)))
        .collect();
    let mut a = DMatrix::zeros(p, p);
    let mut b = DVector::zeros(p);
    for (ca, cb) in &chunks {
        a += ca;
        b += cb;
    }
    let inv_n = 1.0 / n as f64;
    let a = (&a + a.transpose()) * (0.5 * inv_n);
    let b = b * inv_n;
    let bm = DMatrix::from_column_slice(p, 1, b.as_slice());
    let scale = a.trace().abs().max(f64::MIN_POSITIVE);
    let theta = if min_eigenvalue(&a) <= 1e-12 * scale {
        pseudo_inverse_solve(&a, &bm)?
    } else {
        solve_symmetric(&a, &bm)?.0
    };
    let resid = (&a * &theta - &bm).norm();
    if resid > 1e-8 * (b.norm() + 1.0) {
        return Err(Error::Numerical(format!("A θ = b residual {resid:e} too large")));
    }
    let horizon = match (ds.times.first(), ds.times.last()) {
        (Some(t0), Some(t1)) => t1 - t0,
        _ => 0.0,
    };
    Ok(LinearHypothesisFit {
        theta: theta.as_slice().to_vec(),
        a: a.transpose().as_slice().to_vec(),
        b: b.as_slice().to_vec(),
        c: ds.targets.norm_squared() * inv_n,
        horizon,
        n_samples: n,
    })
}

/// `R̂_T = Î∞(θ_T) − Î∞(θ_ref)` and `Ĝ_T = I_T(θ_T) − Î∞(θ_T)`, with `Î∞` the
/// empirical loss on the long reference dataset behind `reference`.
pub fn estimate_risks(fit_t: &LinearHypothesisFit, reference: &LinearHypothesisFit) -> Result<(f64, f64)> {
    check_dim("risk estimate", reference.p(), fit_t.p())?;
    let i_inf_t = reference.loss(&fit_t.theta);
    let r_hat = i_inf_t - reference.loss(&reference.theta);
    let g_hat = fit_t.loss(&fit_t.theta) - i_inf_t;
    Ok((r_hat, g_hat))
}

/// The system and dictionary behind a scaling experiment (L63 truth with
/// an additive model error; the nominal model is truth minus error).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingProblem {
    pub l63: L63Params,
    pub error: ModelErrorSpec,
    pub p: usize,
    pub omega: f64,
    pub beta: f64,
    pub dt: f64,
    /// Keep every `stride`-th residual sample (targets are still computed
    /// on the `dt` grid).
    pub stride: usize,
    pub t_grid: Vec<f64>,
    pub n_seeds: usize,
    /// Reference horizon as a multiple of `max(t_grid)`.
    pub reference_multiple: f64,
    pub spinup: f64,
    pub bootstrap: usize,
    pub seed: u64,
    pub integrator: IntegratorConfig,
}

impl Default for ScalingProblem {
    fn default() -> Self {
        Self {
            l63: L63Params::default(),
            error: ModelErrorSpec::Parametric { eps: 0.05 },
            p: 1,
            omega: 0.05,
            beta: 1.0,
            dt: 0.01,
            stride: 50,
            t_grid: vec![16.0, 32.0, 64.0, 128.0, 256.0],
            n_seeds: 8,
            reference_multiple: 64.0,
            spinup: 20.0,
            bootstrap: 1000,
            seed: 0,
            integrator: IntegratorConfig::dopri(1e-8, 1e-8, 0.01),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    #[serde(rename = "T")]
    pub t: f64,
    pub seed: usize,
    #[serde(rename = "R_hat")]
    pub r_hat: f64,
    #[serde(rename = "G_hat")]
    pub g_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// `(T, median(R̂_T + |Ĝ_T|))`.
    pub medians: Vec<(f64, f64)>,
    pub slope: f64,
    /// Percentile bootstrap interval over seeds; `None` with one seed.
    pub ci: Option<(f64, f64)>,
    pub ci_defined: bool,
    pub reference_horizon: f64,
}

impl ScalingReport {
    /// Summary `{slope, ci_low, ci_high}` (the bounds are null when undefined).
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "slope": self.slope,
            "ci_low": self.ci.map(|c| c.0),
            "ci_high": self.ci.map(|c| c.1),
            "ci_defined": self.ci_defined,
            "reference_horizon": self.reference_horizon,
        })
    }

    pub fn table(&self) -> String {
        let mut s = String::from("T,seed,R_hat,G_hat\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:e},{:e}\n", r.t, r.seed, r.r_hat, r.g_hat));
        }
        s
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope of `y` against `x`.
pub fn regression_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if x.len() < 2 || !(sxx > 0.0) {
        return Err(Error::invalid("degenerate regression: fewer than two distinct abscissae"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

fn log_log_slope(t_grid: &[f64], medians: &[f64]) -> Result<f64> {
    if medians.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::Numerical("non-positive median risk; log-log fit undefined".into()));
    }
    let lx: Vec<f64> = t_grid.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = medians.iter().map(|m| m.ln()).collect();
    regression_slope(&lx, &ly)
}

/// Residual dataset for the problem on `[0, horizon]` from `x0`.
fn problem_dataset(problem: &ScalingProblem, nominal: &SharedField, x0: &[f64], horizon: f64) -> Result<ResidualDataset> {
    let truth = Lorenz63::new(problem.l63);
    let traj = integrate_uniform(&truth, x0, horizon, problem.dt, &problem.integrator)?;
    let ds = build_residuals_ct(&traj, nominal.as_ref())?;
    if problem.stride <= 1 {
        return Ok(ds);
    }
    let keep: Vec<usize> = (0..ds.len()).step_by(problem.stride).collect();
    ResidualDataset::new(
        keep.iter().map(|&i| ds.times[i]).collect(),
        ds.inputs.select_rows(&keep),
        ds.targets.select_rows(&keep),
        ds.mode,
    )
}

/// For every `T` and seed: fit `θ_T` on a fresh window started from an
/// attractor-sampled state, estimate `(R̂_T, Ĝ_T)` against a reference fit on
/// a `reference_multiple·max(T)` trajectory, and regress
/// `log median(R̂_T + |Ĝ_T|)` on `log T`.
pub fn scaling_experiment(problem: &ScalingProblem) -> Result<ScalingReport> {
    if problem.t_grid.is_empty() || problem.n_seeds == 0 {
        return Err(Error::invalid("scaling experiment needs a T grid and at least one seed"));
    }
    let error = ModelError::from_spec(&problem.error, 3, &problem.l63)?;
    let nominal: SharedField = Arc::new(nominal_rhs(Lorenz63::new(problem.l63), error)?);
    let dict = Dictionary::random_tanh(3, problem.p, problem.omega, problem.beta, problem.seed)?;
    let t_max = problem.t_grid.iter().copied().fold(0.0, f64::max);
    let t_ref = problem.reference_multiple * t_max;
    let bounds = [(-15.0, 15.0), (-20.0, 20.0), (5.0, 40.0)];
    let truth = Lorenz63::new(problem.l63);
    let ics = sample_attractor_ics(
        &truth,
        problem.n_seeds + 1,
        problem.spinup,
        &bounds,
        derive_seed(problem.seed, 1),
        &problem.integrator,
    )?;
    let reference = fit_theta(&problem_dataset(problem, &nominal, &ics[problem.n_seeds], t_ref)?, &dict)?;

    let cells: Vec<(usize, usize)> = (0..problem.t_grid.len())
        .flat_map(|ti| (0..problem.n_seeds).map(move |s| (ti, s)))
        .collect();
    let rows: Vec<ScalingRow> = cells
        .par_iter()
        .map(|&(ti, s)| {
            let t = problem.t_grid[ti];
            let fit = fit_theta(&problem_dataset(problem, &nominal, &ics[s], t)?, &dict)?;
            let (r_hat, g_hat) = estimate_risks(&fit, &reference)?;
            Ok(ScalingRow { t, seed: s, r_hat, g_hat })
        })
        .collect::<Result<_>>()?;

    let score = |r: &ScalingRow| r.r_hat.max(0.0) + r.g_hat.abs();
    let per_t: Vec<Vec<f64>> = (0..problem.t_grid.len())
        .map(|ti| rows[ti * problem.n_seeds..(ti + 1) * problem.n_seeds].iter().map(score).collect())
        .collect();
    let medians: Vec<f64> = per_t.iter().map(|v| median(&mut v.clone())).collect();
    let slope = log_log_slope(&problem.t_grid, &medians)?;

    let ci = if problem.n_seeds > 1 && problem.bootstrap > 0 {
        let mut r = rng::rng(problem.seed, stream::BOOTSTRAP);
        let mut slopes = Vec::with_capacity(problem.bootstrap);
        for _ in 0..problem.bootstrap {
            let meds: Vec<f64> = per_t
                .iter()
                .map(|v| {
                    let mut resample: Vec<f64> = (0..v.len()).map(|_| v[r.random_range(0..v.len())]).collect();
                    median(&mut resample)
                })
                .collect();
            if let Ok(s) = log_log_slope(&problem.t_grid, &meds) {
                slopes.push(s);
            }
        }
        slopes.sort_by(f64::total_cmp);
        if slopes.is_empty() {
            None
        } else {
            let q = |f: f64| slopes[((f * (slopes.len() - 1) as f64).round() as usize).min(slopes.len() - 1)];
            Some((q(0.025), q(0.975)))
        }
    } else {
        None
    };
    Ok(ScalingReport {
        rows,
        medians: problem.t_grid.iter().copied().zip(medians).collect(),
        slope,
        ci_defined: ci.is_some(),
        ci,
        reference_horizon: t_ref,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markovian::Mode;

    fn dataset(horizon: f64, eps: f64) -> (ResidualDataset, ModelError) {
        let error = ModelError::from_spec(&ModelErrorSpec::Parametric { eps }, 3, &L63Params::default()).unwrap();
        let nominal: SharedField = Arc::new(nominal_rhs(Lorenz63::default(), error.clone()).unwrap());
        let problem = ScalingProblem {
            stride: 1,
            ..ScalingProblem::default()
        };
        (problem_dataset(&problem, &nominal, &[-5.9, -5.5, 24.5], horizon).unwrap(), error)
    }

    #[test]
    fn truth_in_span_gives_unit_coefficient() {
        let (ds, error) = dataset(20.0, 0.05);
        let dict = Dictionary::new(vec![Arc::new(error)]).unwrap();
        let fit = fit_theta(&ds, &dict).unwrap();
        assert!((fit.theta[0] - 1.0).abs() < 1e-4, "theta {}", fit.theta[0]);
        let a = fit.a_matrix();
        assert!(min_eigenvalue(&a) >= 0.0);
    }

    #[test]
    fn zero_targets_give_zero_theta() {
        let (mut ds, _) = dataset(5.0, 0.05);
        ds.targets.fill(0.0);
        let dict = Dictionary::random_tanh(3, 5, 0.05, 1.0, 1).unwrap();
        let fit = fit_theta(&ds, &dict).unwrap();
        assert!(fit.theta.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn duplicated_field_gives_minimum_norm_split() {
        let (ds, error) = dataset(10.0, 0.05);
        let f: SharedField = Arc::new(error);
        let dict = Dictionary::new(vec![f.clone(), f]).unwrap();
        let fit = fit_theta(&ds, &dict).unwrap();
        assert!((fit.theta[0] - fit.theta[1]).abs() < 1e-8);
        assert!((fit.theta[0] + fit.theta[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn risks_vanish_at_the_reference_and_scale_quadratically() {
        let (ds, _) = dataset(10.0, 0.05);
        let (long, _) = dataset(80.0, 0.05);
        let dict = Dictionary::random_tanh(3, 8, 0.05, 1.0, 2).unwrap();
        let reference = fit_theta(&long, &dict).unwrap();
        let (r0, _) = estimate_risks(&reference, &reference).unwrap();
        assert_eq!(r0, 0.0);
        let fit = fit_theta(&ds, &dict).unwrap();
        let (r, g) = estimate_risks(&fit, &reference).unwrap();
        assert!(r >= -1e-6 * reference.loss(&reference.theta));

        let double = |d: &ResidualDataset| {
            let mut d = d.clone();
            d.targets *= 2.0;
            d
        };
        let reference2 = fit_theta(&double(&long), &dict).unwrap();
        let fit2 = fit_theta(&double(&ds), &dict).unwrap();
        let (r2, g2) = estimate_risks(&fit2, &reference2).unwrap();
        assert!((r2 / r - 4.0).abs() < 0.4, "{r2} / {r}");
        assert!((g2 / g - 4.0).abs() < 0.4, "{g2} / {g}");
    }

    #[test]
    fn reference_minimizes_its_own_loss() {
        let (long, _) = dataset(40.0, 0.05);
        let dict = Dictionary::random_tanh(3, 6, 0.05, 1.0, 3).unwrap();
        let reference = fit_theta(&long, &dict).unwrap();
        let best = reference.loss(&reference.theta);
        let mut r = rng::rng(4, stream::TUNING);
        for _ in 0..50 {
            let theta: Vec<f64> = reference.theta.iter().map(|t| t + 0.1 * rng::symmetric_uniform(&mut r, 1.0)).collect();
            assert!(reference.loss(&theta) >= best - 1e-12 * best.abs().max(1.0));
        }
    }

    #[test]
    fn regression_rejects_degenerate_grids() {
        assert!(regression_slope(&[1.0, 1.0], &[2.0, 3.0]).is_err());
        assert!((regression_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_seed_flags_undefined_interval() {
        let problem = ScalingProblem {
            t_grid: vec![4.0, 8.0],
            n_seeds: 1,
            reference_multiple: 4.0,
            spinup: 5.0,
            p: 4,
            ..ScalingProblem::default()
        };
        let rep = scaling_experiment(&problem).unwrap();
        assert!(!rep.ci_defined && rep.ci.is_none());
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.summary_json()["ci_low"].is_null());
    }

    #[test]
    fn fit_is_independent_of_chunking() {
        let (ds, _) = dataset(100.0, 0.05);
        assert!(ds.len() > CHUNK_ROWS);
        let dict = Dictionary::random_tanh(3, 4, 0.05, 1.0, 5).unwrap();
        let fit = fit_theta(&ds, &dict).unwrap();
        let (a, b) = chunk_sums(&ds, &dict, 0..ds.len());
        let n = ds.len() as f64;
        for i in 0..4 {
            assert!((fit.b[i] - b[i] / n).abs() < 1e-12);
            for j in 0..4 {
                assert!((fit.a[i * 4 + j] - a[(i, j)] / n).abs() < 1e-12);
            }
        }
        assert_eq!(ds.mode, Mode::ContinuousTime);
    }
}
