//! Memoryless closures `m(x) = Cφ(x)` fitted by random-feature ridge
//! regression, in continuous time (`ẋ ≈ f0(x) + m(x)`) and discrete time
//! (`x_{k+1} ≈ Ψ0(x_k) + m(x_k)`).

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{SharedField, VectorField, ZeroField};
use crate::error::{check_dim, Error, Result};
use crate::features::{sample_feature_map, FeatureMap, FeatureMapDescriptor};
use crate::integrate::{
    fit_spline, integrate_partial, uniform_grid, DiscreteMap, FlowMap, IntegratorConfig, PartialTrajectory, ZeroMap,
};
use crate::linalg::solve_symmetric;
use crate::metrics::validity_time_partial;
use crate::rng::{self, stream};
use crate::trajectory::Trajectory;

/// Rows of feature matrix formed at once while accumulating `Z`, `Y`.
const CHUNK_ROWS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    ContinuousTime,
    DiscreteTime { dt: f64 },
}

/// Regression pairs `(x_i, target_i)` for a closure fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDataset {
    pub times: Vec<f64>,
    /// `n × d_x`
    pub inputs: DMatrix<f64>,
    /// `n × d_out`
    pub targets: DMatrix<f64>,
    pub mode: Mode,
}

impl ResidualDataset {
    pub fn new(times: Vec<f64>, inputs: DMatrix<f64>, targets: DMatrix<f64>, mode: Mode) -> Result<Self> {
        if inputs.nrows() != targets.nrows() || inputs.nrows() != times.len() {
            return Err(Error::invalid(format!(
                "residual dataset rows disagree: {} times, {} inputs, {} targets",
                times.len(),
                inputs.nrows(),
                targets.nrows()
            )));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("residual dataset has non-finite entries"));
        }
        Ok(Self {
            times,
            inputs,
            targets,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_x(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.targets.ncols()
    }

    /// Root-mean-square of the target vectors, `sqrt(mean ‖target‖²)`.
    pub fn target_rms(&self) -> f64 {
        (self.targets.norm_squared() / self.len().max(1) as f64).sqrt()
    }

    /// Stacks datasets with identical shapes and modes.
    pub fn pooled(parts: &[ResidualDataset]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to pool"))?;
        let (dx, dout) = (first.d_x(), first.d_out());
        if parts.iter().any(|p| p.d_x() != dx || p.d_out() != dout || p.mode != first.mode) {
            return Err(Error::invalid("pooled datasets must share shape and mode"));
        }
        let n: usize = parts.iter().map(|p| p.len()).sum();
        let mut inputs = DMatrix::zeros(n, dx);
        let mut targets = DMatrix::zeros(n, dout);
        let mut times = Vec::with_capacity(n);
        let mut row = 0;
        for p in parts {
            inputs.rows_mut(row, p.len()).copy_from(&p.inputs);
            targets.rows_mut(row, p.len()).copy_from(&p.targets);
            times.extend_from_slice(&p.times);
            row += p.len();
        }
        Ok(Self {
            times,
            inputs,
            targets,
            mode: first.mode,
        })
    }

    /// Reinterprets a `K`-dimensional dataset as `n·K` scalar pairs
    /// `(x_{i,k}, target_{i,k})`, ordered time-major.
    pub fn shared_scalar(&self) -> Result<Self> {
        check_dim("shared scalar closure", self.d_x(), self.d_out())?;
        let k = self.d_x();
        let n = self.len();
        let inputs = DMatrix::from_fn(n * k, 1, |r, _| self.inputs[(r / k, r % k)]);
        let targets = DMatrix::from_fn(n * k, 1, |r, _| self.targets[(r / k, r % k)]);
        let times = (0..n * k).map(|r| self.times[r / k]).collect();
        Ok(Self {
            times,
            inputs,
            targets,
            mode: self.mode,
        })
    }
}

fn dataset_from_rows(
    times: Vec<f64>,
    d_x: usize,
    inputs: impl Iterator<Item = f64>,
    targets: Vec<f64>,
    mode: Mode,
) -> Result<ResidualDataset> {
    let n = times.len();
    let inputs = DMatrix::from_row_iterator(n, d_x, inputs);
    let d_out = targets.len().checked_div(n).unwrap_or(d_x);
    let targets = DMatrix::from_row_slice(n, d_out, &targets);
    ResidualDataset::new(times, inputs, targets, mode)
}

/// Continuous-time targets `ẋ(t_i) − f0(x(t_i))` at interior samples, with
/// `ẋ` from a not-a-knot cubic spline through the data; both end samples are
/// dropped to avoid spline boundary bias.
pub fn build_residuals_ct<F: VectorField + ?Sized>(traj: &Trajectory, f0: &F) -> Result<ResidualDataset> {
    check_dim("continuous-time residuals", f0.dim(), traj.dim())?;
    if traj.len() < 4 {
        return Err(Error::invalid("continuous-time residuals need at least 4 samples"));
    }
    let spline = fit_spline(traj)?;
    let d = traj.dim();
    let interior = 1..traj.len() - 1;
    let mut targets = Vec::with_capacity(interior.len() * d);
    let mut nominal = vec![0.0; d];
    for i in interior.clone() {
        let deriv = spline.derivative_at_knot(i);
        f0.eval_into(traj.state(i), &mut nominal);
        targets.extend(deriv.iter().zip(&nominal).map(|(a, b)| a - b));
    }
    let times = traj.times()[interior.clone()].to_vec();
    let inputs = interior.flat_map(|i| traj.state(i).to_vec());
    dataset_from_rows(times, d, inputs, targets, Mode::ContinuousTime)
}

/// Discrete-time targets `x_{k+1} − Ψ0(x_k)`, `k = 0..n−2`, on a uniform grid.
pub fn build_residuals_dt<M: DiscreteMap + ?Sized>(traj: &Trajectory, psi0: &M) -> Result<ResidualDataset> {
    check_dim("discrete-time residuals", psi0.dim(), traj.dim())?;
    let dt = traj
        .uniform_step()
        .ok_or_else(|| Error::invalid("discrete-time residuals need a uniform time grid"))?;
    if traj.len() < 2 {
        return Err(Error::invalid("discrete-time residuals need at least 2 samples"));
    }
    let n = traj.len() - 1;
    let images: Vec<Vec<f64>> = (0..n).into_par_iter().map(|k| psi0.apply(traj.state(k))).collect::<Result<_>>()?;
    let targets = images
        .iter()
        .enumerate()
        .flat_map(|(k, img)| traj.state(k + 1).iter().zip(img).map(|(a, b)| a - b).collect::<Vec<_>>())
        .collect();
    let times = traj.times()[..n].to_vec();
    let inputs = (0..n).flat_map(|k| traj.state(k).to_vec());
    dataset_from_rows(times, traj.dim(), inputs, targets, Mode::DiscreteTime { dt })
}

/// Time-averaged Gram quantities `Z = mean φφᵀ`, `Y = mean φ·targetᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    /// `D × D`
    pub z: DMatrix<f64>,
    /// `D × d_out`
    pub y: DMatrix<f64>,
    pub n_samples: usize,
    /// `mean ‖target‖²`, so the objective can be evaluated without the data.
    pub target_energy: f64,
}

impl NormalEquations {
    /// `J(C) = 1/(2n) Σ ‖target_i − Cφ(x_i)‖² + λ/2 ‖C‖²_F`.
    pub fn objective(&self, c: &DMatrix<f64>, lambda: f64) -> f64 {
        let cross = (c * &self.y).trace();
        let quad = (c * &self.z).component_mul(c).sum();
        (0.5 * (self.target_energy - 2.0 * cross + quad)).max(0.0) + 0.5 * lambda * c.norm_squared()
    }
}

pub fn accumulate_normal_equations(ds: &ResidualDataset, map: &FeatureMap) -> Result<NormalEquations> {
    check_dim("normal equations", map.d_x(), ds.d_x())?;
    let n = ds.len();
    if n == 0 {
        return Err(Error::invalid("normal equations need at least one sample"));
    }
    let dim_features = map.n_features();
    let mut z = DMatrix::zeros(dim_features, dim_features);
    let mut y = DMatrix::zeros(dim_features, ds.d_out());
    let mut start = 0;
    while start < n {
        let len = CHUNK_ROWS.min(n - start);
        let phi = map.eval_rows(&ds.inputs.rows(start, len).into_owned())?;
        z.gemm_tr(1.0, &phi, &phi, 1.0);
        y.gemm_tr(1.0, &phi, &ds.targets.rows(start, len), 1.0);
        start += len;
    }
    let inv_n = 1.0 / n as f64;
    let z_sym = (&z + z.transpose()) * (0.5 * inv_n);
    Ok(NormalEquations {
        z: z_sym,
        y: y * inv_n,
        n_samples: n,
        target_energy: ds.targets.norm_squared() * inv_n,
    })
}

/// `m(x) = Cφ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClosure {
    /// `d_out × D`
    c: DMatrix<f64>,
    map: FeatureMap,
    lambda: f64,
}

impl LinearClosure {
    pub fn new(c: DMatrix<f64>, map: FeatureMap, lambda: f64) -> Result<Self> {
        check_dim("closure coefficients", map.n_features(), c.ncols())?;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("closure coefficients are not finite".into()));
        }
        Ok(Self { c, map, lambda })
    }

    pub fn zero(map: FeatureMap, d_out: usize) -> Self {
        let c = DMatrix::zeros(d_out, map.n_features());
        Self { c, map, lambda: 0.0 }
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn d_out(&self) -> usize {
        self.c.nrows()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let mut phi = vec![0.0; self.map.n_features()];
        self.map.eval_into(x, &mut phi);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.c.row(i).iter().zip(&phi).map(|(c, p)| c * p).sum();
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("closure input", self.map.d_x(), x.len())?;
        let mut out = vec![0.0; self.d_out()];
        self.eval_into(x, &mut out);
        Ok(out)
    }
}

/// Solves `(Z + λI)Cᵀ = Y` (Cholesky, then truncated pseudo-inverse).
///
/// `λ = 0` is accepted; with a rank-deficient `Z` it yields the
/// minimum-norm minimizer.
pub fn solve_ridge(ne: &NormalEquations, map: &FeatureMap, lambda: f64) -> Result<LinearClosure> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("ridge parameter must be finite and >= 0, got {lambda}")));
    }
    check_dim("ridge features", map.n_features(), ne.z.nrows())?;
    LinearClosure::new(ridge_coefficients(ne, lambda)?, map.clone(), lambda)
}

/// The ridge minimizer `C` (`d_out × D`) of `(Z + λI)Cᵀ = Y`.
pub fn ridge_coefficients(ne: &NormalEquations, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("ridge parameter must be finite and >= 0, got {lambda}")));
    }
    let mut a = ne.z.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let (ct, _route) = solve_symmetric(&a, &ne.y)?;
    Ok(ct.transpose())
}

/// Normal equations for precomputed features `phi` (`n × D`), e.g. hidden
/// reservoir states, against `targets` (`n × d_out`).
pub fn normal_equations_from_features(phi: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<NormalEquations> {
    if phi.nrows() != targets.nrows() || phi.nrows() == 0 {
        return Err(Error::invalid("features and targets need the same, non-zero row count"));
    }
    let inv_n = 1.0 / phi.nrows() as f64;
    let z = phi.tr_mul(phi);
    Ok(NormalEquations {
        z: (&z + z.transpose()) * (0.5 * inv_n),
        y: phi.tr_mul(targets) * inv_n,
        n_samples: phi.nrows(),
        target_energy: targets.norm_squared() * inv_n,
    })
}

/// How the learned closure is applied to the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureLayout {
    /// `m: R^d → R^d`.
    Vector,
    /// One scalar `M: R → R` applied to every coordinate, `m(x)_k = M(x_k)`.
    SharedScalar,
}

/// Nominal model plus learned closure, or a purely data-driven model when
/// there is no nominal part (`f0 ≡ 0` / `Ψ0 ≡ 0`).
#[derive(Clone)]
pub struct HybridModel {
    mode: Mode,
    state_dim: usize,
    nominal: Option<SharedField>,
    closure: LinearClosure,
    layout: ClosureLayout,
    integrator: IntegratorConfig,
    training_objective: f64,
}

impl std::fmt::Debug for HybridModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HybridModel")
            .field("mode", &self.mode)
            .field("state_dim", &self.state_dim)
            .field("data_only", &self.nominal.is_none())
            .field("layout", &self.layout)
            .field("training_objective", &self.training_objective)
            .finish()
    }
}

/// The JSON form of a trained [`HybridModel`] (the nominal part is code, not data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridModelRecord {
    pub mode: Mode,
    pub lambda: f64,
    pub feature_map: FeatureMapDescriptor,
    pub layout: ClosureLayout,
    pub data_only: bool,
    pub c_shape: [usize; 2],
    /// Row-major closure coefficients.
    pub c: Vec<f64>,
    pub training_objective: f64,
}

impl HybridModel {
    /// A model with the given closure and no training record.
    pub fn new(
        mode: Mode,
        state_dim: usize,
        nominal: Option<SharedField>,
        closure: LinearClosure,
        layout: ClosureLayout,
        integrator: IntegratorConfig,
    ) -> Result<Self> {
        if let Some(f) = &nominal {
            check_dim("hybrid nominal model", state_dim, f.dim())?;
        }
        match layout {
            ClosureLayout::Vector => {
                check_dim("closure input", state_dim, closure.map().d_x())?;
                check_dim("closure output", state_dim, closure.d_out())?;
            }
            ClosureLayout::SharedScalar => {
                check_dim("shared scalar closure input", 1, closure.map().d_x())?;
                check_dim("shared scalar closure output", 1, closure.d_out())?;
            }
        }
        if let Mode::DiscreteTime { dt } = mode {
            if !(dt > 0.0) {
                return Err(Error::invalid("discrete-time step must be > 0"));
            }
        }
        integrator.validate()?;
        Ok(Self {
            mode,
            state_dim,
            nominal,
            closure,
            layout,
            integrator,
            training_objective: f64::NAN,
        })
    }

    /// The nominal model alone (`C = 0`), used as the physics-only baseline.
    pub fn nominal_only(mode: Mode, nominal: SharedField, integrator: IntegratorConfig) -> Result<Self> {
        let d = nominal.dim();
        let map = sample_feature_map(d, 1, 0.0, 0.0, 0)?;
        Self::new(mode, d, Some(nominal), LinearClosure::zero(map, d), ClosureLayout::Vector, integrator)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn closure(&self) -> &LinearClosure {
        &self.closure
    }

    pub fn layout(&self) -> ClosureLayout {
        self.layout
    }

    pub fn is_data_only(&self) -> bool {
        self.nominal.is_none()
    }

    pub fn nominal(&self) -> Option<&SharedField> {
        self.nominal.as_ref()
    }

    pub fn integrator(&self) -> &IntegratorConfig {
        &self.integrator
    }

    /// `J_T(C*)` recorded at fit time (NaN for hand-built models).
    pub fn training_objective(&self) -> f64 {
        self.training_objective
    }

    /// The learned correction `m(x)`.
    pub fn correction_into(&self, x: &[f64], out: &mut [f64]) {
        match self.layout {
            ClosureLayout::Vector => self.closure.eval_into(x, out),
            ClosureLayout::SharedScalar => {
                for (o, xi) in out.iter_mut().zip(x) {
                    let mut v = [0.0];
                    self.closure.eval_into(std::slice::from_ref(xi), &mut v);
                    *o = v[0];
                }
            }
        }
    }

    pub fn correction(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("hybrid model state", self.state_dim, x.len())?;
        let mut out = vec![0.0; self.state_dim];
        self.correction_into(x, &mut out);
        Ok(out)
    }

    /// One discrete-time step `Ψ0(x) + m(x)`.
    pub fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
        let Mode::DiscreteTime { dt } = self.mode else {
            return Err(Error::invalid("step() is only defined for discrete-time models"));
        };
        let mut next = match &self.nominal {
            Some(f) => FlowMap {
                field: f.clone(),
                dt,
                cfg: self.integrator,
            }
            .apply(x)?,
            None => {
                check_dim("hybrid model state", self.state_dim, x.len())?;
                vec![0.0; self.state_dim]
            }
        };
        let m = self.correction(x)?;
        for (n, mi) in next.iter_mut().zip(&m) {
            *n += mi;
        }
        Ok(next)
    }

    /// Forecast from `x0` sampled every `dt_out` over `[0, horizon]`.
    /// Discrete-time models require `dt_out` equal to their step.
    /// A blow-up stops the forecast and is reported in `failure`.
    pub fn forecast(&self, x0: &[f64], horizon: f64, dt_out: f64) -> Result<PartialTrajectory> {
        check_dim("forecast initial state", self.state_dim, x0.len())?;
        let grid = uniform_grid(0.0, horizon, dt_out);
        match self.mode {
            Mode::ContinuousTime => {
                let t1 = *grid.last().unwrap();
                if t1 <= 0.0 {
                    return Ok(PartialTrajectory {
                        trajectory: Trajectory::new(vec![0.0], self.state_dim, x0.to_vec())?,
                        failure: None,
                    });
                }
                integrate_partial(self, x0, (0.0, t1), Some(&grid), &self.integrator)
            }
            Mode::DiscreteTime { dt } => {
                if (dt_out - dt).abs() > 1e-9 * dt {
                    return Err(Error::invalid(format!(
                        "discrete-time model with step {dt} cannot be sampled every {dt_out}"
                    )));
                }
                let mut traj = Trajectory::empty(self.state_dim);
                let mut x = x0.to_vec();
                traj.push(grid[0], &x);
                for &t in &grid[1..] {
                    let next = match self.step(&x) {
                        Ok(v) if v.iter().all(|c| c.is_finite()) => v,
                        Ok(_) => {
                            let failure = Error::BlowUp {
                                t,
                                reason: "discrete-time step produced a non-finite state".into(),
                            };
                            return Ok(PartialTrajectory {
                                trajectory: traj,
                                failure: Some(failure),
                            });
                        }
                        Err(e) => {
                            return Ok(PartialTrajectory {
                                trajectory: traj,
                                failure: Some(e),
                            })
                        }
                    };
                    x = next;
                    traj.push(t, &x);
                }
                Ok(PartialTrajectory {
                    trajectory: traj,
                    failure: None,
                })
            }
        }
    }

    pub fn record(&self) -> HybridModelRecord {
        let c = self.closure.coefficients();
        HybridModelRecord {
            mode: self.mode,
            lambda: self.closure.lambda(),
            feature_map: self.closure.map().descriptor(),
            layout: self.layout,
            data_only: self.nominal.is_none(),
            c_shape: [c.nrows(), c.ncols()],
            c: c.transpose().iter().copied().collect(),
            training_objective: self.training_objective,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.record())?)
    }

    /// Rebuilds a model from its record; the nominal part must be supplied
    /// again (and must be absent exactly when the record is data-only).
    pub fn from_record(
        rec: &HybridModelRecord,
        state_dim: usize,
        nominal: Option<SharedField>,
        integrator: IntegratorConfig,
    ) -> Result<Self> {
        if rec.data_only != nominal.is_none() {
            return Err(Error::invalid("nominal model presence disagrees with the record"));
        }
        let [rows, cols] = rec.c_shape;
        if rows * cols != rec.c.len() {
            return Err(Error::invalid("closure coefficient shape does not match its data"));
        }
        let map = FeatureMap::try_from(rec.feature_map)?;
        let c = DMatrix::from_row_slice(rows, cols, &rec.c);
        let closure = LinearClosure::new(c, map, rec.lambda)?;
        let mut model = Self::new(rec.mode, state_dim, nominal, closure, rec.layout, integrator)?;
        model.training_objective = rec.training_objective;
        Ok(model)
    }
}

impl VectorField for HybridModel {
    fn dim(&self) -> usize {
        self.state_dim
    }

    /// Continuous-time right-hand side `f0(x) + m(x)`.
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.correction_into(x, out);
        if let Some(f) = &self.nominal {
            let mut buf = [0.0; 16];
            let mut heap;
            let f0: &mut [f64] = if self.state_dim <= 16 {
                &mut buf[..self.state_dim]
            } else {
                heap = vec![0.0; self.state_dim];
                &mut heap
            };
            f.eval_into(x, f0);
            for (o, v) in out.iter_mut().zip(f0.iter()) {
                *o += v;
            }
        }
    }
}

impl DiscreteMap for HybridModel {
    fn dim(&self) -> usize {
        self.state_dim
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.step(x)
    }
}

/// Regression pairs for `traj` in the given mode; `None` means no nominal
/// model (the residual is the whole vector field / map).
pub fn residual_dataset(
    traj: &Trajectory,
    nominal: Option<&SharedField>,
    mode: Mode,
    integrator: &IntegratorConfig,
) -> Result<ResidualDataset> {
    match mode {
        Mode::ContinuousTime => match nominal {
            Some(f) => build_residuals_ct(traj, f),
            None => build_residuals_ct(traj, &ZeroField(traj.dim())),
        },
        Mode::DiscreteTime { dt } => {
            let step = traj
                .uniform_step()
                .ok_or_else(|| Error::invalid("discrete-time fit needs a uniform time grid"))?;
            if (step - dt).abs() > 1e-9 * dt {
                return Err(Error::invalid(format!("data step {step} differs from model step {dt}")));
            }
            match nominal {
                Some(f) => build_residuals_dt(
                    traj,
                    &FlowMap {
                        field: f.clone(),
                        dt,
                        cfg: *integrator,
                    },
                ),
                None => build_residuals_dt(traj, &ZeroMap(traj.dim())),
            }
        }
    }
}

/// Fits a closure to a prebuilt dataset (already shaped for `layout`
/// except for the shared-scalar reinterpretation, which is applied here).
pub fn fit_from_dataset(
    ds: &ResidualDataset,
    state_dim: usize,
    nominal: Option<SharedField>,
    map: &FeatureMap,
    lambda: f64,
    layout: ClosureLayout,
    integrator: &IntegratorConfig,
) -> Result<HybridModel> {
    let scalar;
    let fit_ds = match layout {
        ClosureLayout::Vector => ds,
        ClosureLayout::SharedScalar => {
            scalar = ds.shared_scalar()?;
            &scalar
        }
    };
    let ne = accumulate_normal_equations(fit_ds, map)?;
    let closure = solve_ridge(&ne, map, lambda)?;
    let objective = ne.objective(closure.coefficients(), lambda);
    let mut model = HybridModel::new(ds.mode, state_dim, nominal, closure, layout, *integrator)?;
    model.training_objective = objective;
    Ok(model)
}

/// Residuals, normal equations and ridge solve in one call.
pub fn fit_markovian(
    traj: &Trajectory,
    nominal: Option<SharedField>,
    map: &FeatureMap,
    lambda: f64,
    mode: Mode,
    integrator: &IntegratorConfig,
) -> Result<HybridModel> {
    let ds = residual_dataset(traj, nominal.as_ref(), mode, integrator)?;
    fit_from_dataset(&ds, traj.dim(), nominal, map, lambda, ClosureLayout::Vector, integrator)
}

/// One scalar closure shared by every slow coordinate, fitted on the pooled
/// pairs `(X_k(t_i), r_k(t_i))` of all trajectories.
pub fn fit_shared_scalar(
    trajs: &[Trajectory],
    nominal: SharedField,
    map: &FeatureMap,
    lambda: f64,
    mode: Mode,
    integrator: &IntegratorConfig,
) -> Result<HybridModel> {
    let parts = trajs
        .iter()
        .map(|t| residual_dataset(t, Some(&nominal), mode, integrator))
        .collect::<Result<Vec<_>>>()?;
    let ds = ResidualDataset::pooled(&parts)?;
    fit_from_dataset(&ds, nominal.dim(), Some(nominal), map, lambda, ClosureLayout::SharedScalar, integrator)
}

// ---------------------------------------------------------------------------
// Hyperparameter search

/// Log-uniform search ranges for `(ω, β, λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub omega: (f64, f64),
    pub beta: (f64, f64),
    pub lambda: (f64, f64),
}

impl Default for SearchBox {
    fn default() -> Self {
        Self {
            omega: (0.01, 1.0),
            beta: (0.1, 5.0),
            lambda: (1e-9, 1e-2),
        }
    }
}

/// Everything fixed across the trials of a search.
#[derive(Clone)]
pub struct TuningSetup {
    pub nominal: Option<SharedField>,
    pub n_features: usize,
    pub feature_seed: u64,
    pub layout: ClosureLayout,
    pub integrator: IntegratorConfig,
    pub gamma: f64,
    /// Scale of the validity threshold (typically the training mean norm).
    pub norm_scale: f64,
    /// Seed of the search itself.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub omega: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Mean validity time on the validation trajectories.
    pub score: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub best: Trial,
    pub trials: Vec<Trial>,
}

fn log_uniform(r: &mut rng::Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    (lo.ln() + (hi.ln() - lo.ln()) * r.random::<f64>()).exp()
}

/// Mean validity time of `model` forecasting each validation trajectory
/// from its first state.
pub fn mean_validity(model: &HybridModel, val: &[Trajectory], gamma: f64, norm_scale: f64) -> Result<f64> {
    let mut total = 0.0;
    for v in val {
        let dt = v
            .uniform_step()
            .ok_or_else(|| Error::invalid("validation trajectory needs a uniform grid"))?;
        let pred = model.forecast(v.first_state(), v.horizon(), dt)?;
        let truth = v.rebased(0.0);
        total += validity_time_partial(&truth, &pred, gamma, norm_scale)?;
    }
    Ok(total / val.len() as f64)
}

/// Random search over `(ω, β, λ)`: `budget` log-uniform draws, each scored
/// by mean validity time on `val` (ties broken by lower training objective).
pub fn tune_hyperparameters(
    train: &Trajectory,
    val: &[Trajectory],
    budget: usize,
    mode: Mode,
    search: &SearchBox,
    setup: &TuningSetup,
) -> Result<TuningReport> {
    if val.is_empty() {
        return Err(Error::invalid("hyperparameter search needs validation trajectories"));
    }
    if budget == 0 {
        return Err(Error::invalid("hyperparameter search budget must be >= 1"));
    }
    for (lo, hi) in [search.omega, search.beta, search.lambda] {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::invalid("search ranges must be positive and ordered"));
        }
    }
    let ds = residual_dataset(train, setup.nominal.as_ref(), mode, &setup.integrator)?;
    let d_x = match setup.layout {
        ClosureLayout::Vector => train.dim(),
        ClosureLayout::SharedScalar => 1,
    };
    let mut r = rng::rng(setup.seed, stream::TUNING);
    let draws: Vec<(f64, f64, f64)> = (0..budget)
        .map(|_| {
            let omega = log_uniform(&mut r, search.omega);
            let beta = log_uniform(&mut r, search.beta);
            let lambda = log_uniform(&mut r, search.lambda);
            (omega, beta, lambda)
        })
        .collect();
    let trials: Vec<Trial> = draws
        .par_iter()
        .map(|&(omega, beta, lambda)| {
            let map = sample_feature_map(d_x, setup.n_features, omega, beta, setup.feature_seed)?;
            let outcome = fit_from_dataset(
                &ds,
                train.dim(),
                setup.nominal.clone(),
                &map,
                lambda,
                setup.layout,
                &setup.integrator,
            )
            .and_then(|m| Ok((mean_validity(&m, val, setup.gamma, setup.norm_scale)?, m.training_objective())));
            let (score, objective) = match outcome {
                Ok(v) => v,
                Err(Error::Numerical(_)) => (0.0, f64::INFINITY),
                Err(e) => return Err(e),
            };
            Ok(Trial {
                omega,
                beta,
                lambda,
                score,
                objective,
            })
        })
        .collect::<Result<_>>()?;
    let best = *trials
        .iter()
        .reduce(|a, b| {
            if b.score > a.score || (b.score == a.score && b.objective < a.objective) {
                b
            } else {
                a
            }
        })
        .unwrap();
    Ok(TuningReport { best, trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{nominal_rhs, FnField, L63Params, Lorenz63, ModelError, ModelErrorSpec};
    use crate::integrate::{integrate_uniform, IdentityMap};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use std::sync::Arc;

    fn l63_truth(horizon: f64, dt: f64) -> Trajectory {
        integrate_uniform(&Lorenz63::default(), &[-5.9, -5.5, 24.5], horizon, dt, &IntegratorConfig::truth()).unwrap()
    }

    fn parametric(eps: f64) -> ModelError {
        ModelError::from_spec(&ModelErrorSpec::Parametric { eps }, 3, &L63Params::default()).unwrap()
    }

    fn l63_nominal(eps: f64) -> SharedField {
        Arc::new(nominal_rhs(Lorenz63::default(), parametric(eps)).unwrap())
    }

    fn rms_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        ((a - b).norm_squared() / a.nrows() as f64).sqrt()
    }

    fn random_dataset(n: usize, d_x: usize, d_out: usize, seed: u64) -> ResidualDataset {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let inputs = DMatrix::from_fn(n, d_x, |_, _| r.random_range(-3.0..3.0));
        let targets = DMatrix::from_fn(n, d_out, |_, _| r.random_range(-1.0..1.0));
        ResidualDataset::new(vec![0.0; n], inputs, targets, Mode::ContinuousTime).unwrap()
    }

    #[test]
    fn ct_residuals_vanish_for_exact_nominal() {
        let tr = l63_truth(2.0, 0.001);
        let ds = build_residuals_ct(&tr, &Lorenz63::default()).unwrap();
        assert_eq!(ds.len(), tr.len() - 2);
        assert!(ds.target_rms() < 1e-3, "rms {}", ds.target_rms());
    }

    #[test]
    fn ct_residuals_recover_parametric_error() {
        let tr = l63_truth(5.0, 0.001);
        let err = parametric(0.05);
        let ds = build_residuals_ct(&tr, &*l63_nominal(0.05)).unwrap();
        let exact = DMatrix::from_fn(ds.len(), 3, |i, j| {
            let x: Vec<f64> = ds.inputs.row(i).iter().copied().collect();
            err.eval(&x).unwrap()[j]
        });
        assert!(rms_rows(&ds.targets, &exact) < 1e-2);
    }

    #[test]
    fn ct_residuals_of_linear_decay() {
        let f = FnField::new(1, |x: &[f64], o: &mut [f64]| o[0] = -x[0]);
        let tr = integrate_uniform(&f, &[2.0], 3.0, 0.01, &IntegratorConfig::truth()).unwrap();
        let ds = build_residuals_ct(&tr, &ZeroField(1)).unwrap();
        for i in 0..ds.len() {
            assert!((ds.targets[(i, 0)] + ds.inputs[(i, 0)]).abs() < 1e-4);
        }
        assert!(build_residuals_ct(&tr.slice(0..3), &ZeroField(1)).is_err());
    }

    #[test]
    fn dt_residuals_exact_flow_and_identity() {
        let tr = l63_truth(1.0, 0.01);
        let exact = FlowMap {
            field: Lorenz63::default(),
            dt: 0.01,
            cfg: IntegratorConfig::truth(),
        };
        let ds = build_residuals_dt(&tr, &exact).unwrap();
        assert_eq!(ds.len(), tr.len() - 1);
        assert!(ds.target_rms() < 1e-6, "{}", ds.target_rms());
        assert_eq!(ds.mode, Mode::DiscreteTime { dt: 0.01 });

        let inc = build_residuals_dt(&tr, &IdentityMap(3)).unwrap();
        for k in 0..inc.len() {
            for j in 0..3 {
                assert_eq!(inc.targets[(k, j)], tr.state(k + 1)[j] - tr.state(k)[j]);
            }
        }
    }

    #[test]
    fn dt_residuals_reject_nonuniform_grid() {
        let tr = Trajectory::new(vec![0.0, 0.1, 0.3], 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(build_residuals_dt(&tr, &IdentityMap(1)).is_err());
    }

    #[test]
    fn dt_targets_over_step_converge_to_ct_residuals() {
        let err = parametric(0.05);
        let nominal = l63_nominal(0.05);
        let rel = |dt: f64| {
            let tr = l63_truth(0.5, dt);
            let psi0 = FlowMap {
                field: nominal.clone(),
                dt,
                cfg: IntegratorConfig::truth(),
            };
            let ds = build_residuals_dt(&tr, &psi0).unwrap();
            let exact = DMatrix::from_fn(ds.len(), 3, |i, j| {
                let x: Vec<f64> = ds.inputs.row(i).iter().copied().collect();
                err.eval(&x).unwrap()[j]
            });
            let scaled = &ds.targets / dt;
            (&scaled - &exact).norm() / exact.norm()
        };
        let coarse = rel(1e-3);
        let fine = rel(1e-4);
        assert!(fine < 0.05, "fine {fine}");
        assert!(fine < coarse, "coarse {coarse} fine {fine}");
    }

    #[test]
    fn normal_equations_match_naive_sums() {
        let ds = random_dataset(1000, 3, 2, 1);
        let map = sample_feature_map(3, 25, 0.7, 1.0, 2).unwrap();
        let ne = accumulate_normal_equations(&ds, &map).unwrap();
        let mut z = DMatrix::<f64>::zeros(25, 25);
        let mut y = DMatrix::<f64>::zeros(25, 2);
        for i in 0..1000 {
            let x: Vec<f64> = ds.inputs.row(i).iter().copied().collect();
            let phi = map.eval(&x).unwrap();
            for a in 0..25 {
                for b in 0..25 {
                    z[(a, b)] += phi[a] * phi[b];
                }
                for k in 0..2 {
                    y[(a, k)] += phi[a] * ds.targets[(i, k)];
                }
            }
        }
        z /= 1000.0;
        y /= 1000.0;
        assert!((&ne.z - &z).amax() < 1e-12);
        assert!((&ne.y - &y).amax() < 1e-12);
        assert_eq!(ne.z, ne.z.transpose());
        assert_eq!(ne.n_samples, 1000);
    }

    #[test]
    fn normal_equations_edge_cases() {
        let map = sample_feature_map(3, 10, 0.7, 1.0, 2).unwrap();
        let single = random_dataset(1, 3, 3, 3);
        let ne = accumulate_normal_equations(&single, &map).unwrap();
        let rank = ne.z.clone().svd(false, false).rank(1e-12 * ne.z.norm());
        assert!(rank <= 1);
        let mut zero = random_dataset(50, 3, 3, 4);
        zero.targets.fill(0.0);
        let ne = accumulate_normal_equations(&zero, &map).unwrap();
        assert!(ne.y.iter().all(|&v| v == 0.0));
        let closure = solve_ridge(&ne, &map, 1e-3).unwrap();
        assert!(closure.coefficients().iter().all(|&v| v == 0.0));
    }

    fn planted(seed: u64) -> (ResidualDataset, FeatureMap, DMatrix<f64>) {
        let map = sample_feature_map(3, 50, 0.5, 1.0, seed).unwrap();
        let mut ds = random_dataset(500, 3, 3, seed + 100);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 200);
        let c_true = DMatrix::from_fn(3, 50, |_, _| r.random_range(-1.0..1.0));
        let phi = map.eval_rows(&ds.inputs).unwrap();
        ds.targets = &phi * c_true.transpose();
        (ds, map, c_true)
    }

    #[test]
    fn ridge_recovers_planted_closure() {
        let (ds, map, c_true) = planted(7);
        let ne = accumulate_normal_equations(&ds, &map).unwrap();
        let cl = solve_ridge(&ne, &map, 1e-12).unwrap();
        let rel = (cl.coefficients() - &c_true).norm() / c_true.norm();
        assert!(rel <= 1e-6, "relative recovery error {rel}");
        let mut a = ne.z.clone();
        for i in 0..50 {
            a[(i, i)] += 1e-12;
        }
        let resid = (a * cl.coefficients().transpose() - &ne.y).norm();
        assert!(resid <= 1e-8 * (ne.y.norm() + 1.0));
    }

    #[test]
    fn ridge_shrinks_with_lambda() {
        let (ds, map, _) = planted(8);
        let ne = accumulate_normal_equations(&ds, &map).unwrap();
        let mut prev = f64::INFINITY;
        for lambda in [1e-3, 1e-2, 1e-1, 1.0, 10.0] {
            let c = solve_ridge(&ne, &map, lambda).unwrap();
            let norm = c.coefficients().norm();
            assert!(norm < prev);
            assert!(norm <= ne.y.norm() / lambda * (1.0 + 1e-12));
            prev = norm;
        }
        assert!(solve_ridge(&ne, &map, -1.0).is_err());
        assert!(solve_ridge(&ne, &map, f64::NAN).is_err());
    }

    #[test]
    fn objective_matches_direct_evaluation() {
        let ds = random_dataset(300, 3, 3, 9);
        let map = sample_feature_map(3, 20, 0.5, 1.0, 9).unwrap();
        let ne = accumulate_normal_equations(&ds, &map).unwrap();
        let lambda = 1e-2;
        let c = solve_ridge(&ne, &map, lambda).unwrap();
        let phi = map.eval_rows(&ds.inputs).unwrap();
        let resid = &ds.targets - &phi * c.coefficients().transpose();
        let direct = resid.norm_squared() / (2.0 * 300.0) + 0.5 * lambda * c.coefficients().norm_squared();
        assert!((ne.objective(c.coefficients(), lambda) - direct).abs() < 1e-12 * direct.max(1.0));
    }

    #[test]
    fn fitted_objective_is_optimal_under_perturbation() {
        let tr = l63_truth(10.0, 0.01);
        let nominal = l63_nominal(0.2);
        let map = sample_feature_map(3, 60, 0.05, 1.0, 3).unwrap();
        let lambda = 1e-4;
        let model = fit_markovian(&tr, Some(nominal.clone()), &map, lambda, Mode::ContinuousTime, &IntegratorConfig::model())
            .unwrap();
        let ds = residual_dataset(&tr, Some(&nominal), Mode::ContinuousTime, &IntegratorConfig::model()).unwrap();
        let ne = accumulate_normal_equations(&ds, &map).unwrap();
        let c = model.closure().coefficients();
        let best = ne.objective(c, lambda);
        assert!((best - model.training_objective()).abs() <= 1e-12 * best);
        assert!(best <= ne.objective(&DMatrix::zeros(3, 60), lambda));
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let mut delta = DMatrix::from_fn(3, 60, |_, _| r.random_range(-1.0..1.0));
            delta *= 1e-3 / delta.norm();
            assert!(best <= ne.objective(&(c + delta), lambda));
        }
    }

    #[test]
    fn zero_error_gives_negligible_closure() {
        let tr = l63_truth(10.0, 0.001);
        let nominal: SharedField = Arc::new(Lorenz63::default());
        let map = sample_feature_map(3, 50, 0.05, 1.0, 5).unwrap();
        let model =
            fit_markovian(&tr, Some(nominal.clone()), &map, 1e-6, Mode::ContinuousTime, &IntegratorConfig::model())
                .unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x = [r.random_range(-20.0..20.0), r.random_range(-25.0..25.0), r.random_range(5.0..45.0)];
            let diff = model.eval(&x).unwrap();
            let f0 = nominal.eval(&x).unwrap();
            let gap = diff.iter().zip(&f0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(gap < 1e-3, "field gap {gap}");
        }
    }

    #[test]
    fn shared_scalar_pools_and_learns_constant() {
        let k = 4;
        let trajs: Vec<Trajectory> = (0..2)
            .map(|s| {
                let f = FnField::new(k, |_: &[f64], o: &mut [f64]| o.fill(0.5));
                let x0: Vec<f64> = (0..k).map(|i| i as f64 - s as f64).collect();
                integrate_uniform(&f, &x0, 2.0, 0.01, &IntegratorConfig::truth()).unwrap()
            })
            .collect();
        let nominal: SharedField = Arc::new(ZeroField(k));
        let parts: Vec<_> = trajs
            .iter()
            .map(|t| residual_dataset(t, Some(&nominal), Mode::ContinuousTime, &IntegratorConfig::model()).unwrap())
            .collect();
        let pooled = ResidualDataset::pooled(&parts).unwrap().shared_scalar().unwrap();
        assert_eq!(pooled.len(), k * (trajs[0].len() - 2) * 2);
        let map = sample_feature_map(1, 30, 0.3, 1.0, 2).unwrap();
        let model =
            fit_shared_scalar(&trajs, nominal, &map, 1e-8, Mode::ContinuousTime, &IntegratorConfig::model()).unwrap();
        assert_eq!(model.layout(), ClosureLayout::SharedScalar);
        let m = model.correction(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        for v in m {
            assert!((v - 0.5).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn dt_forecast_iterates_map() {
        let tr = l63_truth(2.0, 0.01);
        let map = sample_feature_map(3, 30, 0.05, 1.0, 1).unwrap();
        let model = fit_markovian(
            &tr,
            Some(l63_nominal(0.1)),
            &map,
            1e-6,
            Mode::DiscreteTime { dt: 0.01 },
            &IntegratorConfig::model(),
        )
        .unwrap();
        let fc = model.forecast(tr.first_state(), 0.1, 0.01).unwrap().into_result().unwrap();
        assert_eq!(fc.len(), 11);
        let one = model.step(tr.first_state()).unwrap();
        assert_eq!(fc.state(1), &one[..]);
        assert!(model.forecast(tr.first_state(), 0.1, 0.02).is_err());
    }

    #[test]
    fn data_only_dt_learns_whole_map() {
        let tr = l63_truth(5.0, 0.01);
        let map = sample_feature_map(3, 40, 0.05, 1.0, 1).unwrap();
        let cfg = IntegratorConfig::model();
        let model = fit_markovian(&tr, None, &map, 1e-8, Mode::DiscreteTime { dt: 0.01 }, &cfg).unwrap();
        assert!(model.is_data_only());
        let ds = residual_dataset(&tr, None, Mode::DiscreteTime { dt: 0.01 }, &cfg).unwrap();
        // Ψ0 ≡ 0: the targets are the next states themselves.
        assert_eq!(ds.targets.row(0).iter().copied().collect::<Vec<_>>(), tr.state(1).to_vec());
    }

    #[test]
    fn json_round_trip() {
        let tr = l63_truth(2.0, 0.01);
        let map = sample_feature_map(3, 20, 0.05, 1.0, 4).unwrap();
        let cfg = IntegratorConfig::model();
        let nominal = l63_nominal(0.1);
        let model = fit_markovian(&tr, Some(nominal.clone()), &map, 1e-5, Mode::ContinuousTime, &cfg).unwrap();
        let json = model.to_json().unwrap();
        let rec: HybridModelRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(rec, model.record());
        let back = HybridModel::from_record(&rec, 3, Some(nominal), cfg).unwrap();
        assert_eq!(back.closure(), model.closure());
        assert!(HybridModel::from_record(&rec, 3, None, cfg).is_err());
    }

    fn tuning_case() -> (Trajectory, Vec<Trajectory>, TuningSetup) {
        let full = l63_truth(12.0, 0.01);
        let train = full.window(0.0, 8.0);
        let val = vec![full.window(8.0, 10.0).rebased(0.0), full.window(10.0, 12.0).rebased(0.0)];
        let setup = TuningSetup {
            nominal: Some(l63_nominal(0.2)),
            n_features: 40,
            feature_seed: 3,
            layout: ClosureLayout::Vector,
            integrator: IntegratorConfig::model(),
            gamma: 0.05,
            norm_scale: train.mean_norm(),
            seed: 17,
        };
        (train, val, setup)
    }

    #[test]
    fn tuning_budget_one_and_determinism() {
        let (train, val, setup) = tuning_case();
        let one = tune_hyperparameters(&train, &val, 1, Mode::ContinuousTime, &SearchBox::default(), &setup).unwrap();
        assert_eq!(one.trials.len(), 1);
        assert_eq!(one.best, one.trials[0]);
        let a = tune_hyperparameters(&train, &val, 4, Mode::ContinuousTime, &SearchBox::default(), &setup).unwrap();
        let b = tune_hyperparameters(&train, &val, 4, Mode::ContinuousTime, &SearchBox::default(), &setup).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials[0].omega, one.trials[0].omega);
        assert!(a.trials.iter().all(|t| t.score <= a.best.score));
        assert!(tune_hyperparameters(&train, &[], 4, Mode::ContinuousTime, &SearchBox::default(), &setup).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn fits_are_deterministic_and_z_is_psd(seed in 0u64..500, lambda in 1e-8f64..1e-1) {
            let ds = random_dataset(120, 2, 2, seed);
            let map = sample_feature_map(2, 15, 0.8, 1.0, seed).unwrap();
            let ne = accumulate_normal_equations(&ds, &map).unwrap();
            prop_assert!(crate::linalg::min_eigenvalue(&ne.z) >= -1e-10 * ne.z.norm());
            let a = solve_ridge(&ne, &map, lambda).unwrap();
            let b = solve_ridge(&accumulate_normal_equations(&ds, &map).unwrap(), &map, lambda).unwrap();
            prop_assert_eq!(a.coefficients(), b.coefficients());
            prop_assert!(ne.objective(a.coefficients(), lambda) <= ne.objective(&DMatrix::zeros(2, 15), lambda));
        }
    }
}
