//! Non-Markovian closure through a randomly wired hidden ODE:
//!
//! ```text
//! ẋ = f0(x) + C r
//! ṙ = tanh(A r + B x̂ + c)       (x̂ = normalized x)
//! ```
//!
//! `(A, B, c)` are random and fixed. Only the linear readout `C` is fitted,
//! by ridge regression of the residual `ẋ − f0(x)` on the hidden path `r(t)`.

use nalgebra::{DMatrix, DVector, DVectorView, DVectorViewMut};
use serde::{Deserialize, Serialize};

use crate::assimilate::{run_3dvar, Gain, ObservationOperator, ObservationSeries};
use crate::dynamics::VectorField;
use crate::error::{check_dim, Error, Result};
use crate::integrate::{integrate, integrate_partial, uniform_grid, IntegratorConfig, PartialTrajectory, SplinePath, TimeDependent};
use crate::markovian::{build_residuals_ct, normal_equations_from_features, ridge_coefficients};
use crate::rng::{self, stream};
use crate::trajectory::Trajectory;

/// Shape and random-wiring parameters of a reservoir.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReservoirConfig {
    pub d_r: usize,
    pub d_x: usize,
    /// Spectral radius of the random recurrent part of `A`.
    pub spectral_scale: f64,
    /// `A = spectral_scale·W/ρ(W) − leak·I`; a positive leak makes the hidden
    /// state forget its initial condition (echo-state property).
    pub leak: f64,
    pub input_scale: f64,
    pub bias_scale: f64,
    pub seed: u64,
}

impl ReservoirConfig {
    /// Defaults used for the partially observed L63 problem.
    pub fn partial_l63(seed: u64) -> Self {
        Self {
            d_r: 400,
            d_x: 1,
            spectral_scale: 90.0,
            leak: 100.0,
            input_scale: 10.0,
            bias_scale: 5.0,
            seed,
        }
    }
}

/// Per-component affine normalization `x̂ = (x − mean)/scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    /// Mean zero, unit variance on `traj` (constant components get scale 1).
    pub fn fit(traj: &Trajectory) -> Self {
        let n = traj.len() as f64;
        let mut mean = vec![0.0; traj.dim()];
        let mut scale = vec![1.0; traj.dim()];
        for j in 0..traj.dim() {
            let col = traj.column(j);
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            if var > 0.0 {
                scale[j] = var.sqrt();
            }
        }
        Self { mean, scale }
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..x.len() {
            out[j] = (x[j] - self.mean[j]) / self.scale[j];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirModel {
    config: ReservoirConfig,
    /// `d_r × d_r`
    a: DMatrix<f64>,
    /// `d_r × d_x`
    b: DMatrix<f64>,
    c: DVector<f64>,
    /// `d_x × d_r`
    readout: DMatrix<f64>,
    lambda: f64,
    normalization: Normalization,
}

/// Largest eigenvalue modulus (dense real Schur decomposition).
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Power-iteration estimate `‖Aᵏv‖^{1/k}` of the spectral radius,
/// accumulated in log space. It converges like `O(1/k)` even when the
/// dominant eigenvalues form a complex pair.
pub fn power_iteration_radius(a: &DMatrix<f64>, iterations: usize, seed: u64) -> f64 {
    let n = a.nrows();
    let mut r = rng::rng(seed, stream::RESERVOIR);
    let mut v = DVector::from_fn(n, |_, _| rng::symmetric_uniform(&mut r, 1.0));
    v /= v.norm();
    let mut log_growth = 0.0;
    for _ in 0..iterations {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        log_growth += norm.ln();
        v = w / norm;
    }
    (log_growth / iterations as f64).exp()
}

/// Draws `W ~ U(−1,1)^{d_r×d_r}` (rescaled to spectral radius
/// `spectral_scale`), then `B ~ U(±input_scale)`, then `c ~ U(±bias_scale)`.
/// The readout starts at zero.
pub fn sample_reservoir(config: ReservoirConfig) -> Result<ReservoirModel> {
    let ReservoirConfig {
        d_r,
        d_x,
        spectral_scale,
        leak,
        input_scale,
        bias_scale,
        seed,
    } = config;
    if d_r == 0 || d_x == 0 {
        return Err(Error::invalid("reservoir needs d_r >= 1 and d_x >= 1"));
    }
    for (name, v) in [
        ("spectral_scale", spectral_scale),
        ("leak", leak),
        ("input_scale", input_scale),
        ("bias_scale", bias_scale),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("{name} must be finite and >= 0")));
        }
    }
    let mut r = rng::rng(seed, stream::RESERVOIR);
    let mut a = DMatrix::from_fn(d_r, d_r, |_, _| rng::symmetric_uniform(&mut r, 1.0));
    let b = DMatrix::from_fn(d_r, d_x, |_, _| rng::symmetric_uniform(&mut r, input_scale));
    let c = DVector::from_fn(d_r, |_, _| rng::symmetric_uniform(&mut r, bias_scale));
    let rho = spectral_radius(&a);
    if spectral_scale == 0.0 || rho == 0.0 {
        a.fill(0.0);
    } else {
        a *= spectral_scale / rho;
    }
    for i in 0..d_r {
        a[(i, i)] -= leak;
    }
    Ok(ReservoirModel {
        config,
        a,
        b,
        c,
        readout: DMatrix::zeros(d_x, d_r),
        lambda: 0.0,
        normalization: Normalization::identity(d_x),
    })
}

/// Diagnostics of a readout fit. RMS values are over the fitted rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutReport {
    pub n_samples: usize,
    pub rms_fit: f64,
    /// RMS of the targets themselves, i.e. of the `C = 0` residual.
    pub rms_baseline: f64,
    pub objective: f64,
    pub objective_at_zero: f64,
}

/// JSON form: the random matrices are regenerated from the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirRecord {
    pub config: ReservoirConfig,
    pub normalization: Normalization,
    pub lambda: f64,
    /// Row-major `d_x × d_r` readout.
    pub readout: Vec<f64>,
}

impl ReservoirModel {
    pub fn config(&self) -> &ReservoirConfig {
        &self.config
    }

    pub fn d_r(&self) -> usize {
        self.config.d_r
    }

    pub fn d_x(&self) -> usize {
        self.config.d_x
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn readout(&self) -> &DMatrix<f64> {
        &self.readout
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn set_normalization(&mut self, n: Normalization) -> Result<()> {
        check_dim("normalization", self.d_x(), n.mean.len())?;
        check_dim("normalization", self.d_x(), n.scale.len())?;
        if n.scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("normalization scales must be > 0"));
        }
        self.normalization = n;
        Ok(())
    }

    pub fn set_readout(&mut self, readout: DMatrix<f64>, lambda: f64) -> Result<()> {
        if readout.nrows() != self.d_x() || readout.ncols() != self.d_r() {
            return Err(Error::DimensionMismatch {
                context: "reservoir readout",
                expected: self.d_x() * self.d_r(),
                got: readout.nrows() * readout.ncols(),
            });
        }
        self.readout = readout;
        self.lambda = lambda;
        Ok(())
    }

    /// `tanh(A r + B x̂ + c)` for a raw (un-normalized) input `x`.
    pub fn hidden_rhs_into(&self, r: &[f64], x: &[f64], out: &mut [f64]) {
        let d_r = self.d_r();
        let mut xn = [0.0; 8];
        let mut heap;
        let xn: &mut [f64] = if x.len() <= 8 {
            &mut xn[..x.len()]
        } else {
            heap = vec![0.0; x.len()];
            &mut heap
        };
        self.normalization.apply_into(x, xn);
        out.copy_from_slice(self.c.as_slice());
        let mut o = DVectorViewMut::from_slice(out, d_r);
        o.gemv(1.0, &self.a, &DVectorView::from_slice(r, d_r), 1.0);
        o.gemv(1.0, &self.b, &DVectorView::from_slice(xn, x.len()), 1.0);
        for v in out.iter_mut() {
            *v = v.tanh();
        }
    }

    /// Readout `C r`.
    pub fn readout_into(&self, r: &[f64], out: &mut [f64]) {
        let mut o = DVectorViewMut::from_slice(out, self.d_x());
        o.gemv(1.0, &self.readout, &DVectorView::from_slice(r, self.d_r()), 0.0);
    }

    pub fn record(&self) -> ReservoirRecord {
        ReservoirRecord {
            config: self.config,
            normalization: self.normalization.clone(),
            lambda: self.lambda,
            readout: self.readout.transpose().iter().copied().collect(),
        }
    }

    pub fn from_record(rec: &ReservoirRecord) -> Result<Self> {
        let mut m = sample_reservoir(rec.config)?;
        m.set_normalization(rec.normalization.clone())?;
        if rec.readout.len() != m.d_x() * m.d_r() {
            return Err(Error::invalid("readout length does not match the reservoir shape"));
        }
        let c = DMatrix::from_row_slice(m.d_x(), m.d_r(), &rec.readout);
        m.set_readout(c, rec.lambda)?;
        Ok(m)
    }

    /// Fits normalization and readout on an observed trajectory: drives the
    /// reservoir from `r0 = 0` along the spline of the data, then ridge-fits
    /// `ẋ − f0(x) ≈ C r` on samples after the first `t_warm` time units.
    pub fn train<F: VectorField + ?Sized>(
        &mut self,
        observed: &Trajectory,
        f0: &F,
        lambda: f64,
        t_warm: f64,
        cfg: &IntegratorConfig,
    ) -> Result<ReadoutReport> {
        check_dim("reservoir training data", self.d_x(), observed.dim())?;
        self.set_normalization(Normalization::fit(observed))?;
        let path = SplinePath::fit(observed)?;
        let hidden = drive(self, &path, &vec![0.0; self.d_r()], (observed.t_start(), observed.t_end()), cfg)?;
        let residuals = build_residuals_ct(observed, f0)?;
        let (readout, report) = fit_readout_with_report(&hidden, &residuals.times, &residuals.targets, lambda, t_warm)?;
        self.set_readout(readout, lambda)?;
        Ok(report)
    }
}

/// Integrates `ṙ = tanh(A r + B x̂(t) + c)` along the interpolated input and
/// samples `r` at the input knots lying in `t_span`.
pub fn drive(
    model: &ReservoirModel,
    x_path: &SplinePath,
    r0: &[f64],
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    check_dim("reservoir initial state", model.d_r(), r0.len())?;
    check_dim("reservoir input path", model.d_x(), x_path.knots().dim())?;
    let (lo, hi) = x_path.span();
    let (t0, t1) = t_span;
    if !(t0 >= lo && t1 <= hi && t1 >= t0) {
        return Err(Error::OutOfRange {
            t: if t0 < lo { t0 } else { t1 },
            lo,
            hi,
        });
    }
    let d_x = model.d_x();
    let sys = TimeDependent {
        dim: model.d_r(),
        f: |t: f64, r: &[f64], out: &mut [f64]| {
            let mut x = [0.0; 8];
            let mut heap;
            let x: &mut [f64] = if d_x <= 8 {
                &mut x[..d_x]
            } else {
                heap = vec![0.0; d_x];
                &mut heap
            };
            // Stage times never leave the span, so evaluation cannot fail.
            let _ = x_path.eval_into(t.clamp(lo, hi), x);
            model.hidden_rhs_into(r, x, out);
        },
    };
    let samples: Vec<f64> = x_path
        .knots()
        .times()
        .iter()
        .copied()
        .filter(|&t| t >= t0 && t <= t1)
        .collect();
    if t1 == t0 || samples.len() < 2 {
        return Trajectory::new(vec![t0], model.d_r(), r0.to_vec());
    }
    integrate(&sys, r0, (t0, t1), Some(&samples), cfg)
}

#[allow(clippy::type_complexity)]
fn aligned_rows(hidden: &Trajectory, times: &[f64], t_warm: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let cutoff = hidden.t_start() + t_warm;
    let mut hidden_rows = Vec::new();
    let mut target_rows = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        if t < cutoff {
            continue;
        }
        let j = hidden.times().partition_point(|&h| h < t - 1e-9 * t.abs().max(1.0));
        if j < hidden.len() && (hidden.times()[j] - t).abs() <= 1e-9 * t.abs().max(1.0) {
            hidden_rows.push(j);
            target_rows.push(i);
        } else {
            return Err(Error::invalid(format!("no hidden state sampled at target time {t}")));
        }
    }
    if hidden_rows.is_empty() {
        return Err(Error::invalid("no training samples remain after the warm-up"));
    }
    Ok((hidden_rows, target_rows))
}

/// Ridge readout `C` (`d_x × d_r`) from hidden states matched to target times.
pub fn fit_readout(
    hidden: &Trajectory,
    target_times: &[f64],
    targets: &DMatrix<f64>,
    lambda: f64,
    t_warm: f64,
) -> Result<DMatrix<f64>> {
    Ok(fit_readout_with_report(hidden, target_times, targets, lambda, t_warm)?.0)
}

fn fit_readout_with_report(
    hidden: &Trajectory,
    target_times: &[f64],
    targets: &DMatrix<f64>,
    lambda: f64,
    t_warm: f64,
) -> Result<(DMatrix<f64>, ReadoutReport)> {
    if target_times.len() != targets.nrows() {
        return Err(Error::invalid("target times and targets disagree in length"));
    }
    let (h_rows, t_rows) = aligned_rows(hidden, target_times, t_warm)?;
    let phi = DMatrix::from_fn(h_rows.len(), hidden.dim(), |i, j| hidden.state(h_rows[i])[j]);
    let y = DMatrix::from_fn(t_rows.len(), targets.ncols(), |i, j| targets[(t_rows[i], j)]);
    let ne = normal_equations_from_features(&phi, &y)?;
    let c = ridge_coefficients(&ne, lambda)?;
    let n = phi.nrows() as f64;
    let resid = &y - &phi * c.transpose();
    let report = ReadoutReport {
        n_samples: phi.nrows(),
        rms_fit: (resid.norm_squared() / n).sqrt(),
        rms_baseline: (y.norm_squared() / n).sqrt(),
        objective: ne.objective(&c, lambda),
        objective_at_zero: ne.objective(&DMatrix::zeros(c.nrows(), c.ncols()), lambda),
    };
    Ok((c, report))
}

/// The coupled system `(ẋ, ṙ) = (f0(x) + C r, tanh(A r + B x̂ + c))`.
pub struct CoupledReservoir<'a, F: ?Sized> {
    pub model: &'a ReservoirModel,
    pub f0: &'a F,
}

impl<F: VectorField + ?Sized> VectorField for CoupledReservoir<'_, F> {
    fn dim(&self) -> usize {
        self.model.d_x() + self.model.d_r()
    }

    fn eval_into(&self, s: &[f64], out: &mut [f64]) {
        let d_x = self.model.d_x();
        let (x, r) = s.split_at(d_x);
        let (dx, dr) = out.split_at_mut(d_x);
        self.model.hidden_rhs_into(r, x, dr);
        self.f0.eval_into(x, dx);
        let mut cr = vec![0.0; d_x];
        self.model.readout_into(r, &mut cr);
        for (d, v) in dx.iter_mut().zip(&cr) {
            *d += v;
        }
    }
}

/// A warm-started forecast: the synchronization segment and the free run.
#[derive(Debug)]
pub struct WarmupForecast {
    /// Post-update observed-state estimates on `[t0, t0 + τ1]`.
    pub warmup: Trajectory,
    /// Free run of the observed state on `[t0 + τ1, t0 + τ1 + τ2]`, starting
    /// from the last warm-up estimate.
    pub forecast: PartialTrajectory,
    /// Hidden state handed from the warm-up to the free run.
    pub hidden_at_handoff: Vec<f64>,
}

impl WarmupForecast {
    /// Warm-up followed by free run, without repeating the hand-off sample.
    pub fn full_path(&self) -> Result<Trajectory> {
        let fc = &self.forecast.trajectory;
        if fc.len() <= 1 {
            return Ok(self.warmup.clone());
        }
        Trajectory::concat_rows(&[self.warmup.clone(), fc.slice(1..fc.len())])
    }
}

/// Synchronizes the coupled model to `observed` over its first `tau1` time
/// units with a constant-gain 3DVAR update of `x` only (`gain` is `d_x × d_x`,
/// padded with zeros for `r`), starting from `x = observed(t0)`, `r = 0`;
/// then runs freely for `tau2` time units sampled at the data step.
pub fn forecast_with_warmup<F: VectorField + ?Sized>(
    model: &ReservoirModel,
    f0: &F,
    observed: &Trajectory,
    gain: &DMatrix<f64>,
    tau1: f64,
    tau2: f64,
    cfg: &IntegratorConfig,
) -> Result<WarmupForecast> {
    let d_x = model.d_x();
    let d_r = model.d_r();
    check_dim("observed segment", d_x, observed.dim())?;
    check_dim("f0", d_x, f0.dim())?;
    if gain.nrows() != d_x || gain.ncols() != d_x {
        return Err(Error::invalid("warm-up gain must be d_x × d_x"));
    }
    if !(tau1 >= 0.0 && tau2 >= 0.0) {
        return Err(Error::invalid("tau1 and tau2 must be >= 0"));
    }
    let dt = observed
        .uniform_step()
        .ok_or_else(|| Error::invalid("observed segment needs a uniform grid"))?;
    let t0 = observed.t_start();
    if observed.t_end() < t0 + tau1 - 1e-9 * dt {
        return Err(Error::invalid("observed segment does not cover the warm-up window"));
    }
    let window = observed.window(t0, t0 + tau1 + 1e-9 * dt);
    let obs = ObservationSeries::new(
        window.times().to_vec(),
        DMatrix::from_row_slice(window.len(), d_x, window.data()),
        0.0,
    )?;
    let h = ObservationOperator::selection(d_x + d_r, &(0..d_x).collect::<Vec<_>>())?;
    let mut k = DMatrix::zeros(d_x + d_r, d_x);
    k.view_mut((0, 0), (d_x, d_x)).copy_from(gain);
    let k = Gain::new(k)?;
    let coupled = CoupledReservoir { model, f0 };
    let mut u0 = vec![0.0; d_x + d_r];
    u0[..d_x].copy_from_slice(observed.first_state());
    let filtered = run_3dvar(&coupled, &obs, &h, &k, &u0, cfg)?;
    let warmup = filtered.project(&(0..d_x).collect::<Vec<_>>())?;
    let handoff = filtered.last_state().to_vec();
    let t_hand = filtered.t_end();

    let forecast = if tau2 > 0.0 {
        let grid: Vec<f64> = uniform_grid(t_hand, tau2, dt);
        let t1 = *grid.last().unwrap();
        let full = integrate_partial(&coupled, &handoff, (t_hand, t1), Some(&grid), cfg)?;
        PartialTrajectory {
            trajectory: full.trajectory.project(&(0..d_x).collect::<Vec<_>>())?,
            failure: full.failure,
        }
    } else {
        PartialTrajectory {
            trajectory: Trajectory::new(vec![t_hand], d_x, handoff[..d_x].to_vec())?,
            failure: None,
        }
    };
    Ok(WarmupForecast {
        warmup,
        forecast,
        hidden_at_handoff: handoff[d_x..].to_vec(),
    })
}
