//! ODE integration: adaptive Dormand–Prince 5(4) with PI step control and
//! dense output, fixed-step RK4, discrete flow maps, attractor sampling and
//! spline reconstruction of sampled trajectories.

mod spline;

pub use spline::{fit_spline, SplinePath};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::VectorField;
use crate::error::{check_dim, Error, Result};
pub use crate::trajectory::Trajectory;

/// A possibly time-dependent right-hand side `ẋ = F(t, x)`.
pub trait OdeSystem: Sync {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]);
}

impl<F: VectorField + ?Sized> OdeSystem for F {
    fn dim(&self) -> usize {
        VectorField::dim(self)
    }
    fn rhs(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        self.eval_into(x, out)
    }
}

/// Closure adapter for non-autonomous systems.
pub struct TimeDependent<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> OdeSystem for TimeDependent<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.f)(t, x, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DormandPrince54,
    /// Classical RK4 with step `max_step` (shortened to land on the span end).
    Rk4Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub method: Method,
}

impl IntegratorConfig {
    /// Data generation: tolerances 1e-9, steps capped at 1e-4.
    pub fn truth() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-9,
            max_step: 1e-4,
            method: Method::DormandPrince54,
        }
    }

    /// Learned-model evaluation: deliberately looser than [`Self::truth`].
    pub fn model() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-6,
            max_step: 0.05,
            method: Method::DormandPrince54,
        }
    }

    pub fn dopri(rtol: f64, atol: f64, max_step: f64) -> Self {
        Self {
            rtol,
            atol,
            max_step,
            method: Method::DormandPrince54,
        }
    }

    pub fn rk4(step: f64) -> Self {
        Self {
            rtol: 1.0,
            atol: 1.0,
            max_step: step,
            method: Method::Rk4Fixed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::invalid("rtol and atol must be > 0"));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::invalid("max_step must be > 0"));
        }
        Ok(())
    }
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self::model()
    }
}

// ---------------------------------------------------------------------------
// Dormand–Prince tableau

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension (Hairer & Wanner's dense output of order 4).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step with everything needed for dense output on `[t_old, t_new]`.
struct DenseStep<'a> {
    t_old: f64,
    t_new: f64,
    y_old: &'a [f64],
    y_new: &'a [f64],
    kind: DenseKind<'a>,
}

enum DenseKind<'a> {
    Dopri([&'a [f64]; 4]),
    Hermite { f_old: &'a [f64], f_new: &'a [f64] },
}

impl DenseStep<'_> {
    fn eval(&self, t: f64, out: &mut [f64]) {
        if t == self.t_new {
            out.copy_from_slice(self.y_new);
            return;
        }
        if t == self.t_old {
            out.copy_from_slice(self.y_old);
            return;
        }
        let h = self.t_new - self.t_old;
        let th = (t - self.t_old) / h;
        let th1 = 1.0 - th;
        match &self.kind {
            DenseKind::Dopri([r2, r3, r4, r5]) => {
                for i in 0..out.len() {
                    out[i] = self.y_old[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])));
                }
            }
            DenseKind::Hermite { f_old, f_new } => {
                let h00 = (1.0 + 2.0 * th) * th1 * th1;
                let h10 = th * th1 * th1;
                let h01 = th * th * (3.0 - 2.0 * th);
                let h11 = -th * th * th1;
                for i in 0..out.len() {
                    out[i] = h00 * self.y_old[i]
                        + h10 * h * f_old[i]
                        + h01 * self.y_new[i]
                        + h11 * h * f_new[i];
                }
            }
        }
    }
}

fn nonfinite(v: &[f64]) -> bool {
    v.iter().any(|x| !x.is_finite())
}

fn blow_up(t: f64, what: &str) -> Error {
    Error::BlowUp {
        t,
        reason: format!("non-finite {what}"),
    }
}

/// Hairer's starting step heuristic.
fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    cfg: &IntegratorConfig,
    hmax: f64,
) -> f64 {
    let n = y0.len();
    let sk: Vec<f64> = y0.iter().map(|y| cfg.atol + cfg.rtol * y.abs()).collect();
    let dnf: f64 = f0.iter().zip(&sk).map(|(f, s)| (f / s).powi(2)).sum::<f64>() / n as f64;
    let dny: f64 = y0.iter().zip(&sk).map(|(y, s)| (y / s).powi(2)).sum::<f64>() / n as f64;
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        (dny / dnf).sqrt() * 0.01
    };
    h = h.min(hmax);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h * f).collect();
    let mut f1 = vec![0.0; n];
    sys.rhs(t0 + h, &y1, &mut f1);
    let der2 = (f1
        .iter()
        .zip(f0)
        .zip(&sk)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt()
        / h;
    let der12 = der2.abs().max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    (100.0 * h).min(h1).min(hmax)
}

/// Core DP54 loop; `on_step` sees every accepted step.
fn run_dopri<S, C>(
    sys: &S,
    x0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
    mut on_step: C,
) -> Result<Vec<f64>>
where
    S: OdeSystem + ?Sized,
    C: FnMut(&DenseStep<'_>),
{
    let n = x0.len();
    let span = t1 - t0;
    let hmax = cfg.max_step.min(span);
    let h_floor = 1e-14 * span;
    const SAFE: f64 = 0.9;
    const BETA: f64 = 0.04;
    let expo1 = 0.2 - BETA * 0.75;

    let mut y = x0.to_vec();
    let mut ynew = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut r2 = vec![0.0; n];
    let mut r3 = vec![0.0; n];
    let mut r4 = vec![0.0; n];
    let mut r5 = vec![0.0; n];

    sys.rhs(t0, &y, &mut k1);
    if nonfinite(&k1) {
        return Err(blow_up(t0, "derivative at initial state"));
    }
    let mut t = t0;
    let mut h = initial_step(sys, t0, &y, &k1, cfg, hmax);
    let mut errold: f64 = 1e-4;
    let mut rejected = false;

    while t < t1 {
        if h < h_floor {
            return Err(Error::StepUnderflow { t, h });
        }
        let last = t + h >= t1 - 1e-15 * span.abs();
        if last {
            h = t1 - t;
        }
        for i in 0..n {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        sys.rhs(t + C2 * h, &ytmp, &mut k2);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        sys.rhs(t + C3 * h, &ytmp, &mut k3);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        sys.rhs(t + C4 * h, &ytmp, &mut k4);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        sys.rhs(t + C5 * h, &ytmp, &mut k5);
        for i in 0..n {
            ytmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if last { t1 } else { t + h };
        sys.rhs(t_new, &ytmp, &mut k6);
        for i in 0..n {
            ynew[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        sys.rhs(t_new, &ynew, &mut k7);
        if nonfinite(&ynew) || nonfinite(&k7) || nonfinite(&k6) {
            return Err(blow_up(t, "Runge-Kutta stage"));
        }

        let mut err = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sk = cfg.atol + cfg.rtol * y[i].abs().max(ynew[i].abs());
            err += (e / sk).powi(2);
        }
        err = (err / n as f64).sqrt();
        if !err.is_finite() {
            return Err(blow_up(t, "error estimate"));
        }

        let fac11 = err.powf(expo1);
        if err <= 1.0 {
            let mut fac = fac11 / errold.powf(BETA);
            fac = (fac / SAFE).clamp(0.2, 10.0);
            let mut hnew = h / fac;
            errold = err.max(1e-4);

            for i in 0..n {
                let ydiff = ynew[i] - y[i];
                let bspl = h * k1[i] - ydiff;
                r2[i] = ydiff;
                r3[i] = bspl;
                r4[i] = ydiff - h * k7[i] - bspl;
                r5[i] = h
                    * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            on_step(&DenseStep {
                t_old: t,
                t_new,
                y_old: &y,
                y_new: &ynew,
                kind: DenseKind::Dopri([&r2, &r3, &r4, &r5]),
            });

            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;
            if last {
                break;
            }
            hnew = hnew.min(hmax);
            if rejected {
                hnew = hnew.min(h);
            }
            rejected = false;
            h = hnew;
        } else {
            h /= (fac11 / SAFE).min(5.0);
            rejected = true;
        }
    }
    Ok(y)
}

fn run_rk4<S, C>(
    sys: &S,
    x0: &[f64],
    t0: f64,
    t1: f64,
    step: f64,
    mut on_step: C,
) -> Result<Vec<f64>>
where
    S: OdeSystem + ?Sized,
    C: FnMut(&DenseStep<'_>),
{
    let n = x0.len();
    let span = t1 - t0;
    let nsteps = ((span / step) - 1e-9).ceil().max(1.0) as usize;
    let h = span / nsteps as f64;
    let mut y = x0.to_vec();
    let mut ynew = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut f0 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    sys.rhs(t0, &y, &mut f0);
    for s in 0..nsteps {
        let t = t0 + s as f64 * h;
        let t_new = if s + 1 == nsteps { t1 } else { t0 + (s + 1) as f64 * h };
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * f0[i];
        }
        sys.rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        sys.rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        sys.rhs(t_new, &tmp, &mut k4);
        for i in 0..n {
            ynew[i] = y[i] + h / 6.0 * (f0[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        sys.rhs(t_new, &ynew, &mut f1);
        if nonfinite(&ynew) || nonfinite(&f1) {
            return Err(blow_up(t, "Runge-Kutta stage"));
        }
        on_step(&DenseStep {
            t_old: t,
            t_new,
            y_old: &y,
            y_new: &ynew,
            kind: DenseKind::Hermite {
                f_old: &f0,
                f_new: &f1,
            },
        });
        std::mem::swap(&mut y, &mut ynew);
        std::mem::swap(&mut f0, &mut f1);
    }
    Ok(y)
}

fn run<S, C>(sys: &S, x0: &[f64], t0: f64, t1: f64, cfg: &IntegratorConfig, on_step: C) -> Result<Vec<f64>>
where
    S: OdeSystem + ?Sized,
    C: FnMut(&DenseStep<'_>),
{
    match cfg.method {
        Method::DormandPrince54 => run_dopri(sys, x0, t0, t1, cfg, on_step),
        Method::Rk4Fixed => run_rk4(sys, x0, t0, t1, cfg.max_step, on_step),
    }
}

fn check_inputs<S: OdeSystem + ?Sized>(sys: &S, x0: &[f64], t0: f64, t1: f64, cfg: &IntegratorConfig) -> Result<()> {
    check_dim("integrate initial state", sys.dim(), x0.len())?;
    cfg.validate()?;
    if !(t1 > t0) {
        return Err(Error::invalid(format!("empty time span [{t0}, {t1}]")));
    }
    if nonfinite(x0) {
        return Err(Error::invalid("initial state has non-finite entries"));
    }
    Ok(())
}

/// A trajectory that may have stopped early; `failure` holds the reason.
#[derive(Debug)]
pub struct PartialTrajectory {
    pub trajectory: Trajectory,
    pub failure: Option<Error>,
}

impl PartialTrajectory {
    pub fn into_result(self) -> Result<Trajectory> {
        match self.failure {
            None => Ok(self.trajectory),
            Some(e) => Err(e),
        }
    }
}

/// Integrates and keeps whatever was produced before a blow-up or step underflow.
pub fn integrate_partial<S: OdeSystem + ?Sized>(
    sys: &S,
    x0: &[f64],
    t_span: (f64, f64),
    sample_times: Option<&[f64]>,
    cfg: &IntegratorConfig,
) -> Result<PartialTrajectory> {
    let (t0, t1) = t_span;
    check_inputs(sys, x0, t0, t1, cfg)?;
    let dim = x0.len();
    if let Some(ts) = sample_times {
        if ts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("sample times must be strictly increasing"));
        }
        let tol = 1e-12 * (t1 - t0).abs().max(t1.abs());
        if ts.iter().any(|&s| s < t0 - tol || s > t1 + tol) {
            return Err(Error::invalid("sample times outside integration span"));
        }
    }

    let mut traj = Trajectory::empty(dim);
    let outcome = match sample_times {
        None => {
            traj.push(t0, x0);
            run(sys, x0, t0, t1, cfg, |st| traj.push(st.t_new, st.y_new))
        }
        Some(ts) => {
            let mut next = 0;
            let mut buf = vec![0.0; dim];
            while next < ts.len() && ts[next] <= t0 {
                traj.push(ts[next], x0);
                next += 1;
            }
            run(sys, x0, t0, t1, cfg, |st| {
                while next < ts.len() && (ts[next] <= st.t_new || st.t_new >= t1) {
                    st.eval(ts[next].min(st.t_new), &mut buf);
                    traj.push(ts[next], &buf);
                    next += 1;
                }
            })
        }
    };
    Ok(match outcome {
        Ok(_) => PartialTrajectory {
            trajectory: traj,
            failure: None,
        },
        Err(e) => PartialTrajectory {
            trajectory: traj,
            failure: Some(e),
        },
    })
}

/// Solves `ẋ = f(x)` on `t_span`, returning dense output at `sample_times`
/// (or every accepted step when `None`).
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    x0: &[f64],
    t_span: (f64, f64),
    sample_times: Option<&[f64]>,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    integrate_partial(sys, x0, t_span, sample_times, cfg)?.into_result()
}

/// State at `t1` without recording intermediate samples.
pub fn advance<S: OdeSystem + ?Sized>(
    sys: &S,
    x0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    check_inputs(sys, x0, t0, t1, cfg)?;
    run(sys, x0, t0, t1, cfg, |_| {})
}

/// Time-`dt` flow map `Ψ(x)`.
pub fn flow_map<F: VectorField + ?Sized>(f: &F, x: &[f64], dt: f64, cfg: &IntegratorConfig) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::invalid("flow map step must be > 0"));
    }
    advance(f, x, 0.0, dt, cfg)
}

/// A discrete-time map `x ↦ Ψ(x)`.
pub trait DiscreteMap: Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// `Ψ = Φ(·, dt)`, the time-`dt` solution operator of a vector field.
pub struct FlowMap<F> {
    pub field: F,
    pub dt: f64,
    pub cfg: IntegratorConfig,
}

impl<F: VectorField> DiscreteMap for FlowMap<F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        flow_map(&self.field, x, self.dt, &self.cfg)
    }
}

/// `Ψ ≡ 0`: the nominal map of the purely data-driven discrete-time variant.
#[derive(Debug, Clone, Copy)]
pub struct ZeroMap(pub usize);

impl DiscreteMap for ZeroMap {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; x.len()])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityMap(pub usize);

impl DiscreteMap for IdentityMap {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }
}

/// Uniform sample grid `t0, t0+dt, ..., t0+n·dt` with `n = round(horizon/dt)`.
pub fn uniform_grid(t0: f64, horizon: f64, dt: f64) -> Vec<f64> {
    let n = (horizon / dt).round() as usize;
    (0..=n).map(|i| t0 + i as f64 * dt).collect()
}

/// Integrates `f` and samples it on a uniform grid of step `dt` over `[0, horizon]`.
pub fn integrate_uniform<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let grid = uniform_grid(0.0, horizon, dt);
    let t1 = *grid.last().unwrap();
    integrate(f, x0, (0.0, t1), Some(&grid), cfg)
}

/// Draws `n` points uniformly in `bounds`, then pushes each through `spinup`
/// time units of the flow so they land (approximately) on the attractor.
pub fn sample_attractor_ics<F: VectorField + ?Sized>(
    f: &F,
    n: usize,
    spinup: f64,
    bounds: &[(f64, f64)],
    seed: u64,
    cfg: &IntegratorConfig,
) -> Result<Vec<Vec<f64>>> {
    use rand::Rng as _;
    check_dim("attractor sampling box", f.dim(), bounds.len())?;
    let mut r = crate::rng::rng(seed, crate::rng::stream::INITIAL_CONDITIONS);
    let starts: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| lo + (hi - lo) * r.random::<f64>())
                .collect()
        })
        .collect();
    if spinup <= 0.0 {
        return Ok(starts);
    }
    starts
        .par_iter()
        .map(|x0| advance(f, x0, 0.0, spinup, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Embedded4d, EmbeddedVariant, FnField, L63Params, Lorenz63, ZeroField};

    fn decay() -> FnField<impl Fn(&[f64], &mut [f64]) + Send + Sync> {
        FnField::new(1, |x: &[f64], o: &mut [f64]| o[0] = -x[0])
    }

    #[test]
    fn exponential_decay_matches_analytic() {
        let cfg = IntegratorConfig::dopri(1e-10, 1e-12, 1.0);
        let tr = integrate(&decay(), &[1.0], (0.0, 1.0), Some(&[1.0]), &cfg).unwrap();
        assert!((tr.state(0)[0] - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn harmonic_oscillator_returns_after_one_period() {
        let osc = FnField::new(2, |x: &[f64], o: &mut [f64]| {
            o[0] = x[1];
            o[1] = -x[0];
        });
        let cfg = IntegratorConfig::dopri(1e-10, 1e-12, 1.0);
        let end = advance(&osc, &[1.0, 0.0], 0.0, 2.0 * std::f64::consts::PI, &cfg).unwrap();
        assert!((end[0] - 1.0).abs() < 1e-6 && end[1].abs() < 1e-6, "{end:?}");
    }

    #[test]
    fn l63_self_convergence() {
        let f = Lorenz63::default();
        let x0 = [-5.9, -5.5, 24.5];
        let a = advance(&f, &x0, 0.0, 1.0, &IntegratorConfig::dopri(1e-9, 1e-9, 1.0)).unwrap();
        let b = advance(&f, &x0, 0.0, 1.0, &IntegratorConfig::dopri(1e-12, 1e-12, 1.0)).unwrap();
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn dense_output_matches_step_endpoints() {
        let f = Lorenz63::default();
        let grid = uniform_grid(0.0, 2.0, 0.01);
        let cfg = IntegratorConfig::dopri(1e-10, 1e-10, 1.0);
        let dense = integrate(&f, &[1.0, 3.0, 1.0], (0.0, 2.0), Some(&grid), &cfg).unwrap();
        assert_eq!(dense.len(), grid.len());
        for (i, &t) in grid.iter().enumerate().step_by(37).skip(1) {
            let direct = advance(&f, &[1.0, 3.0, 1.0], 0.0, t, &cfg).unwrap();
            for k in 0..3 {
                assert!((dense.state(i)[k] - direct[k]).abs() < 1e-6, "t={t}");
            }
        }
    }

    #[test]
    fn observed_order_at_least_four_and_a_half() {
        // Global error vs work: log(err) against log(number of rhs evals).
        let mut pts = Vec::new();
        for tol in [1e-6, 1e-8, 1e-10] {
            let count = std::sync::atomic::AtomicUsize::new(0);
            let f = FnField::new(1, |x: &[f64], o: &mut [f64]| {
                count.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                o[0] = -x[0];
            });
            let end = advance(&f, &[1.0], 0.0, 10.0, &IntegratorConfig::dopri(tol, tol * 1e-3, 10.0)).unwrap();
            let err = (end[0] - (-10.0f64).exp()).abs();
            pts.push(((count.into_inner() as f64).ln(), err.ln()));
        }
        let order = -(pts[2].1 - pts[0].1) / (pts[2].0 - pts[0].0);
        assert!(order >= 4.5, "observed order {order}");
    }

    #[test]
    fn semigroup_property() {
        let f = Lorenz63::default();
        let cfg = IntegratorConfig::dopri(1e-10, 1e-10, 1.0);
        let x = [2.0, 1.0, 20.0];
        let once = flow_map(&f, &flow_map(&f, &x, 0.05, &cfg).unwrap(), 0.05, &cfg).unwrap();
        let twice = flow_map(&f, &x, 0.1, &cfg).unwrap();
        for i in 0..3 {
            assert!((once[i] - twice[i]).abs() < 10.0 * (cfg.atol + cfg.rtol * twice[i].abs()));
        }
    }

    #[test]
    fn zero_field_flow_is_identity() {
        let x = [1.0, -2.0, 3.5];
        assert_eq!(flow_map(&ZeroField(3), &x, 0.7, &IntegratorConfig::model()).unwrap(), x.to_vec());
    }

    #[test]
    fn halving_flow() {
        let y = flow_map(&decay(), &[1.0], 2f64.ln(), &IntegratorConfig::dopri(1e-11, 1e-12, 1.0)).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn blow_up_is_reported_with_time() {
        let f = FnField::new(1, |x: &[f64], o: &mut [f64]| o[0] = x[0] * x[0]);
        // ẋ = x², x(0)=1 blows up at t=1.
        let p = integrate_partial(&f, &[1.0], (0.0, 2.0), None, &IntegratorConfig::model()).unwrap();
        let err = p.failure.expect("should fail");
        let t = err.failure_time().unwrap();
        assert!(t > 0.9 && t <= 1.0 + 1e-6, "failed at {t}");
        assert!(p.trajectory.states().all(|s| s[0].is_finite()));
    }

    #[test]
    fn rk4_fixed_is_accurate() {
        let tr = integrate(&decay(), &[1.0], (0.0, 1.0), Some(&[0.5, 1.0]), &IntegratorConfig::rk4(1e-3)).unwrap();
        assert!((tr.state(1)[0] - (-1.0f64).exp()).abs() < 1e-12);
        assert!((tr.state(0)[0] - (-0.5f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = Lorenz63::default();
        let cfg = IntegratorConfig::model();
        assert!(integrate(&f, &[1.0, 2.0], (0.0, 1.0), None, &cfg).is_err());
        assert!(integrate(&f, &[1.0, 2.0, 3.0], (1.0, 1.0), None, &cfg).is_err());
        assert!(integrate(&f, &[1.0, 2.0, 3.0], (0.0, 1.0), Some(&[0.5, 2.0]), &cfg).is_err());
        assert!(flow_map(&f, &[1.0, 2.0, 3.0], -0.1, &cfg).is_err());
    }

    #[test]
    fn attractor_sampling() {
        let f = Lorenz63::default();
        let cfg = IntegratorConfig::model();
        let bounds = [(-20.0, 20.0), (-20.0, 20.0), (0.0, 50.0)];
        assert!(sample_attractor_ics(&f, 0, 10.0, &bounds, 1, &cfg).unwrap().is_empty());
        let a = sample_attractor_ics(&f, 6, 10.0, &bounds, 3, &cfg).unwrap();
        let b = sample_attractor_ics(&f, 6, 10.0, &bounds, 3, &cfg).unwrap();
        assert_eq!(a, b);
        // Attractor bound measured on a long reference run (max |u| ≈ 48).
        let reference = integrate_uniform(&f, &a[0], 200.0, 0.01, &cfg).unwrap();
        let ref_max = reference.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(ref_max < 100.0);
        for p in &a {
            assert!(p.iter().all(|v| v.abs() < 100.0), "{p:?}");
        }
    }

    #[test]
    fn embedded_a_drift_is_small() {
        let f = Embedded4d {
            variant: EmbeddedVariant::A,
            params: L63Params::default(),
        };
        let x0 = [1.0, 3.0, 1.0, 30.0];
        let tr = integrate_uniform(&f, &x0, 1.0, 0.01, &IntegratorConfig::dopri(1e-9, 1e-9, 1e-2)).unwrap();
        let drift = tr
            .states()
            .map(|s| (s[3] - 10.0 * s[1]).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-5, "drift {drift}");
    }
}
