//! Constant-gain 3DVAR: between observations the model runs freely, and at
//! each observation time the state is nudged, `u ← u + K(z − Hu)`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::VectorField;
use crate::error::{check_dim, Error, Result};
use crate::integrate::{flow_map, IntegratorConfig};
use crate::rng::{self, stream};
use crate::trajectory::Trajectory;

/// Linear observation map `z = Hu` (`d_obs × d_state`).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationOperator {
    h: DMatrix<f64>,
}

impl ObservationOperator {
    pub fn new(h: DMatrix<f64>) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 || h.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observation operator must be non-empty and finite"));
        }
        Ok(Self { h })
    }

    /// Observes the listed state components, in order.
    pub fn selection(d_state: usize, components: &[usize]) -> Result<Self> {
        if components.iter().any(|&c| c >= d_state) {
            return Err(Error::invalid("selected component out of range"));
        }
        let mut h = DMatrix::zeros(components.len(), d_state);
        for (row, &c) in components.iter().enumerate() {
            h[(row, c)] = 1.0;
        }
        Self::new(h)
    }

    pub fn identity(d: usize) -> Result<Self> {
        Self::new(DMatrix::identity(d, d))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn d_obs(&self) -> usize {
        self.h.nrows()
    }

    pub fn d_state(&self) -> usize {
        self.h.ncols()
    }

    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim("observation operator input", self.d_state(), u.len())?;
        Ok((&self.h * DVector::from_column_slice(u)).as_slice().to_vec())
    }
}

/// Constant gain `K` (`d_state × d_obs`).
#[derive(Debug, Clone, PartialEq)]
pub struct Gain {
    k: DMatrix<f64>,
}

impl Gain {
    pub fn new(k: DMatrix<f64>) -> Result<Self> {
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("gain must be finite"));
        }
        Ok(Self { k })
    }

    /// Gain for a single scalar observation.
    pub fn column(k: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(k.len(), 1, k))
    }

    pub fn zeros(d_state: usize, d_obs: usize) -> Self {
        Self {
            k: DMatrix::zeros(d_state, d_obs),
        }
    }

    /// `K = k·Hᵀ`.
    pub fn proportional(h: &ObservationOperator, k: f64) -> Result<Self> {
        Self::new(h.matrix().transpose() * k)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }
}

/// Observations `z_i` at increasing times `t_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    pub times: Vec<f64>,
    /// `n × d_obs`
    pub values: DMatrix<f64>,
    pub noise_std: f64,
}

impl ObservationSeries {
    pub fn new(times: Vec<f64>, values: DMatrix<f64>, noise_std: f64) -> Result<Self> {
        if times.len() != values.nrows() {
            return Err(Error::invalid("observation times and values disagree in length"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("observation times must be strictly increasing"));
        }
        if values.iter().chain(times.iter()).any(|v| !v.is_finite()) || !(noise_std >= 0.0) {
            return Err(Error::invalid("observations must be finite with noise_std >= 0"));
        }
        Ok(Self {
            times,
            values,
            noise_std,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn d_obs(&self) -> usize {
        self.values.ncols()
    }

    pub fn value(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// The observations restricted to `t ≤ t_max`.
    pub fn until(&self, t_max: f64) -> Self {
        let n = self.times.partition_point(|&t| t <= t_max);
        Self {
            times: self.times[..n].to_vec(),
            values: self.values.rows(0, n).into_owned(),
            noise_std: self.noise_std,
        }
    }
}

/// One analysis step `u + K(z − Hu)`.
pub fn analysis(u: &[f64], z: &[f64], h: &ObservationOperator, k: &Gain) -> Result<Vec<f64>> {
    let hu = h.apply(u)?;
    check_dim("observation", h.d_obs(), z.len())?;
    let km = k.matrix();
    if km.nrows() != u.len() || km.ncols() != z.len() {
        return Err(Error::DimensionMismatch {
            context: "gain shape",
            expected: u.len() * z.len(),
            got: km.nrows() * km.ncols(),
        });
    }
    let innov: Vec<f64> = z.iter().zip(&hu).map(|(a, b)| a - b).collect();
    Ok((0..u.len())
        .map(|i| u[i] + (0..innov.len()).map(|j| km[(i, j)] * innov[j]).sum::<f64>())
        .collect())
}

/// Filters `obs` through `model`, starting from `u0` at the first
/// observation time, and returns the post-update (analysis) states at every
/// observation time. Forecasts between observations use the time-`Δt` flow
/// map of `model`, so a zero gain reproduces the free run exactly.
pub fn run_3dvar<F: VectorField + ?Sized>(
    model: &F,
    obs: &ObservationSeries,
    h: &ObservationOperator,
    k: &Gain,
    u0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    check_dim("3DVAR initial state", model.dim(), u0.len())?;
    check_dim("3DVAR observation operator", model.dim(), h.d_state())?;
    check_dim("3DVAR observations", h.d_obs(), obs.d_obs())?;
    if obs.is_empty() {
        return Err(Error::invalid("3DVAR needs at least one observation"));
    }
    let mut out = Trajectory::empty(model.dim());
    let mut u = u0.to_vec();
    for i in 0..obs.len() {
        if i > 0 {
            u = flow_map(model, &u, obs.times[i] - obs.times[i - 1], cfg).map_err(|e| match e {
                Error::BlowUp { reason, .. } => Error::BlowUp {
                    t: obs.times[i - 1],
                    reason: format!("3DVAR forecast after last stable time: {reason}"),
                },
                Error::StepUnderflow { h, .. } => Error::StepUnderflow { t: obs.times[i - 1], h },
                other => other,
            })?;
        }
        u = analysis(&u, &obs.value(i), h, k)?;
        out.push(obs.times[i], &u);
    }
    Ok(out)
}

/// `z_i = H x(t_i) + η_i` with `η_i ~ N(0, noise_std² I)`.
pub fn add_observation_noise(
    traj: &Trajectory,
    h: &ObservationOperator,
    noise_std: f64,
    seed: u64,
) -> Result<ObservationSeries> {
    check_dim("observed trajectory", h.d_state(), traj.dim())?;
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::invalid("noise_std must be finite and >= 0"));
    }
    let mut r = rng::rng(seed, stream::OBS_NOISE);
    let mut values = DMatrix::zeros(traj.len(), h.d_obs());
    for i in 0..traj.len() {
        let z = h.apply(traj.state(i))?;
        for (j, zj) in z.iter().enumerate() {
            let eta: f64 = StandardNormal.sample(&mut r);
            values[(i, j)] = zj + noise_std * eta;
        }
    }
    ObservationSeries::new(traj.times().to_vec(), values, noise_std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Lorenz63;
    use crate::integrate::{integrate_uniform, sample_attractor_ics};
    use proptest::prelude::*;

    fn l63_segment(x0: &[f64], horizon: f64) -> Trajectory {
        integrate_uniform(&Lorenz63::default(), x0, horizon, 0.01, &IntegratorConfig::truth()).unwrap()
    }

    #[test]
    fn selection_operator_rows_are_orthonormal() {
        let h = ObservationOperator::selection(4, &[2, 0]).unwrap();
        let m = h.matrix();
        assert_eq!(m * m.transpose(), DMatrix::identity(2, 2));
        assert_eq!(h.apply(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![3.0, 1.0]);
        assert!(ObservationOperator::selection(2, &[2]).is_err());
    }

    #[test]
    fn zero_gain_reproduces_free_run_exactly() {
        let f = Lorenz63::default();
        let cfg = IntegratorConfig::model();
        let truth = l63_segment(&[1.0, 1.0, 20.0], 1.0);
        let h = ObservationOperator::selection(3, &[0]).unwrap();
        let obs = add_observation_noise(&truth, &h, 1.0, 3).unwrap();
        let u0 = [2.0, -1.0, 25.0];
        let filtered = run_3dvar(&f, &obs, &h, &Gain::zeros(3, 1), &u0, &cfg).unwrap();
        let mut u = u0.to_vec();
        assert_eq!(filtered.state(0), &u[..]);
        for i in 1..obs.len() {
            u = flow_map(&f, &u, obs.times[i] - obs.times[i - 1], &cfg).unwrap();
            assert_eq!(filtered.state(i), &u[..]);
        }
    }

    #[test]
    fn identity_gain_snaps_to_observations() {
        let truth = l63_segment(&[1.0, 1.0, 20.0], 0.5);
        let h = ObservationOperator::identity(3).unwrap();
        let k = Gain::new(DMatrix::identity(3, 3)).unwrap();
        let obs = add_observation_noise(&truth, &h, 0.5, 1).unwrap();
        let out = run_3dvar(&Lorenz63::default(), &obs, &h, &k, &[0.0, 0.0, 0.0], &IntegratorConfig::model()).unwrap();
        for i in 0..obs.len() {
            assert_eq!(out.state(i), &obs.value(i)[..]);
        }
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let n = 100_000;
        let times: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let traj = Trajectory::new(times, 2, vec![1.5; 2 * n]).unwrap();
        let h = ObservationOperator::selection(2, &[1]).unwrap();
        let a = add_observation_noise(&traj, &h, 2.0, 9).unwrap();
        let b = add_observation_noise(&traj, &h, 2.0, 9).unwrap();
        assert_eq!(a, b);
        let var = a.values.iter().map(|z| (z - 1.5).powi(2)).sum::<f64>() / n as f64;
        assert!((var - 4.0).abs() < 0.05 * 4.0, "var {var}");
        let exact = add_observation_noise(&traj, &h, 0.0, 9).unwrap();
        assert!(exact.values.iter().all(|&z| z == 1.5));
    }

    #[test]
    fn synchronizes_l63_from_observed_x() {
        let f = Lorenz63::default();
        let ics = sample_attractor_ics(&f, 12, 10.0, &[(-15.0, 15.0), (-20.0, 20.0), (5.0, 40.0)], 4, &IntegratorConfig::truth()).unwrap();
        let h = ObservationOperator::selection(3, &[0]).unwrap();
        let k = Gain::column(&[0.5, 0.0, 0.0]).unwrap();
        let cfg = IntegratorConfig::model();
        let mut wins = 0;
        for s in 0..6 {
            let truth = l63_segment(&ics[2 * s], 8.0);
            let obs = add_observation_noise(&truth, &h, 1.0, s as u64).unwrap();
            let u0 = ics[2 * s + 1].clone();
            let filt = run_3dvar(&f, &obs, &h, &k, &u0, &cfg).unwrap();
            let free = run_3dvar(&f, &obs, &h, &Gain::zeros(3, 1), &u0, &cfg).unwrap();
            let rms = |tr: &Trajectory| {
                let idx: Vec<usize> = (0..truth.len()).filter(|&i| truth.times()[i] > 3.0).collect();
                let sq: f64 = idx
                    .iter()
                    .map(|&i| tr.state(i).iter().zip(truth.state(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                    .sum();
                (sq / idx.len() as f64).sqrt()
            };
            if rms(&filt) < rms(&free) {
                wins += 1;
            }
        }
        assert!(wins >= 5, "wins {wins}");
    }

    proptest! {
        #[test]
        fn scalar_update_algebra(prior in proptest::collection::vec(-30.0f64..30.0, 3), z in -30.0f64..30.0, k in 0.0f64..1.0) {
            let h = ObservationOperator::selection(3, &[0]).unwrap();
            let g = Gain::column(&[k, 0.0, 0.0]).unwrap();
            let post = analysis(&prior, &[z], &h, &g).unwrap();
            prop_assert!((post[0] - ((1.0 - k) * prior[0] + k * z)).abs() <= 1e-12 * (1.0 + prior[0].abs() + z.abs()));
            prop_assert_eq!(post[1], prior[1]);
            prop_assert_eq!(post[2], prior[2]);
        }
    }
}
