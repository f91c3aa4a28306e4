//! Forecast and statistics criteria: validity time, KDE-based KL divergence
//! between invariant measures, and autocorrelation error.

use std::io::Write;

use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::PartialTrajectory;
use crate::trajectory::Trajectory;

/// Default relative divergence threshold for [`validity_time`].
pub const DEFAULT_GAMMA: f64 = 0.05;
/// Number of grid points of an automatically sized KDE grid.
pub const KDE_GRID_POINTS: usize = 512;
/// Number of grid points of the common grid used by [`kl_divergence`].
pub const KL_GRID_POINTS: usize = 1024;
/// Densities below this value are floored before taking logarithms.
pub const DENSITY_FLOOR: f64 = 1e-12;
/// Kernels are truncated beyond this many bandwidths (`exp(-32) ≈ 1e-14`).
const KERNEL_CUTOFF: f64 = 8.0;

fn aligned(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// First time (measured from the first grid point) at which
/// `‖truth − pred‖₂ ≥ gamma · norm_scale`; the full horizon if never.
pub fn validity_time(truth: &Trajectory, pred: &Trajectory, gamma: f64, norm_scale: f64) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::invalid(format!(
            "validity time needs aligned grids ({} vs {} samples)",
            truth.len(),
            pred.len()
        )));
    }
    validity_time_prefix(truth, pred, gamma, norm_scale)
}

/// Like [`validity_time`], but a prediction that stopped early (blow-up) is
/// treated as invalid from its first missing sample onwards.
pub fn validity_time_partial(truth: &Trajectory, pred: &PartialTrajectory, gamma: f64, norm_scale: f64) -> Result<f64> {
    validity_time_prefix(truth, &pred.trajectory, gamma, norm_scale)
}

fn validity_time_prefix(truth: &Trajectory, pred: &Trajectory, gamma: f64, norm_scale: f64) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::invalid("validity time of an empty trajectory"));
    }
    if truth.dim() != pred.dim() {
        return Err(Error::DimensionMismatch {
            context: "validity time",
            expected: truth.dim(),
            got: pred.dim(),
        });
    }
    if pred.len() > truth.len() {
        return Err(Error::invalid("prediction longer than truth"));
    }
    if !(gamma > 0.0 && norm_scale > 0.0) {
        return Err(Error::invalid("gamma and norm_scale must be > 0"));
    }
    let t0 = truth.t_start();
    let threshold = gamma * norm_scale;
    for i in 0..pred.len() {
        let (tt, tp) = (truth.times()[i], pred.times()[i]);
        if !aligned(tt, tp) {
            return Err(Error::invalid(format!("misaligned grids at sample {i}: {tt} vs {tp}")));
        }
        let err = truth
            .state(i)
            .iter()
            .zip(pred.state(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if !(err < threshold) {
            return Ok(tt - t0);
        }
    }
    if pred.len() < truth.len() {
        return Ok(truth.times()[pred.len()] - t0);
    }
    Ok(truth.t_end() - t0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// `1.06 · σ̂ · n^(−1/5)`.
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    /// `points` equispaced nodes spanning the data ± 3 bandwidths.
    Auto { points: usize },
    Explicit(Vec<f64>),
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Auto {
            points: KDE_GRID_POINTS,
        }
    }
}

/// Gaussian kernel density estimate tabulated on a grid. The (sorted)
/// samples are kept so the estimate can be re-evaluated anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    samples: Vec<f64>,
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let (mean, std) = mean_std(samples);
    let h = 1.06 * std * (samples.len() as f64).powf(-0.2);
    if h > 0.0 {
        h
    } else {
        // Degenerate (constant) samples: a narrow kernel keeps the estimate defined.
        1e-3 * mean.abs().max(1.0)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| if i == n - 1 { hi } else { lo + i as f64 * step }).collect()
}

pub fn kde(samples: &[f64], grid: &GridSpec, bandwidth: Bandwidth) -> Result<DensityEstimate> {
    if samples.len() < 2 {
        return Err(Error::invalid("kde needs at least 2 samples"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("kde samples must be finite"));
    }
    let h = match bandwidth {
        Bandwidth::Silverman => silverman_bandwidth(samples),
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(_) => return Err(Error::invalid("kde bandwidth must be > 0")),
    };
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let grid = match grid {
        GridSpec::Auto { points } => {
            if *points < 2 {
                return Err(Error::invalid("kde grid needs at least 2 points"));
            }
            linspace(sorted[0] - 3.0 * h, sorted[sorted.len() - 1] + 3.0 * h, *points)
        }
        GridSpec::Explicit(g) => {
            if g.len() < 2 || g.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::invalid("explicit kde grid must be increasing with >= 2 points"));
            }
            g.clone()
        }
    };
    let mut est = DensityEstimate {
        grid,
        density: Vec::new(),
        bandwidth: h,
        samples: sorted,
    };
    est.density = est.grid.iter().map(|&x| est.eval_at(x)).collect();
    Ok(est)
}

impl DensityEstimate {
    /// The kernel estimate at an arbitrary point.
    pub fn eval_at(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let lo = self.samples.partition_point(|&s| s < x - KERNEL_CUTOFF * h);
        let hi = self.samples.partition_point(|&s| s <= x + KERNEL_CUTOFF * h);
        let sum: f64 = self.samples[lo..hi]
            .iter()
            .map(|&s| {
                let u = (x - s) / h;
                (-0.5 * u * u).exp()
            })
            .sum();
        sum / (self.samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt())
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    /// Trapezoid integral of the tabulated density.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// `∫ p log(p/q)` by the trapezoid rule on a common grid spanning both
/// estimates, with both densities floored at [`DENSITY_FLOOR`]; clamped at 0.
pub fn kl_divergence(p: &DensityEstimate, q: &DensityEstimate) -> f64 {
    let lo = p.grid[0].min(q.grid[0]);
    let hi = p.grid[p.grid.len() - 1].max(q.grid[q.grid.len() - 1]);
    let grid = linspace(lo, hi, KL_GRID_POINTS);
    let integrand: Vec<f64> = grid
        .iter()
        .map(|&x| {
            let pv = p.eval_at(x).max(DENSITY_FLOOR);
            let qv = q.eval_at(x).max(DENSITY_FLOOR);
            pv * (pv / qv).ln()
        })
        .collect();
    trapezoid(&grid, &integrand).max(0.0)
}

/// Mean over state components of the KL divergence between marginal KDEs.
pub fn marginal_kl(reference: &Trajectory, model: &Trajectory) -> Result<f64> {
    if reference.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "marginal KL",
            expected: reference.dim(),
            got: model.dim(),
        });
    }
    let mut total = 0.0;
    for j in 0..reference.dim() {
        let p = kde(&reference.column(j), &GridSpec::default(), Bandwidth::Silverman)?;
        let q = kde(&model.column(j), &GridSpec::default(), Bandwidth::Silverman)?;
        total += kl_divergence(&p, &q);
    }
    Ok(total / reference.dim() as f64)
}

/// Normalized autocorrelation at lags `0..=max_lag` (sample units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfCurve {
    pub values: Vec<f64>,
}

impl AcfCurve {
    pub fn max_lag(&self) -> usize {
        self.values.len() - 1
    }
}

pub fn acf(series: &[f64], max_lag: usize) -> Result<AcfCurve> {
    let n = series.len();
    if max_lag >= n {
        return Err(Error::invalid(format!("acf max_lag {max_lag} must be < series length {n}")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("acf series must be finite"));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let len = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex64> = series
        .iter()
        .map(|&v| Complex64::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(len)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for v in buf.iter_mut() {
        *v = Complex64::new(v.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let c0 = buf[0].re;
    let scale = series.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if !(c0 > 1e-24 * scale * scale * n as f64) {
        let mut values = vec![0.0; max_lag + 1];
        values[0] = 1.0;
        return Ok(AcfCurve { values });
    }
    let mut values: Vec<f64> = buf[..=max_lag].iter().map(|v| v.re / c0).collect();
    values[0] = 1.0;
    Ok(AcfCurve { values })
}

/// `‖a_true − a_model‖₂ / ‖a_true‖₂` (deliberately not symmetric).
pub fn acf_error(a_true: &AcfCurve, a_model: &AcfCurve) -> Result<f64> {
    if a_true.values.len() != a_model.values.len() {
        return Err(Error::invalid("acf curves have different lag counts"));
    }
    let diff = a_true
        .values
        .iter()
        .zip(&a_model.values)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm = a_true.values.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(diff / norm)
}

/// Mean over state components of the ACF error.
pub fn marginal_acf_error(reference: &Trajectory, model: &Trajectory, max_lag: usize) -> Result<f64> {
    if reference.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "marginal ACF error",
            expected: reference.dim(),
            got: model.dim(),
        });
    }
    let mut total = 0.0;
    for j in 0..reference.dim() {
        let a = acf(&reference.column(j), max_lag)?;
        let b = acf(&model.column(j), max_lag)?;
        total += acf_error(&a, &b)?;
    }
    Ok(total / reference.dim() as f64)
}

/// The three criteria for one (model, test trajectory) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub validity_time: f64,
    pub kl_divergence: f64,
    pub acf_error: f64,
}

impl MetricReport {
    pub fn rows(&self) -> [(&'static str, f64); 3] {
        [
            ("validity_time", self.validity_time),
            ("kl_divergence", self.kl_divergence),
            ("acf_error", self.acf_error),
        ]
    }

    /// Appends `run_id,metric,value` rows.
    pub fn write_rows<W: Write>(&self, run_id: &str, out: &mut W) -> Result<()> {
        for (name, value) in self.rows() {
            writeln!(out, "{run_id},{name},{value}")?;
        }
        Ok(())
    }
}

/// Validity against a truth segment plus invariant statistics against a
/// (typically longer) reference; a blown-up forecast gets infinite KL/ACF error.
pub fn evaluate(
    truth: &Trajectory,
    forecast: &PartialTrajectory,
    stats_reference: &Trajectory,
    stats_model: Option<&Trajectory>,
    gamma: f64,
    norm_scale: f64,
    max_lag: usize,
) -> Result<MetricReport> {
    let validity_time = validity_time_partial(truth, forecast, gamma, norm_scale)?;
    let (kl_divergence, acf_error) = match stats_model {
        Some(m) => (marginal_kl(stats_reference, m)?, marginal_acf_error(stats_reference, m, max_lag)?),
        None => (f64::INFINITY, f64::INFINITY),
    };
    Ok(MetricReport {
        validity_time,
        kl_divergence,
        acf_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, shift: f64, seed: u64) -> Vec<f64> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| { let z: f64 = StandardNormal.sample(&mut r); shift + z }).collect()
    }

    fn line(n: usize, f: impl Fn(f64) -> f64) -> Trajectory {
        let t: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        let d = t.iter().flat_map(|&s| [f(s), -f(s)]).collect();
        Trajectory::new(t, 2, d).unwrap()
    }

    #[test]
    fn validity_of_truth_is_horizon() {
        let tr = line(50, |t| t.sin());
        assert_eq!(validity_time(&tr, &tr, 0.05, 1.0).unwrap(), tr.horizon());
    }

    #[test]
    fn offset_prediction_fails_immediately() {
        let tr = line(50, |t| t.sin());
        let (gamma, scale) = (0.05, 3.0);
        let off = 2.0 * gamma * scale;
        let shifted = line(50, |t| t.sin() + off / 2f64.sqrt());
        assert_eq!(validity_time(&tr, &shifted, gamma, scale).unwrap(), 0.0);
    }

    #[test]
    fn misaligned_grids_error() {
        let a = line(10, |t| t);
        let b = line(11, |t| t);
        assert!(validity_time(&a, &b, 0.05, 1.0).is_err());
        let c = a.rebased(0.5);
        assert!(validity_time(&a, &c, 0.05, 1.0).is_err());
    }

    #[test]
    fn truncated_prediction_is_invalid_where_it_stops() {
        let tr = line(50, |t| t.cos());
        let partial = PartialTrajectory {
            trajectory: tr.slice(0..20),
            failure: Some(Error::BlowUp { t: 2.0, reason: "x".into() }),
        };
        let v = validity_time_partial(&tr, &partial, 0.05, 1.0).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kde_standard_normal_peak_and_mass() {
        let s = normals(100_000, 0.0, 1);
        let est = kde(&s, &GridSpec::default(), Bandwidth::Silverman).unwrap();
        let peak = est.eval_at(0.0);
        let exact = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((peak - exact).abs() < 0.05 * exact, "peak {peak}");
        assert!((est.integral() - 1.0).abs() < 0.01);
        assert_eq!(est.grid.len(), KDE_GRID_POINTS);
    }

    #[test]
    fn kde_is_translation_equivariant() {
        let s = normals(2000, 0.0, 2);
        let shifted: Vec<f64> = s.iter().map(|v| v + 5.0).collect();
        let a = kde(&s, &GridSpec::default(), Bandwidth::Silverman).unwrap();
        let b = kde(&shifted, &GridSpec::default(), Bandwidth::Silverman).unwrap();
        assert!((a.bandwidth - b.bandwidth).abs() < 1e-12);
        for (x, d) in a.grid.iter().zip(&a.density).step_by(17) {
            assert!((b.eval_at(x + 5.0) - d).abs() < 1e-10);
        }
    }

    #[test]
    fn kde_rejects_tiny_inputs() {
        assert!(kde(&[1.0], &GridSpec::default(), Bandwidth::Silverman).is_err());
        assert!(kde(&[1.0, 2.0], &GridSpec::default(), Bandwidth::Fixed(0.0)).is_err());
    }

    #[test]
    fn kl_of_identical_samples_is_zero() {
        let s = normals(5000, 0.3, 3);
        let p = kde(&s, &GridSpec::default(), Bandwidth::Silverman).unwrap();
        let q = kde(&s, &GridSpec::default(), Bandwidth::Silverman).unwrap();
        assert_eq!(kl_divergence(&p, &q), 0.0);
    }

    #[test]
    fn kl_between_unit_gaussians_matches_analytic() {
        let p = kde(&normals(100_000, 0.0, 4), &GridSpec::default(), Bandwidth::Silverman).unwrap();
        let q = kde(&normals(100_000, 1.0, 5), &GridSpec::default(), Bandwidth::Silverman).unwrap();
        let kl = kl_divergence(&p, &q);
        assert!((kl - 0.5).abs() < 0.05, "kl {kl}");
    }

    #[test]
    fn acf_basics() {
        let s = normals(1000, 0.0, 6);
        let a = acf(&s, 10).unwrap();
        assert_eq!(a.values[0], 1.0);
        assert!(acf(&s, 1000).is_err());
        let c = acf(&[2.0; 100], 5).unwrap();
        assert_eq!(c.values, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn acf_of_sine_is_periodic() {
        let dt = 0.01;
        let period = (2.0 * std::f64::consts::PI / dt).round() as usize;
        let s: Vec<f64> = (0..period * 200).map(|i| (i as f64 * dt).sin()).collect();
        let a = acf(&s, period).unwrap();
        assert!(a.values[period] >= 0.99, "{}", a.values[period]);
    }

    #[test]
    fn acf_of_white_noise_stays_in_bartlett_band() {
        let n = 100_000;
        let s = normals(n, 0.0, 7);
        let a = acf(&s, 100).unwrap();
        let band = 4.0 / (n as f64).sqrt();
        let inside = a.values[1..].iter().filter(|v| v.abs() < band).count();
        assert!(inside >= 95, "{inside}");
    }

    #[test]
    fn acf_matches_direct_sum() {
        let s = normals(300, 0.0, 8);
        let a = acf(&s, 20).unwrap();
        let m = s.iter().sum::<f64>() / 300.0;
        let c = |k: usize| (0..300 - k).map(|i| (s[i] - m) * (s[i + k] - m)).sum::<f64>();
        for k in 0..=20 {
            assert!((a.values[k] - c(k) / c(0)).abs() < 1e-12);
        }
    }

    #[test]
    fn acf_error_properties() {
        let a = AcfCurve {
            values: vec![1.0, 0.5, 0.2],
        };
        let b = AcfCurve {
            values: vec![1.0, 0.1, -0.3],
        };
        let zero = AcfCurve { values: vec![0.0; 3] };
        assert_eq!(acf_error(&a, &a).unwrap(), 0.0);
        assert_eq!(acf_error(&a, &zero).unwrap(), 1.0);
        assert_ne!(acf_error(&a, &b).unwrap(), acf_error(&b, &a).unwrap());
        assert!(acf_error(&a, &AcfCurve { values: vec![1.0] }).is_err());
    }

    #[test]
    fn report_rows_format() {
        let r = MetricReport {
            validity_time: 1.5,
            kl_divergence: 0.25,
            acf_error: 0.125,
        };
        let mut buf = Vec::new();
        r.write_rows("run7", &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "run7,validity_time,1.5\nrun7,kl_divergence,0.25\nrun7,acf_error,0.125\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn kl_is_nonnegative(shift in -2.0f64..2.0, scale in 0.3f64..3.0, seed in 0u64..100) {
            let a = normals(400, 0.0, seed);
            let b: Vec<f64> = normals(400, 0.0, seed + 1000).iter().map(|v| shift + scale * v).collect();
            let p = kde(&a, &GridSpec::default(), Bandwidth::Silverman).unwrap();
            let q = kde(&b, &GridSpec::default(), Bandwidth::Silverman).unwrap();
            prop_assert!(kl_divergence(&p, &q) >= 0.0);
        }

        #[test]
        fn validity_monotone_in_gamma(seed in 0u64..1000, g1 in 0.01f64..0.5, g2 in 0.01f64..0.5) {
            let noise = normals(60, 0.0, seed);
            let truth = line(60, |t| t.sin());
            let pred = line(60, |t| t.sin() + 0.02 * t * noise[(t * 10.0).round() as usize]);
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            prop_assert!(validity_time(&truth, &pred, lo, 1.0).unwrap() <= validity_time(&truth, &pred, hi, 1.0).unwrap());
        }

        #[test]
        fn validity_invariant_under_translation(seed in 0u64..1000, c in -50.0f64..50.0) {
            let noise = normals(60, 0.0, seed);
            let truth = line(60, |t| t.cos());
            let pred = line(60, |t| t.cos() + 0.01 * t * noise[(t * 10.0).round() as usize]);
            let shift = |tr: &Trajectory| {
                let d = tr.data().iter().map(|v| v + c).collect();
                Trajectory::new(tr.times().to_vec(), 2, d).unwrap()
            };
            let a = validity_time(&truth, &pred, 0.05, 1.0).unwrap();
            let b = validity_time(&shift(&truth), &shift(&pred), 0.05, 1.0).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
