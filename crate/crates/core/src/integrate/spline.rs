use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// Not-a-knot cubic spline through every knot of a trajectory, one per state
/// component. Stores the knot second derivatives, which fix each interval's cubic.
#[derive(Debug, Clone)]
pub struct SplinePath {
    knots: Trajectory,
    /// Row-major `n × dim` second derivatives at the knots.
    second: Vec<f64>,
}

pub fn fit_spline(traj: &Trajectory) -> Result<SplinePath> {
    SplinePath::fit(traj)
}

impl SplinePath {
    pub fn fit(traj: &Trajectory) -> Result<Self> {
        let n = traj.len();
        if n < 4 {
            return Err(Error::invalid("spline needs at least 4 knots"));
        }
        let d = traj.dim();
        let t = traj.times();
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();

        // Interior system for M_1..M_{n-2}. Not-a-knot ends (continuous third
        // derivative at t_1 and t_{n-2}) are eliminated into the first and
        // last rows, which keeps the system tridiagonal.
        let m = n - 2;
        let mut sub: Vec<f64> = (0..m).map(|i| h[i]).collect();
        let mut diag: Vec<f64> = (0..m).map(|i| 2.0 * (h[i] + h[i + 1])).collect();
        let mut sup: Vec<f64> = (0..m).map(|i| h[i + 1]).collect();
        let (h0, h1) = (h[0], h[1]);
        diag[0] = (h0 + h1) * (2.0 * h1 + h0) / h1;
        sup[0] = (h1 * h1 - h0 * h0) / h1;
        let (a, b) = (h[n - 3], h[n - 2]);
        diag[m - 1] = (a + b) * (2.0 * a + b) / a;
        sub[m - 1] = (a * a - b * b) / a;

        // Thomas factorisation shared by every component.
        let mut c_prime = vec![0.0; m];
        let mut denom = vec![0.0; m];
        denom[0] = diag[0];
        c_prime[0] = sup[0] / denom[0];
        for i in 1..m {
            denom[i] = diag[i] - sub[i] * c_prime[i - 1];
            c_prime[i] = sup[i] / denom[i];
        }

        let mut second = vec![0.0; n * d];
        let mut rhs = vec![0.0; m];
        for j in 0..d {
            let y = |i: usize| traj.state(i)[j];
            for i in 0..m {
                rhs[i] = 6.0 * ((y(i + 2) - y(i + 1)) / h[i + 1] - (y(i + 1) - y(i)) / h[i]);
            }
            let mut d_prime = vec![0.0; m];
            d_prime[0] = rhs[0] / denom[0];
            for i in 1..m {
                d_prime[i] = (rhs[i] - sub[i] * d_prime[i - 1]) / denom[i];
            }
            let mut sol = vec![0.0; m];
            sol[m - 1] = d_prime[m - 1];
            for i in (0..m - 1).rev() {
                sol[i] = d_prime[i] - c_prime[i] * sol[i + 1];
            }
            for i in 0..m {
                second[(i + 1) * d + j] = sol[i];
            }
            let m_first = ((h0 + h1) * sol[0] - h0 * sol[1.min(m - 1)]) / h1;
            let m_last = ((a + b) * sol[m - 1] - b * sol[m.saturating_sub(2)]) / a;
            second[j] = m_first;
            second[(n - 1) * d + j] = m_last;
        }
        Ok(Self {
            knots: traj.clone(),
            second,
        })
    }

    pub fn knots(&self) -> &Trajectory {
        &self.knots
    }

    pub fn span(&self) -> (f64, f64) {
        (self.knots.t_start(), self.knots.t_end())
    }

    fn interval(&self, t: f64) -> Result<usize> {
        let (lo, hi) = self.span();
        if !(t >= lo && t <= hi) {
            return Err(Error::OutOfRange { t, lo, hi });
        }
        let times = self.knots.times();
        let i = times.partition_point(|&k| k <= t);
        Ok(i.saturating_sub(1).min(times.len() - 2))
    }

    fn m(&self, i: usize, j: usize) -> f64 {
        self.second[i * self.knots.dim() + j]
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let i = self.interval(t)?;
        let times = self.knots.times();
        let h = times[i + 1] - times[i];
        let a = (times[i + 1] - t) / h;
        let b = (t - times[i]) / h;
        let (y0, y1) = (self.knots.state(i), self.knots.state(i + 1));
        for j in 0..self.knots.dim() {
            out[j] = a * y0[j]
                + b * y1[j]
                + ((a * a * a - a) * self.m(i, j) + (b * b * b - b) * self.m(i + 1, j)) * h * h / 6.0;
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.knots.dim()];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    /// Exact derivative of the piecewise cubic.
    pub fn derivative(&self, t: f64) -> Result<Vec<f64>> {
        let i = self.interval(t)?;
        let times = self.knots.times();
        let h = times[i + 1] - times[i];
        let a = (times[i + 1] - t) / h;
        let b = (t - times[i]) / h;
        let (y0, y1) = (self.knots.state(i), self.knots.state(i + 1));
        Ok((0..self.knots.dim())
            .map(|j| {
                (y1[j] - y0[j]) / h - (3.0 * a * a - 1.0) / 6.0 * h * self.m(i, j)
                    + (3.0 * b * b - 1.0) / 6.0 * h * self.m(i + 1, j)
            })
            .collect())
    }

    /// Derivative at knot `i`, read from the interval starting there
    /// (the last knot uses the interval ending there).
    pub fn derivative_at_knot(&self, i: usize) -> Vec<f64> {
        let times = self.knots.times();
        let n = times.len();
        let d = self.knots.dim();
        if i + 1 < n {
            let h = times[i + 1] - times[i];
            let (y0, y1) = (self.knots.state(i), self.knots.state(i + 1));
            (0..d)
                .map(|j| (y1[j] - y0[j]) / h - h * (2.0 * self.m(i, j) + self.m(i + 1, j)) / 6.0)
                .collect()
        } else {
            let h = times[i] - times[i - 1];
            let (y0, y1) = (self.knots.state(i - 1), self.knots.state(i));
            (0..d)
                .map(|j| (y1[j] - y0[j]) / h + h * (self.m(i - 1, j) + 2.0 * self.m(i, j)) / 6.0)
                .collect()
        }
    }
}
