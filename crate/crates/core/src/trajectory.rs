//! The time-grid + state-matrix carrier for truth, training data and forecasts,
//! plus its CSV/JSON on-disk form.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::integrate::IntegratorConfig;

/// States sampled on a strictly increasing time grid, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    dim: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("trajectory dimension must be positive"));
        }
        check_dim("trajectory data length", times.len() * dim, data.len())?;
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("trajectory times must be strictly increasing"));
        }
        if times.iter().chain(data.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("trajectory contains non-finite entries"));
        }
        Ok(Self { times, dim, data })
    }

    pub fn from_rows(times: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("ragged trajectory rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(times, dim, data)
    }

    /// Builder used by the integrators; entries are checked as they arrive.
    pub(crate) fn empty(dim: usize) -> Self {
        Self {
            times: Vec::new(),
            dim,
            data: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, t: f64, state: &[f64]) {
        debug_assert_eq!(state.len(), self.dim);
        self.times.push(t);
        self.data.extend_from_slice(state);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn first_state(&self) -> &[f64] {
        self.state(0)
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("non-empty trajectory")
    }

    pub fn horizon(&self) -> f64 {
        self.t_end() - self.t_start()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.states().map(|s| s[j]).collect()
    }

    /// Keeps only the listed state components.
    pub fn project(&self, components: &[usize]) -> Result<Trajectory> {
        if let Some(&bad) = components.iter().find(|&&c| c >= self.dim) {
            return Err(Error::invalid(format!("component {bad} out of range")));
        }
        let data = self
            .states()
            .flat_map(|s| components.iter().map(move |&c| s[c]))
            .collect();
        Trajectory::new(self.times.clone(), components.len(), data)
    }

    /// Rows `range`, times unchanged.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Trajectory {
        Trajectory {
            times: self.times[range.clone()].to_vec(),
            dim: self.dim,
            data: self.data[range.start * self.dim..range.end * self.dim].to_vec(),
        }
    }

    /// Rows with `t0 <= t <= t1` (inclusive, with a relative slack of 1e-9·|t|).
    pub fn window(&self, t0: f64, t1: f64) -> Trajectory {
        let slack = |t: f64| 1e-9 * t.abs().max(1.0);
        let lo = self.times.partition_point(|&t| t < t0 - slack(t0));
        let hi = self.times.partition_point(|&t| t <= t1 + slack(t1));
        self.slice(lo..hi)
    }

    /// Shifts the time axis so the first sample sits at `t0`.
    pub fn rebased(&self, t0: f64) -> Trajectory {
        let off = t0 - self.t_start();
        Trajectory {
            times: self.times.iter().map(|t| t + off).collect(),
            dim: self.dim,
            data: self.data.clone(),
        }
    }

    /// Time step if the grid is uniform to within `1e-9` relative.
    pub fn uniform_step(&self) -> Option<f64> {
        if self.len() < 2 {
            return None;
        }
        let dt = (self.t_end() - self.t_start()) / (self.len() - 1) as f64;
        let ok = self
            .times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.max(1e-300) + 1e-12 * w[1].abs());
        ok.then_some(dt)
    }

    /// Left-Riemann time average of `‖x(t)‖₂`; the plain mean on a uniform grid.
    pub fn mean_norm(&self) -> f64 {
        let norms: Vec<f64> = self
            .states()
            .map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        if self.len() < 2 {
            return norms.first().copied().unwrap_or(0.0);
        }
        let mut acc = 0.0;
        for i in 0..self.len() - 1 {
            acc += norms[i] * (self.times[i + 1] - self.times[i]);
        }
        acc / self.horizon()
    }

    /// Concatenates rows of trajectories that share a dimension.
    pub fn concat_rows(parts: &[Trajectory]) -> Result<Trajectory> {
        let dim = parts.first().map_or(0, |p| p.dim);
        let mut times = Vec::new();
        let mut data = Vec::new();
        for p in parts {
            check_dim("concat_rows", dim, p.dim)?;
            times.extend_from_slice(&p.times);
            data.extend_from_slice(&p.data);
        }
        Trajectory::new(times, dim, data)
    }

    // -- serialization ------------------------------------------------------

    /// Writes `t,x0,x1,...` with every value at 17 significant digits.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..self.dim).map(|j| format!("x{j}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, s) in self.times.iter().zip(self.states()) {
            write!(w, "{t:.16e}")?;
            for v in s {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Trajectory> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("t") {
            return Err(Error::invalid("trajectory CSV must start with a `t` column"));
        }
        for (j, h) in headers.iter().skip(1).enumerate() {
            if h != format!("x{j}") {
                return Err(Error::invalid(format!("unexpected column `{h}`")));
            }
        }
        let dim = headers.len() - 1;
        let mut times = Vec::new();
        let mut data = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad number `{s}`: {e}")))
            };
            times.push(parse(&rec[0])?);
            for j in 0..dim {
                data.push(parse(&rec[j + 1])?);
            }
        }
        Trajectory::new(times, dim, data)
    }

    /// Writes the CSV plus a JSON sidecar with the same stem.
    pub fn write_with_meta(&self, csv_path: impl AsRef<Path>, meta: &TrajectoryMeta) -> Result<()> {
        let csv_path = csv_path.as_ref();
        self.write_csv(csv_path)?;
        let f = File::create(sidecar_path(csv_path))?;
        serde_json::to_writer_pretty(BufWriter::new(f), meta)?;
        Ok(())
    }

    pub fn read_with_meta(csv_path: impl AsRef<Path>) -> Result<(Trajectory, TrajectoryMeta)> {
        let csv_path = csv_path.as_ref();
        let traj = Self::read_csv(csv_path)?;
        let meta = serde_json::from_reader(File::open(sidecar_path(csv_path))?)?;
        Ok((traj, meta))
    }
}

/// Provenance stored next to a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub system: String,
    pub params: serde_json::Value,
    pub seed: Option<u64>,
    pub cfg: Option<IntegratorConfig>,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(Trajectory::new(vec![0.0, 0.0], 1, vec![1.0, 2.0]).is_err());
        assert!(Trajectory::new(vec![0.0, 1.0], 1, vec![1.0]).is_err());
        assert!(Trajectory::new(vec![0.0, 1.0], 1, vec![1.0, f64::NAN]).is_err());
        assert!(Trajectory::new(vec![0.0, 1.0], 1, vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn uniform_step_detection() {
        let t: Vec<f64> = (0..101).map(|i| i as f64 * 0.01).collect();
        let tr = Trajectory::new(t.clone(), 1, vec![0.0; 101]).unwrap();
        assert!((tr.uniform_step().unwrap() - 0.01).abs() < 1e-15);
        let mut t2 = t;
        t2[50] += 0.003;
        let tr = Trajectory::new(t2, 1, vec![0.0; 101]).unwrap();
        assert!(tr.uniform_step().is_none());
    }

    #[test]
    fn window_and_projection() {
        let t: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let data: Vec<f64> = (0..22).map(|v| v as f64).collect();
        let tr = Trajectory::new(t, 2, data).unwrap();
        let w = tr.window(0.3, 0.6);
        assert_eq!(w.len(), 4);
        assert_eq!(w.state(0), &[6.0, 7.0]);
        let p = tr.project(&[1]).unwrap();
        assert_eq!(p.column(0), tr.column(1));
        assert!(tr.project(&[2]).is_err());
    }

    #[test]
    fn csv_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let tr = Trajectory::new(vec![0.0, 0.1, 0.2], 2, vec![1.0 / 3.0, -2e-300, 7.5, 1e300, 0.1, 0.2])
            .unwrap();
        let meta = TrajectoryMeta {
            system: "l63".into(),
            params: serde_json::json!({"a": 10.0}),
            seed: Some(4),
            cfg: Some(IntegratorConfig::truth()),
        };
        tr.write_with_meta(&path, &meta).unwrap();
        let (back, meta_back) = Trajectory::read_with_meta(&path).unwrap();
        assert_eq!(back, tr);
        assert_eq!(meta_back, meta);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,x0,x1\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn csv_is_bit_exact(vals in proptest::collection::vec(-1e12f64..1e12, 3..30)) {
            let n = vals.len() / 3;
            let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.37 + 1e-3).collect();
            let tr = Trajectory::new(times, 3, vals[..n * 3].to_vec()).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.csv");
            tr.write_csv(&path).unwrap();
            let back = Trajectory::read_csv(&path).unwrap();
            prop_assert_eq!(back, tr);
        }
    }
}
