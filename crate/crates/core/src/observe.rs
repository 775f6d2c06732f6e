//! Observation datasets, the finite-difference surrogate velocity, and the
//! Gaussian weights of the fine-grid Brownian increments.

use std::io::{Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, Point2};
use crate::simulate::{SimConfig, TrajectoryGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObservationMode {
    /// Positions and velocities observed.
    Complete,
    /// Positions only.
    Partial,
}

impl ObservationMode {
    pub fn tag(self) -> &'static str {
        match self {
            ObservationMode::Complete => "C",
            ObservationMode::Partial => "P",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "C" | "c" | "complete" => Ok(ObservationMode::Complete),
            "P" | "p" | "partial" => Ok(ObservationMode::Partial),
            other => Err(Error::Config(format!("unknown observation mode {other:?}"))),
        }
    }
}

/// Particle states at `n + 1` equally spaced times. `x` is present exactly
/// when the mode is complete.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub delta: f64,
    pub times: Vec<f64>,
    /// `N × (n + 1)`.
    pub y: Array2<f64>,
    pub x: Option<Array2<f64>>,
    pub mode: ObservationMode,
}

impl ObservationSet {
    pub fn new(delta: f64, times: Vec<f64>, y: Array2<f64>, x: Option<Array2<f64>>) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Argument(format!("observation step must be positive, got {delta}")));
        }
        if y.nrows() == 0 || y.ncols() < 2 || times.len() != y.ncols() {
            return Err(Error::Argument(format!(
                "positions {:?} do not match {} observation times",
                y.dim(),
                times.len()
            )));
        }
        if let Some(x) = &x {
            if x.dim() != y.dim() {
                return Err(Error::Argument(format!("velocities {:?} vs positions {:?}", x.dim(), y.dim())));
            }
        }
        let mode = if x.is_some() { ObservationMode::Complete } else { ObservationMode::Partial };
        Ok(Self { delta, times, y, x, mode })
    }

    pub fn n_particles(&self) -> usize {
        self.y.nrows()
    }

    /// Number of observation intervals `n`.
    pub fn obs_steps(&self) -> usize {
        self.y.ncols() - 1
    }

    /// Observed state of particle `i` at time index `j`; complete mode only.
    pub fn state(&self, i: usize, j: usize) -> Option<Point2> {
        self.x.as_ref().map(|x| Point2::new(self.y[[i, j]], x[[i, j]]))
    }

    /// Drops velocities. Idempotent.
    pub fn make_partial(&self) -> ObservationSet {
        ObservationSet {
            delta: self.delta,
            times: self.times.clone(),
            y: self.y.clone(),
            x: None,
            mode: ObservationMode::Partial,
        }
    }

    /// The same data seen in `mode`; complete from partial is an error.
    pub fn view(&self, mode: ObservationMode) -> Result<ObservationSet> {
        match (mode, self.mode) {
            (ObservationMode::Partial, _) => Ok(self.make_partial()),
            (ObservationMode::Complete, ObservationMode::Complete) => Ok(self.clone()),
            (ObservationMode::Complete, ObservationMode::Partial) => {
                Err(Error::Argument("complete mode needs observed velocities".into()))
            }
        }
    }

    /// Finite-difference velocities `X̃_j = (Y_{j+1} − Y_j)/Δ`, `j = 0..n−1`.
    /// Reads positions only.
    pub fn surrogate(&self) -> Result<SurrogateSet> {
        let n = self.obs_steps();
        if n < 2 {
            return Err(Error::Argument(format!("surrogate needs at least 2 intervals, got {n}")));
        }
        let np = self.n_particles();
        let x_tilde = Array2::from_shape_fn((np, n), |(i, j)| (self.y[[i, j + 1]] - self.y[[i, j]]) / self.delta);
        let measures = (0..n)
            .map(|j| EmpiricalMeasure::new((0..np).map(|i| Point2::new(self.y[[i, j]], x_tilde[[i, j]])).collect()))
            .collect::<Result<Vec<_>>>()?;
        Ok(SurrogateSet { x_tilde, measures })
    }

    /// CSV with header `t,particle,y[,x]`, one row per (time, particle).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        use crate::harness::io::fmt_f64;
        let mut out = csv::Writer::from_writer(w);
        match self.mode {
            ObservationMode::Complete => out.write_record(["t", "particle", "y", "x"])?,
            ObservationMode::Partial => out.write_record(["t", "particle", "y"])?,
        }
        for (j, t) in self.times.iter().enumerate() {
            for i in 0..self.n_particles() {
                let mut rec = vec![fmt_f64(*t), i.to_string(), fmt_f64(self.y[[i, j]])];
                if let Some(x) = &self.x {
                    rec.push(fmt_f64(x[[i, j]]));
                }
                out.write_record(&rec)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`write_csv`](Self::write_csv). The
    /// observation step is recovered as `(t_n − t_0)/n`.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let complete = match headers.iter().collect::<Vec<_>>().as_slice() {
            ["t", "particle", "y", "x"] => true,
            ["t", "particle", "y"] => false,
            other => return Err(Error::Argument(format!("unexpected observation header {other:?}"))),
        };
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Argument(format!("bad number {s:?}: {e}")));
        let mut times: Vec<f64> = Vec::new();
        let mut rows: Vec<(usize, usize, f64, f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let t = parse(&rec[0])?;
            let i: usize = rec[1].trim().parse().map_err(|e| Error::Argument(format!("bad particle index: {e}")))?;
            if times.last() != Some(&t) {
                times.push(t);
            }
            let x = if complete { parse(&rec[3])? } else { 0.0 };
            rows.push((times.len() - 1, i, parse(&rec[2])?, x));
        }
        let n_times = times.len();
        let n_particles = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        if n_times < 2 || rows.len() != n_times * n_particles {
            return Err(Error::Argument("observation CSV is not a full time × particle grid".into()));
        }
        let mut y = Array2::zeros((n_particles, n_times));
        let mut x = Array2::zeros((n_particles, n_times));
        for (j, i, yv, xv) in rows {
            y[[i, j]] = yv;
            x[[i, j]] = xv;
        }
        let delta = (times[n_times - 1] - times[0]) / (n_times - 1) as f64;
        Self::new(delta, times, y, complete.then_some(x))
    }
}

/// Surrogate states `Z̃_j = (Y_j, X̃_j)` for `j = 0..n−1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateSet {
    /// `N × n`.
    pub x_tilde: Array2<f64>,
    /// `Π̃^N_j`, `j = 0..n−1`.
    pub measures: Vec<EmpiricalMeasure>,
}

impl SurrogateSet {
    pub fn state(&self, i: usize, j: usize) -> Point2 {
        self.measures[j].points()[i]
    }
}

/// Normalized weighted Brownian integrals over each observation interval.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianWeights {
    /// `ξ_j`, weight `((j+1)Δ − s)`, `N × n`.
    pub xi: Array2<f64>,
    /// `ξ̃_j`, weight `(s − jΔ)`, `N × n`.
    pub xi_tilde: Array2<f64>,
    /// `U_j = ξ̃_j + ξ_{j+1}`, `N × (n − 1)`.
    pub u: Array2<f64>,
}

pub fn gaussian_weights(grid: &TrajectoryGrid, cfg: &SimConfig) -> Result<GaussianWeights> {
    if grid.db.dim() != (cfg.n_particles, cfg.total_steps()) {
        return Err(Error::Argument(format!(
            "grid increments {:?} do not match the configuration",
            grid.db.dim()
        )));
    }
    gaussian_weights_from_increments(&grid.db, cfg.obs_steps, cfg.fine_factor, cfg.delta())
}

/// Weights from Brownian increments `db` (`N × n m`) on a grid with `m`
/// fine steps per observation interval of length `delta`.
///
/// Each fine step carries the weight at its midpoint, which makes the
/// discrete variances `1/3 − 1/(12m²)` and covariance `1/6 + 1/(12m²)`.
pub fn gaussian_weights_from_increments(db: &Array2<f64>, obs_steps: usize, m: usize, delta: f64) -> Result<GaussianWeights> {
    if m < 2 {
        return Err(Error::Argument("Gaussian weights need a fine factor of at least 2".into()));
    }
    if db.ncols() != obs_steps * m || obs_steps < 2 {
        return Err(Error::Argument(format!(
            "{} increments per particle do not fill {obs_steps} intervals of {m} steps",
            db.ncols()
        )));
    }
    let np = db.nrows();
    let scale = 1.0 / delta.sqrt();
    let w_tilde: Vec<f64> = (0..m).map(|l| scale * (l as f64 + 0.5) / m as f64).collect();
    let mut xi = Array2::zeros((np, obs_steps));
    let mut xi_tilde = Array2::zeros((np, obs_steps));
    for i in 0..np {
        for j in 0..obs_steps {
            let (mut a, mut b) = (0.0, 0.0);
            for (l, wt) in w_tilde.iter().enumerate() {
                let d = db[[i, j * m + l]];
                a += (scale - wt) * d;
                b += wt * d;
            }
            xi[[i, j]] = a;
            xi_tilde[[i, j]] = b;
        }
    }
    let u = Array2::from_shape_fn((np, obs_steps - 1), |(i, j)| xi_tilde[[i, j]] + xi[[i, j + 1]]);
    Ok(GaussianWeights { xi, xi_tilde, u })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_obs(c: f64, n_particles: usize, n: usize, delta: f64) -> ObservationSet {
        let times: Vec<f64> = (0..=n).map(|j| j as f64 * delta).collect();
        let y = Array2::from_shape_fn((n_particles, n + 1), |(i, j)| i as f64 + c * times[j]);
        let x = Array2::from_elem((n_particles, n + 1), c);
        ObservationSet::new(delta, times, y, Some(x)).unwrap()
    }

    #[test]
    fn partial_view_drops_velocities_only() {
        let obs = linear_obs(1.5, 3, 5, 0.25);
        let p = obs.make_partial();
        assert_eq!(p.mode, ObservationMode::Partial);
        assert!(p.x.is_none());
        assert_eq!(p.y, obs.y);
        assert_eq!(p.make_partial(), p);
        assert!(p.view(ObservationMode::Complete).is_err());
        assert_eq!(obs.view(ObservationMode::Complete).unwrap(), obs);
    }

    #[test]
    fn surrogate_of_linear_path_is_exact() {
        let obs = linear_obs(0.5, 2, 8, 0.125).make_partial();
        let s = obs.surrogate().unwrap();
        assert_eq!(s.x_tilde.dim(), (2, 8));
        assert!(s.x_tilde.iter().all(|v| *v == 0.5));
        assert_eq!(s.measures.len(), 8);
        assert_eq!(s.state(1, 3), Point2::new(obs.y[[1, 3]], 0.5));
    }

    #[test]
    fn surrogate_needs_two_intervals() {
        let y = Array2::zeros((2, 2));
        let obs = ObservationSet::new(0.1, vec![0.0, 0.1], y, None).unwrap();
        assert!(matches!(obs.surrogate(), Err(Error::Argument(_))));
    }

    #[test]
    fn shape_checks() {
        assert!(ObservationSet::new(0.1, vec![0.0, 0.1], Array2::zeros((2, 3)), None).is_err());
        assert!(ObservationSet::new(0.0, vec![0.0, 0.1], Array2::zeros((2, 2)), None).is_err());
        assert!(ObservationSet::new(0.1, vec![0.0, 0.1], Array2::zeros((2, 2)), Some(Array2::zeros((1, 2)))).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let mut obs = linear_obs(1.0 / 3.0, 3, 4, 0.1);
        obs.y[[1, 2]] = std::f64::consts::PI * 1e-7;
        for data in [obs.clone(), obs.make_partial()] {
            let mut buf = Vec::new();
            data.write_csv(&mut buf).unwrap();
            let back = ObservationSet::read_csv(buf.as_slice()).unwrap();
            assert_eq!(back.y, data.y);
            assert_eq!(back.x, data.x);
            assert_eq!(back.times, data.times);
            assert!((back.delta - data.delta).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_of_constant_increments() {
        // unit increments with δ = Δ/m integrate the weights exactly
        let m = 4;
        let delta = 1.0;
        let db = Array2::from_elem((1, 3 * m), delta / m as f64);
        let w = gaussian_weights_from_increments(&db, 3, m, delta).unwrap();
        for j in 0..3 {
            assert!((w.xi[[0, j]] - 0.5).abs() < 1e-15);
            assert!((w.xi_tilde[[0, j]] - 0.5).abs() < 1e-15);
        }
        for j in 0..2 {
            assert_eq!(w.u[[0, j]], w.xi_tilde[[0, j]] + w.xi[[0, j + 1]]);
        }
        assert!(gaussian_weights_from_increments(&db, 3, 1, delta).is_err());
        assert!(gaussian_weights_from_increments(&db, 4, m, delta).is_err());
    }
}
