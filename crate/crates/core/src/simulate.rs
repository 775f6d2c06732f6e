//! Euler–Maruyama simulation of the particle system on a fine grid, the
//! coupled mean-field proxies, and extraction of the observation grid.

use std::io::{Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, Point2};
use crate::model::{Coefficients, MeasureSummary, ModelSpec, Params};
use crate::observe::ObservationSet;
use crate::rng::{derive_seed, NoiseStream, StreamTag};

/// Any coordinate beyond this magnitude aborts the run.
pub const DIVERGENCE_BOUND: f64 = 1e9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitLaw {
    /// Independent standard normal position and velocity per particle.
    StandardNormal,
    /// Every particle starts at the same point.
    Fixed(Point2),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub n_particles: usize,
    pub horizon: f64,
    pub obs_steps: usize,
    pub fine_factor: usize,
    pub seed: u64,
    pub init: InitLaw,
}

impl SimConfig {
    pub fn new(n_particles: usize, horizon: f64, obs_steps: usize, fine_factor: usize, seed: u64) -> Self {
        Self {
            n_particles,
            horizon,
            obs_steps,
            fine_factor,
            seed,
            init: InitLaw::StandardNormal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 1 {
            return Err(Error::Config("need at least one particle".into()));
        }
        if self.obs_steps < 3 {
            return Err(Error::Config("need at least 3 observation intervals".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.fine_factor < 1 {
            return Err(Error::Config("fine factor must be at least 1".into()));
        }
        Ok(())
    }

    /// Observation step `Δ = T/n`.
    pub fn delta(&self) -> f64 {
        self.horizon / self.obs_steps as f64
    }

    /// Simulation step `δ = T/(n m)`.
    pub fn fine_step(&self) -> f64 {
        self.horizon / (self.obs_steps * self.fine_factor) as f64
    }

    pub fn total_steps(&self) -> usize {
        self.obs_steps * self.fine_factor
    }

    pub fn initial_points(&self) -> Vec<Point2> {
        match self.init {
            InitLaw::Fixed(p) => vec![p; self.n_particles],
            InitLaw::StandardNormal => (0..self.n_particles)
                .map(|i| {
                    let mut s = NoiseStream::new(self.seed, i as u64, StreamTag::Init);
                    let y = s.normal();
                    let x = s.normal();
                    Point2::new(y, x)
                })
                .collect(),
        }
    }
}

/// Fine-grid paths of all particles with the Brownian increments consumed.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryGrid {
    pub times: Vec<f64>,
    /// Positions, `N × (n m + 1)`.
    pub y: Array2<f64>,
    /// Velocities, `N × (n m + 1)`.
    pub x: Array2<f64>,
    /// Brownian increments, `N × n m`; `dB[i][k]` drives step `k → k+1`.
    pub db: Array2<f64>,
    pub theta0: Params,
    pub cfg: SimConfig,
}

impl TrajectoryGrid {
    pub fn n_particles(&self) -> usize {
        self.y.nrows()
    }

    pub fn state(&self, i: usize, k: usize) -> Point2 {
        Point2::new(self.y[[i, k]], self.x[[i, k]])
    }

    pub fn cloud(&self, k: usize) -> Vec<Point2> {
        (0..self.n_particles()).map(|i| self.state(i, k)).collect()
    }

    pub fn initial_points(&self) -> Vec<Point2> {
        self.cloud(0)
    }

    const MAGIC: &'static [u8; 8] = b"HIPSTRJ1";

    /// Columnar little-endian dump: magic, `N, n, m` (u64), `T` (f64),
    /// seed (u64), drift and diffusion parameter counts (u64) and values,
    /// then times, y, x and dB arrays row-major by particle.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        for v in [self.n_particles() as u64, self.cfg.obs_steps as u64, self.cfg.fine_factor as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.cfg.horizon.to_le_bytes())?;
        w.write_all(&self.cfg.seed.to_le_bytes())?;
        w.write_all(&(self.theta0.mu.len() as u64).to_le_bytes())?;
        w.write_all(&(self.theta0.sigma.len() as u64).to_le_bytes())?;
        let arrays = [
            self.theta0.mu.as_slice(),
            self.theta0.sigma.as_slice(),
            self.times.as_slice(),
        ];
        for a in arrays {
            for v in a {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for a in [&self.y, &self.x, &self.db] {
            for v in a.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Argument("not a trajectory dump".into()));
        }
        let mut word = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let n_particles = next_u64(&mut r)? as usize;
        let obs_steps = next_u64(&mut r)? as usize;
        let fine_factor = next_u64(&mut r)? as usize;
        let horizon = f64::from_bits(next_u64(&mut r)?);
        let seed = next_u64(&mut r)?;
        let p1 = next_u64(&mut r)? as usize;
        let p2 = next_u64(&mut r)? as usize;
        let mut read_vec = |r: &mut R, len: usize| -> Result<Vec<f64>> {
            (0..len).map(|_| Ok(f64::from_bits(next_u64(r)?))).collect()
        };
        let mu = read_vec(&mut r, p1)?;
        let sigma = read_vec(&mut r, p2)?;
        let steps = obs_steps * fine_factor;
        let times = read_vec(&mut r, steps + 1)?;
        let shape_err = |e| Error::Argument(format!("bad array shape: {e}"));
        let y = Array2::from_shape_vec((n_particles, steps + 1), read_vec(&mut r, n_particles * (steps + 1))?).map_err(shape_err)?;
        let x = Array2::from_shape_vec((n_particles, steps + 1), read_vec(&mut r, n_particles * (steps + 1))?).map_err(shape_err)?;
        let db = Array2::from_shape_vec((n_particles, steps), read_vec(&mut r, n_particles * steps)?).map_err(shape_err)?;
        let init = InitLaw::StandardNormal;
        Ok(Self {
            times,
            y,
            x,
            db,
            theta0: Params::new(mu, sigma),
            cfg: SimConfig { n_particles, horizon, obs_steps, fine_factor, seed, init },
        })
    }

    /// CSV export `t,particle,y,x` for small runs.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "particle", "y", "x"])?;
        for (k, t) in self.times.iter().enumerate() {
            for i in 0..self.n_particles() {
                out.write_record([
                    crate::harness::io::fmt_f64(*t),
                    i.to_string(),
                    crate::harness::io::fmt_f64(self.y[[i, k]]),
                    crate::harness::io::fmt_f64(self.x[[i, k]]),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Where the Brownian increments of a run come from.
enum Noise<'a> {
    Streams { streams: Vec<NoiseStream>, sqrt_dt: f64 },
    Replay(&'a Array2<f64>),
}

impl Noise<'_> {
    fn fill(&mut self, step: usize, out: &mut [f64]) {
        match self {
            Noise::Streams { streams, sqrt_dt } => {
                for (o, s) in out.iter_mut().zip(streams.iter_mut()) {
                    *o = *sqrt_dt * s.normal();
                }
            }
            Noise::Replay(db) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = db[[i, step]];
                }
            }
        }
    }
}

fn dynamics_noise<'a>(seed: u64, n: usize, dt: f64) -> Noise<'a> {
    Noise::Streams {
        streams: (0..n).map(|i| NoiseStream::new(seed, i as u64, StreamTag::Dynamics)).collect(),
        sqrt_dt: dt.sqrt(),
    }
}

/// Euler–Maruyama driver shared by every simulation entry point.
///
/// `summary_at(k, cloud)` supplies the measure the coefficients see at step
/// `k`; `observe(k, cloud, db)` is called with the state after `k` steps and
/// the increments that produced it (`None` at `k = 0`).
fn integrate<S, O>(
    coeffs: &dyn Coefficients,
    theta: &Params,
    mut pts: Vec<Point2>,
    steps: usize,
    dt: f64,
    mut noise: Noise<'_>,
    mut summary_at: S,
    mut observe: O,
) -> Result<Vec<Point2>>
where
    S: FnMut(usize, &[Point2]) -> MeasureSummary,
    O: FnMut(usize, &[Point2], Option<&[f64]>),
{
    let n = pts.len();
    let mut db = vec![0.0; n];
    observe(0, &pts, None);
    for k in 0..steps {
        let summary = summary_at(k, &pts);
        noise.fill(k, &mut db);
        for (i, p) in pts.iter_mut().enumerate() {
            let b = coeffs.drift(&theta.mu, *p, &summary);
            let a = coeffs.diffusion(&theta.sigma, *p, &summary);
            let x_next = p.x + b * dt + a * db[i];
            let y_next = p.y + p.x * dt;
            for v in [x_next, y_next] {
                if !v.is_finite() || v.abs() > DIVERGENCE_BOUND {
                    return Err(Error::Diverged { particle: i, step: k + 1, value: v });
                }
            }
            *p = Point2::new(y_next, x_next);
        }
        observe(k + 1, &pts, Some(&db));
    }
    Ok(pts)
}

fn check_theta(model: &ModelSpec, theta0: &Params) -> Result<()> {
    model.param_box().check(theta0)
}

/// Simulates the interacting particle system, keeping the full fine grid.
pub fn simulate_ips(model: &ModelSpec, theta0: &Params, cfg: &SimConfig) -> Result<TrajectoryGrid> {
    cfg.validate()?;
    check_theta(model, theta0)?;
    let noise = dynamics_noise(cfg.seed, cfg.n_particles, cfg.fine_step());
    run_grid(model, theta0, cfg, cfg.initial_points(), noise)
}

/// Re-runs the scheme from given initial points and recorded increments.
pub fn replay(model: &ModelSpec, theta0: &Params, cfg: &SimConfig, init: Vec<Point2>, db: &Array2<f64>) -> Result<TrajectoryGrid> {
    cfg.validate()?;
    if db.dim() != (init.len(), cfg.total_steps()) || init.len() != cfg.n_particles {
        return Err(Error::Argument(format!("increment array {:?} does not match configuration", db.dim())));
    }
    run_grid(model, theta0, cfg, init, Noise::Replay(db))
}

fn run_grid(model: &ModelSpec, theta0: &Params, cfg: &SimConfig, init: Vec<Point2>, noise: Noise<'_>) -> Result<TrajectoryGrid> {
    let n = cfg.n_particles;
    let steps = cfg.total_steps();
    let dt = cfg.fine_step();
    let coeffs = model.coefficients();
    let mut y = Array2::zeros((n, steps + 1));
    let mut x = Array2::zeros((n, steps + 1));
    let mut dbs = Array2::zeros((n, steps));
    integrate(
        coeffs,
        theta0,
        init,
        steps,
        dt,
        noise,
        |_, cloud| coeffs.summarize(cloud),
        |k, cloud, db| {
            for (i, p) in cloud.iter().enumerate() {
                y[[i, k]] = p.y;
                x[[i, k]] = p.x;
            }
            if let Some(db) = db {
                for (i, v) in db.iter().enumerate() {
                    dbs[[i, k - 1]] = *v;
                }
            }
        },
    )?;
    Ok(TrajectoryGrid {
        times: (0..=steps).map(|k| k as f64 * dt).collect(),
        y,
        x,
        db: dbs,
        theta0: theta0.clone(),
        cfg: cfg.clone(),
    })
}

/// Simulates and keeps only the observation grid. Produces exactly
/// `subsample(simulate_ips(..))` without storing the fine grid.
pub fn simulate_observations(model: &ModelSpec, theta0: &Params, cfg: &SimConfig) -> Result<ObservationSet> {
    cfg.validate()?;
    check_theta(model, theta0)?;
    let n = cfg.n_particles;
    let m = cfg.fine_factor;
    let dt = cfg.fine_step();
    let coeffs = model.coefficients();
    let mut y = Array2::zeros((n, cfg.obs_steps + 1));
    let mut x = Array2::zeros((n, cfg.obs_steps + 1));
    integrate(
        coeffs,
        theta0,
        cfg.initial_points(),
        cfg.total_steps(),
        dt,
        dynamics_noise(cfg.seed, n, dt),
        |_, cloud| coeffs.summarize(cloud),
        |k, cloud, _| {
            if k % m == 0 {
                for (i, p) in cloud.iter().enumerate() {
                    y[[i, k / m]] = p.y;
                    x[[i, k / m]] = p.x;
                }
            }
        },
    )?;
    let times = (0..=cfg.obs_steps).map(|j| (j * m) as f64 * dt).collect();
    ObservationSet::new(cfg.delta(), times, y, Some(x))
}

/// Streams `visit(k, cloud, summary)` over every fine step of a run without
/// storing paths.
pub fn simulate_streaming<V>(model: &ModelSpec, theta0: &Params, cfg: &SimConfig, mut visit: V) -> Result<()>
where
    V: FnMut(usize, &[Point2], &MeasureSummary),
{
    cfg.validate()?;
    check_theta(model, theta0)?;
    let coeffs = model.coefficients();
    let dt = cfg.fine_step();
    integrate(
        coeffs,
        theta0,
        cfg.initial_points(),
        cfg.total_steps(),
        dt,
        dynamics_noise(cfg.seed, cfg.n_particles, dt),
        |_, cloud| coeffs.summarize(cloud),
        |k, cloud, _| visit(k, cloud, &coeffs.summarize(cloud)),
    )?;
    Ok(())
}

/// Options for [`simulate_coupled`].
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledConfig {
    pub ref_particles: usize,
    /// Seed of the independent reference system. Must differ from the
    /// particle system's seed.
    pub ref_seed: u64,
}

impl CoupledConfig {
    /// `20 N` reference particles, capped at 5000, with a derived seed.
    pub fn default_for(cfg: &SimConfig) -> Self {
        Self {
            ref_particles: (20 * cfg.n_particles).min(5000).max(cfg.n_particles),
            ref_seed: derive_seed(cfg.seed, &[0x5eed_0f_4ef]),
        }
    }
}

/// Particle system and its mean-field proxies driven by the same noise.
#[derive(Clone, Debug)]
pub struct CoupledPair {
    pub ips: TrajectoryGrid,
    pub mv_copies: TrajectoryGrid,
    /// Reference measure at each observation time.
    pub reference_flow: Vec<EmpiricalMeasure>,
}

impl CoupledPair {
    /// `sup_k (1/N) Σ_i |Z^i_k − Z̄^i_k|²` over the fine grid.
    pub fn mean_square_gap(&self) -> f64 {
        let n = self.ips.n_particles();
        (0..self.ips.times.len())
            .map(|k| {
                (0..n)
                    .map(|i| self.ips.state(i, k).dist_sq(self.mv_copies.state(i, k)))
                    .sum::<f64>()
                    / n as f64
            })
            .fold(0.0, f64::max)
    }
}

pub fn simulate_coupled(model: &ModelSpec, theta0: &Params, cfg: &SimConfig, coupled: &CoupledConfig) -> Result<CoupledPair> {
    cfg.validate()?;
    check_theta(model, theta0)?;
    if coupled.ref_particles < cfg.n_particles {
        return Err(Error::Config(format!(
            "reference system needs at least {} particles, got {}",
            cfg.n_particles, coupled.ref_particles
        )));
    }
    if coupled.ref_seed == cfg.seed {
        return Err(Error::Config("reference system must use noise independent of the particle system".into()));
    }
    let coeffs = model.coefficients();
    let steps = cfg.total_steps();
    let dt = cfg.fine_step();
    let m = cfg.fine_factor;

    let ref_cfg = SimConfig {
        n_particles: coupled.ref_particles,
        seed: coupled.ref_seed,
        ..cfg.clone()
    };
    let mut summaries = Vec::with_capacity(steps + 1);
    let mut flow = Vec::with_capacity(cfg.obs_steps + 1);
    integrate(
        coeffs,
        theta0,
        ref_cfg.initial_points(),
        steps,
        dt,
        dynamics_noise(ref_cfg.seed, ref_cfg.n_particles, dt),
        |_, cloud| coeffs.summarize(cloud),
        |k, cloud, _| {
            summaries.push(coeffs.summarize(cloud));
            if k % m == 0 {
                flow.push(cloud.to_vec());
            }
        },
    )?;

    let ips = simulate_ips(model, theta0, cfg)?;
    let n = cfg.n_particles;
    let mut y = Array2::zeros((n, steps + 1));
    let mut x = Array2::zeros((n, steps + 1));
    integrate(
        coeffs,
        theta0,
        ips.initial_points(),
        steps,
        dt,
        Noise::Replay(&ips.db),
        |k, _| summaries[k],
        |k, cloud, _| {
            for (i, p) in cloud.iter().enumerate() {
                y[[i, k]] = p.y;
                x[[i, k]] = p.x;
            }
        },
    )?;
    let mv_copies = TrajectoryGrid {
        times: ips.times.clone(),
        y,
        x,
        db: ips.db.clone(),
        theta0: theta0.clone(),
        cfg: cfg.clone(),
    };
    let reference_flow = flow.into_iter().map(EmpiricalMeasure::new).collect::<Result<Vec<_>>>()?;
    Ok(CoupledPair { ips, mv_copies, reference_flow })
}

/// Rows of the fine grid at multiples of the fine factor.
pub fn subsample(grid: &TrajectoryGrid, cfg: &SimConfig) -> Result<ObservationSet> {
    let steps = cfg.total_steps();
    if grid.y.dim() != (cfg.n_particles, steps + 1) || grid.x.dim() != grid.y.dim() {
        return Err(Error::Argument(format!(
            "grid shape {:?} does not match N = {}, n m = {}",
            grid.y.dim(),
            cfg.n_particles,
            steps
        )));
    }
    let m = cfg.fine_factor;
    let cols: Vec<usize> = (0..=cfg.obs_steps).map(|j| j * m).collect();
    let y = grid.y.select(ndarray::Axis(1), &cols);
    let x = grid.x.select(ndarray::Axis(1), &cols);
    let times = cols.iter().map(|&k| grid.times[k]).collect();
    ObservationSet::new(cfg.delta(), times, y, Some(x))
}
