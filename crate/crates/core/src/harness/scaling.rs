//! Log-log convergence slopes.

use std::io::Write;

use super::config::ExperimentConfig;
use super::io::fmt_f64;
use super::replicate::{run_replications, ReplicationRow};
use super::stats::{log_log_fit, mean, rmse, LineFit};
use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::model::{ModelSpec, Params};
use crate::observe::ObservationMode;
use crate::rng::derive_seed;
use crate::simulate::{simulate_coupled, simulate_ips, subsample, CoupledConfig, SimConfig};

/// One quantity measured along one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct SlopeRow {
    pub quantity: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub fit: Option<LineFit>,
    /// Fewer than three points, or no usable fit.
    pub degenerate: bool,
}

impl SlopeRow {
    pub fn new(quantity: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        let fit = log_log_fit(&x, &y);
        Self { quantity: quantity.into(), degenerate: x.len() < 3 || fit.is_none(), x, y, fit }
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.y.windows(2).all(|w| w[1] < w[0])
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScalingTable {
    pub rows: Vec<SlopeRow>,
}

impl ScalingTable {
    pub fn get(&self, quantity: &str) -> Option<&SlopeRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    /// `quantity,x,y,slope,intercept,r2,degenerate`, one line per point.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["quantity", "x", "y", "slope", "intercept", "r2", "degenerate"])?;
        for r in &self.rows {
            for (x, y) in r.x.iter().zip(&r.y) {
                let f = |g: fn(&LineFit) -> f64| r.fit.as_ref().map_or(String::new(), |l| fmt_f64(g(l)));
                out.write_record([
                    r.quantity.clone(),
                    fmt_f64(*x),
                    fmt_f64(*y),
                    f(|l| l.slope),
                    f(|l| l.intercept),
                    f(|l| l.r2),
                    r.degenerate.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn param_name(k: usize, p1: usize) -> String {
    if k < p1 {
        format!("mu{}", k + 1)
    } else {
        format!("sigma{}", k - p1 + 1)
    }
}

/// RMSE of component `k` of `θ̂` per particle count, over usable rows of
/// `mode`. Rows are grouped by `N` in increasing order.
pub fn rmse_by_particles(rows: &[ReplicationRow], theta0: &Params, mode: ObservationMode, k: usize) -> (Vec<f64>, Vec<f64>) {
    let truth = theta0.flat()[k];
    let mut ns: Vec<usize> = rows.iter().filter(|r| r.mode == mode).map(|r| r.n_particles).collect();
    ns.sort_unstable();
    ns.dedup();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for n in ns {
        let mut vals: Vec<(usize, f64)> = rows
            .iter()
            .filter(|r| r.mode == mode && r.n_particles == n && r.is_ok() && r.theta_hat[k].is_finite())
            .map(|r| (r.replicate, r.theta_hat[k]))
            .collect();
        if vals.is_empty() {
            continue;
        }
        vals.sort_by_key(|v| v.0);
        let v: Vec<f64> = vals.into_iter().map(|v| v.1).collect();
        xs.push(n as f64);
        ys.push(rmse(&v, truth));
    }
    (xs, ys)
}

/// `RMS(X̃_j − X_j)` for each observation count in `obs_steps`, all taken
/// from one fine simulation so that every Δ sees the same paths.
pub fn surrogate_error_scaling(model: &ModelSpec, theta0: &Params, base: &SimConfig, obs_steps: &[usize]) -> Result<SlopeRow> {
    let finest = *obs_steps.iter().max().ok_or_else(|| Error::Argument("no observation counts".into()))?;
    if obs_steps.iter().any(|n| finest % n != 0) {
        return Err(Error::Argument(format!("{obs_steps:?} must all divide {finest}")));
    }
    let cfg = SimConfig { obs_steps: finest, ..base.clone() };
    let grid = simulate_ips(model, theta0, &cfg)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut sorted = obs_steps.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    for n in sorted {
        let sub = SimConfig { obs_steps: n, fine_factor: cfg.fine_factor * finest / n, ..cfg.clone() };
        let obs = subsample(&grid, &sub)?;
        let sur = obs.make_partial().surrogate()?;
        let x = obs.x.as_ref().expect("subsample keeps velocities");
        let sq: Vec<f64> = (0..obs.n_particles())
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (sur.x_tilde[[i, j]] - x[[i, j]]).powi(2))
            .collect();
        xs.push(obs.delta);
        ys.push(mean(&sq).sqrt());
    }
    Ok(SlopeRow::new("surrogate_error_vs_delta", xs, ys))
}

/// `RMS_j W2(Π̃_j, Π_j)` per observation count; the assignment solver makes
/// this cubic in `N`.
pub fn surrogate_w2_scaling(model: &ModelSpec, theta0: &Params, base: &SimConfig, obs_steps: &[usize]) -> Result<SlopeRow> {
    let finest = *obs_steps.iter().max().ok_or_else(|| Error::Argument("no observation counts".into()))?;
    if obs_steps.iter().any(|n| finest % n != 0) {
        return Err(Error::Argument(format!("{obs_steps:?} must all divide {finest}")));
    }
    let cfg = SimConfig { obs_steps: finest, ..base.clone() };
    let grid = simulate_ips(model, theta0, &cfg)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut sorted = obs_steps.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    for n in sorted {
        let sub = SimConfig { obs_steps: n, fine_factor: cfg.fine_factor * finest / n, ..cfg.clone() };
        let obs = subsample(&grid, &sub)?;
        let sur = obs.make_partial().surrogate()?;
        let mut sq = Vec::with_capacity(n);
        for j in 0..n {
            let true_cloud = EmpiricalMeasure::new((0..obs.n_particles()).map(|i| obs.state(i, j).expect("complete")).collect())?;
            sq.push(sur.measures[j].w2(&true_cloud)?.powi(2));
        }
        xs.push(obs.delta);
        ys.push(mean(&sq).sqrt());
    }
    Ok(SlopeRow::new("surrogate_w2_vs_delta", xs, ys))
}

/// Mean over `seeds` of the coupled gap for each `N`.
pub fn poc_gap_trend(model: &ModelSpec, theta0: &Params, base: &SimConfig, ns: &[usize], seeds: usize) -> Result<SlopeRow> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &n in ns {
        let mut gaps = Vec::with_capacity(seeds);
        for s in 0..seeds {
            let cfg = SimConfig { n_particles: n, seed: derive_seed(base.seed, &[n as u64, s as u64]), ..base.clone() };
            let pair = simulate_coupled(model, theta0, &cfg, &CoupledConfig::default_for(&cfg))?;
            gaps.push(pair.mean_square_gap());
        }
        xs.push(n as f64);
        ys.push(mean(&gaps));
    }
    Ok(SlopeRow::new("poc_gap_vs_n", xs, ys))
}

/// Replications over the configured grid, then RMSE slopes per parameter
/// and mode, the surrogate error slope, and the coupled gap trend.
pub fn scaling_study(cfg: &ExperimentConfig) -> Result<ScalingTable> {
    let model = cfg.model_spec()?;
    let theta0 = cfg.theta0();
    let p1 = theta0.mu.len();
    let rows = run_replications(cfg)?;
    let mut table = ScalingTable::default();
    for mode in cfg.modes()? {
        for k in 0..theta0.dim() {
            let (n, r) = rmse_by_particles(&rows, &theta0, mode, k);
            table.rows.push(SlopeRow::new(format!("rmse_{}_{}_vs_n", param_name(k, p1), mode.tag()), n, r));
        }
        for k in p1..theta0.dim() {
            let mut pts: Vec<(f64, f64)> = Vec::new();
            for cell in cfg.cells() {
                let v: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.cell == cell.index && r.mode == mode && r.is_ok())
                    .map(|r| r.theta_hat[k])
                    .collect();
                if !v.is_empty() {
                    pts.push((cell.n_particles as f64 / cell.delta(), rmse(&v, theta0.flat()[k])));
                }
            }
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (x, y) = pts.into_iter().unzip();
            table.rows.push(SlopeRow::new(format!("rmse_{}_{}_vs_n_over_delta", param_name(k, p1), mode.tag()), x, y));
        }
    }
    let first = cfg.cells()[0];
    let base = first.sim_config(derive_seed(cfg.run.seed, &[0x5ca1e]));
    let mut steps = cfg.grid.obs_steps.clone();
    if steps.len() < 3 {
        steps = vec![50, 100, 200, 400];
    }
    table.rows.push(surrogate_error_scaling(&model, &theta0, &base, &steps)?);
    let seeds = cfg.run.replications.min(20);
    table.rows.push(poc_gap_trend(&model, &theta0, &base, &cfg.grid.n_particles, seeds)?);
    Ok(table)
}
