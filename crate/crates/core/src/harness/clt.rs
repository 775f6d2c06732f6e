//! Normalized-error summaries against the limiting Gaussian variances.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use super::io::fmt_f64;
use super::replicate::ReplicationRow;
use super::stats::{anderson_darling, covariance, histogram, mean, qq_pairs, AndersonDarling};
use crate::contrast::{pi_bar_oracle_vec, OracleConfig};
use crate::error::{Error, Result};
use crate::estimate::sigma_variance_factor;
use crate::model::{ModelSpec, Params};
use crate::observe::ObservationMode;
use crate::simulate::InitLaw;

/// Minimum converged rows per (cell, mode).
pub const MIN_ROWS: usize = 100;

/// Limiting covariances computed from the brute-force `Π̄` oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleVariances {
    /// `Π̄(∂μb ∂μbᵀ / a²)`.
    pub drift_information: DMatrix<f64>,
    /// `Π̄(∂σc ∂σcᵀ / c²)`.
    pub diffusion_information: DMatrix<f64>,
    /// `[Π̄(∂μb ∂μbᵀ / a²)]⁻¹`, both modes.
    pub mu_cov: DMatrix<f64>,
    /// `[Π̄(∂σc ∂σcᵀ / c²)]⁻¹`, before the 2 or 9/4 factor.
    pub sigma_cov_unscaled: DMatrix<f64>,
}

impl OracleVariances {
    pub fn sigma_cov(&self, mode: ObservationMode) -> DMatrix<f64> {
        &self.sigma_cov_unscaled * sigma_variance_factor(mode)
    }

    /// Diagonal variances of `(√N(μ̂ − μ₀), √(N/Δ)(σ̂ − σ₀))` in `mode`.
    pub fn diagonal(&self, mode: ObservationMode) -> Vec<f64> {
        let s = self.sigma_cov(mode);
        (0..self.mu_cov.nrows()).map(|k| self.mu_cov[(k, k)]).chain((0..s.nrows()).map(|k| s[(k, k)])).collect()
    }
}

/// Evaluates both information matrices with [`pi_bar_oracle_vec`].
pub fn oracle_variances(model: &ModelSpec, theta0: &Params, horizon: f64, init: InitLaw, cfg: &OracleConfig) -> Result<OracleVariances> {
    let c = model.coefficients();
    let p1 = theta0.mu.len();
    let p2 = theta0.sigma.len();
    let est = pi_bar_oracle_vec(model, theta0, horizon, init, cfg, p1 * p1 + p2 * p2, |z, m, out| {
        let mut gb = vec![0.0; p1];
        let mut ga = vec![0.0; p2];
        c.drift_grad(&theta0.mu, z, m, &mut gb);
        c.diffusion_grad(&theta0.sigma, z, m, &mut ga);
        let a = c.diffusion(&theta0.sigma, z, m);
        for k in 0..p1 {
            for l in 0..p1 {
                out[k * p1 + l] = gb[k] * gb[l] / (a * a);
            }
        }
        for k in 0..p2 {
            for l in 0..p2 {
                out[p1 * p1 + k * p2 + l] = 4.0 * ga[k] * ga[l] / (a * a);
            }
        }
    })?;
    let drift_information = DMatrix::from_row_slice(p1, p1, &est.mean[..p1 * p1]);
    let diffusion_information = DMatrix::from_row_slice(p2, p2, &est.mean[p1 * p1..]);
    let inv = |m: &DMatrix<f64>, what: &str| {
        m.clone().try_inverse().ok_or_else(|| Error::Rank(format!("{what} information is singular")))
    };
    Ok(OracleVariances {
        mu_cov: inv(&drift_information, "drift")?,
        sigma_cov_unscaled: inv(&diffusion_information, "diffusion")?,
        drift_information,
        diffusion_information,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CltGroup {
    pub cell: usize,
    pub mode: ObservationMode,
    pub n_particles: usize,
    pub obs_steps: usize,
    pub n_delta: f64,
    pub rows: usize,
    /// Normalized errors, one vector per row, sorted by replicate.
    pub errors: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// Average plug-in variance per component.
    pub plug_in_var: Vec<f64>,
    pub oracle_var: Option<Vec<f64>>,
    /// Empirical variance over oracle variance.
    pub oracle_ratio: Option<Vec<f64>>,
    pub plug_in_ratio: Vec<f64>,
    pub normality: Vec<Option<AndersonDarling>>,
}

impl CltGroup {
    pub fn variances(&self) -> Vec<f64> {
        (0..self.covariance.len()).map(|k| self.covariance[k][k]).collect()
    }

    /// Component `k` of every row.
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.errors.iter().map(|e| e[k]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CltSummary {
    pub groups: Vec<CltGroup>,
    /// `(cell, per-σ-component Var_P / Var_C)` where both modes are present.
    pub sigma_ratios: Vec<(usize, Vec<f64>)>,
    pub drift_dim: usize,
}

impl CltSummary {
    pub fn group(&self, cell: usize, mode: ObservationMode) -> Option<&CltGroup> {
        self.groups.iter().find(|g| g.cell == cell && g.mode == mode)
    }

    /// Summary table, one row per (cell, mode, component).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "cell", "mode", "n_particles", "obs_steps", "n_delta", "rows", "component", "mean", "variance",
            "plug_in_var", "oracle_var", "oracle_ratio", "ad_statistic", "ad_passes",
        ])?;
        for g in &self.groups {
            for k in 0..g.mean.len() {
                let name = component_name(k, self.drift_dim);
                let ad = g.normality[k];
                out.write_record([
                    g.cell.to_string(),
                    g.mode.tag().to_string(),
                    g.n_particles.to_string(),
                    g.obs_steps.to_string(),
                    fmt_f64(g.n_delta),
                    g.rows.to_string(),
                    name,
                    fmt_f64(g.mean[k]),
                    fmt_f64(g.covariance[k][k]),
                    fmt_f64(g.plug_in_var[k]),
                    g.oracle_var.as_ref().map_or(String::new(), |v| fmt_f64(v[k])),
                    g.oracle_ratio.as_ref().map_or(String::new(), |v| fmt_f64(v[k])),
                    ad.map_or(String::new(), |a| fmt_f64(a.a2_star)),
                    ad.map_or(String::new(), |a| a.passes.to_string()),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Histogram and QQ files per (cell, mode, component) under `dir`.
    pub fn write_plot_data(&self, dir: &Path, bins: usize) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for g in &self.groups {
            for k in 0..g.mean.len() {
                let stem = format!("cell{}_{}_{}", g.cell, g.mode.tag(), component_name(k, self.drift_dim));
                let sample = g.component(k);
                let mut h = csv::Writer::from_path(dir.join(format!("{stem}_hist.csv")))?;
                h.write_record(["lo", "hi", "count", "density"])?;
                for b in histogram(&sample, bins) {
                    h.write_record([fmt_f64(b.lo), fmt_f64(b.hi), b.count.to_string(), fmt_f64(b.density)])?;
                }
                h.flush()?;
                let mut q = csv::Writer::from_path(dir.join(format!("{stem}_qq.csv")))?;
                q.write_record(["theoretical", "sample"])?;
                for (t, s) in qq_pairs(&sample) {
                    q.write_record([fmt_f64(t), fmt_f64(s)])?;
                }
                q.flush()?;
            }
        }
        Ok(())
    }
}

fn component_name(k: usize, p1: usize) -> String {
    if k < p1 {
        format!("mu{}", k + 1)
    } else {
        format!("sigma{}", k - p1 + 1)
    }
}

/// Groups converged rows by (cell, mode) and compares moments of the
/// normalized errors with the plug-in and oracle variances. The result does
/// not depend on row order.
pub fn clt_summary(rows: &[ReplicationRow], drift_dim: usize, oracle: Option<&OracleVariances>) -> Result<CltSummary> {
    let mut keys: Vec<(usize, ObservationMode)> = rows.iter().map(|r| (r.cell, r.mode)).collect();
    keys.sort();
    keys.dedup();
    if keys.is_empty() {
        return Err(Error::InsufficientData("no rows".into()));
    }
    let mut groups = Vec::new();
    for (cell, mode) in keys {
        let mut sel: Vec<&ReplicationRow> = rows
            .iter()
            .filter(|r| r.cell == cell && r.mode == mode && r.is_ok() && r.converged && r.normalized_errors.iter().all(|v| v.is_finite()))
            .collect();
        if sel.len() < MIN_ROWS {
            return Err(Error::InsufficientData(format!(
                "cell {cell} mode {} has {} converged rows, need {MIN_ROWS}",
                mode.tag(),
                sel.len()
            )));
        }
        sel.sort_by_key(|r| (r.replicate, r.seed));
        let errors: Vec<Vec<f64>> = sel.iter().map(|r| r.normalized_errors.clone()).collect();
        let p = errors[0].len();
        let cov = covariance(&errors);
        let means: Vec<f64> = (0..p).map(|k| mean(&errors.iter().map(|e| e[k]).collect::<Vec<_>>())).collect();
        let plug: Vec<f64> = (0..p).map(|k| mean(&sel.iter().map(|r| r.plug_in_var[k]).collect::<Vec<_>>())).collect();
        let var: Vec<f64> = (0..p).map(|k| cov[k][k]).collect();
        let oracle_var = oracle.map(|o| o.diagonal(mode));
        let oracle_ratio = oracle_var.as_ref().map(|o| var.iter().zip(o).map(|(a, b)| a / b).collect());
        let normality = (0..p).map(|k| anderson_darling(&errors.iter().map(|e| e[k]).collect::<Vec<_>>())).collect();
        groups.push(CltGroup {
            cell,
            mode,
            n_particles: sel[0].n_particles,
            obs_steps: sel[0].obs_steps,
            n_delta: sel[0].n_delta,
            rows: sel.len(),
            plug_in_ratio: var.iter().zip(&plug).map(|(a, b)| a / b).collect(),
            errors,
            mean: means,
            covariance: cov,
            plug_in_var: plug,
            oracle_var,
            oracle_ratio,
            normality,
        });
    }
    let mut sigma_ratios = Vec::new();
    for g in groups.iter().filter(|g| g.mode == ObservationMode::Complete) {
        if let Some(p) = groups.iter().find(|h| h.cell == g.cell && h.mode == ObservationMode::Partial) {
            let vc = g.variances();
            let vp = p.variances();
            sigma_ratios.push((g.cell, (drift_dim..vc.len()).map(|k| vp[k] / vc[k]).collect()));
        }
    }
    Ok(CltSummary { groups, sigma_ratios, drift_dim })
}
