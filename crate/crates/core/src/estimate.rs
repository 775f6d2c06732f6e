//! Contrast minimization over the parameter box, a closed-form oracle for
//! linear models, and plug-in asymptotic covariances.

use nalgebra::DMatrix;

use crate::contrast::IncrementTable;
use crate::error::{Error, Result};
use crate::harness::io::fmt_f64;
use crate::model::{ModelSpec, Params};
use crate::observe::{ObservationMode, ObservationSet};
use crate::optim::{minimize_box, BoxOptions, BoxOutcome};
use crate::rng::{NoiseStream, StreamTag};

#[derive(Clone, Debug, PartialEq)]
pub struct OptConfig {
    /// Box centre plus `starts − 1` uniform random points.
    pub starts: usize,
    pub grad_tol: f64,
    pub max_evals: usize,
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self { starts: 5, grad_tol: 1e-10, max_evals: 2000, seed: 0 }
    }
}

/// Empirical `Σ⁽¹⁾`, `Σ⁽²⁾` and the asymptotic covariances they imply.
#[derive(Clone, Debug, PartialEq)]
pub struct PlugIn {
    /// `(Δ/N) Σ 2 ∂μb ∂μbᵀ / c`.
    pub sigma1: DMatrix<f64>,
    /// `(Δ/N) Σ ∂σc ∂σcᵀ / c²`.
    pub sigma2: DMatrix<f64>,
    /// Covariance of `√N(μ̂ − μ₀)`: `2 [Σ⁽¹⁾]⁻¹`.
    pub mu_cov: Option<DMatrix<f64>>,
    /// Covariance of `√(N/Δ)(σ̂ − σ₀)`: `2 [Σ⁽²⁾]⁻¹` complete, `9/4 [Σ⁽²⁾]⁻¹` partial.
    pub sigma_cov: Option<DMatrix<f64>>,
    /// Factor in front of `[Σ⁽²⁾]⁻¹`.
    pub sigma_factor: f64,
    pub invertible: bool,
}

pub fn sigma_variance_factor(mode: ObservationMode) -> f64 {
    match mode {
        ObservationMode::Complete => 2.0,
        ObservationMode::Partial => 9.0 / 4.0,
    }
}

fn plug_in_from_table(model: &ModelSpec, table: &IncrementTable, theta: &Params) -> Result<PlugIn> {
    let c = model.coefficients();
    let p1 = theta.mu.len();
    let p2 = theta.sigma.len();
    let mut s1 = DMatrix::zeros(p1, p1);
    let mut s2 = DMatrix::zeros(p2, p2);
    let mut gb = vec![0.0; p1];
    let mut ga = vec![0.0; p2];
    for (z, m, _) in table.rows() {
        let a = c.diffusion(&theta.sigma, z, m);
        let cc = a * a;
        if !(cc > 0.0) {
            return Err(Error::Model(format!("squared diffusion {cc} in plug-in")));
        }
        c.drift_grad(&theta.mu, z, m, &mut gb);
        c.diffusion_grad(&theta.sigma, z, m, &mut ga);
        for k in 0..p1 {
            for l in 0..p1 {
                s1[(k, l)] += 2.0 * gb[k] * gb[l] / cc;
            }
        }
        // ∂σc / c = 2 ∂σa / a
        for k in 0..p2 {
            for l in 0..p2 {
                s2[(k, l)] += 4.0 * ga[k] * ga[l] / cc;
            }
        }
    }
    let scale = table.delta / table.n_particles() as f64;
    s1 *= scale;
    s2 *= scale;
    let factor = sigma_variance_factor(table.mode);
    let mu_cov = invert_spd(&s1).map(|m| m * 2.0);
    let sigma_cov = invert_spd(&s2).map(|m| m * factor);
    let invertible = mu_cov.is_some() && sigma_cov.is_some();
    Ok(PlugIn { sigma1: s1, sigma2: s2, mu_cov, sigma_cov, sigma_factor: factor, invertible })
}

/// Inverse when the condition number stays below `1e12`.
fn invert_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= 1e-12 * max {
        return None;
    }
    m.clone().try_inverse()
}

/// Plug-in `Σ⁽¹⁾`, `Σ⁽²⁾` at `theta_hat` with `Π̄` replaced by `(Δ/N) ν`.
pub fn plug_in_sigma(model: &ModelSpec, obs: &ObservationSet, theta_hat: &Params, mode: ObservationMode) -> Result<PlugIn> {
    let table = IncrementTable::new(model.coefficients(), obs, mode)?;
    plug_in_from_table(model, &table, theta_hat)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateReport {
    pub theta_hat: Params,
    pub mode: ObservationMode,
    pub contrast_at_opt: f64,
    pub n_evals: usize,
    pub converged: bool,
    pub at_boundary: bool,
    pub used_fallback: bool,
    pub n_particles: usize,
    pub delta: f64,
    pub sigma_blocks: PlugIn,
    /// `(√N(μ̂ − μ₀), √(N/Δ)(σ̂ − σ₀))`, once the truth is attached.
    pub normalized_errors: Option<(Vec<f64>, Vec<f64>)>,
}

impl EstimateReport {
    pub fn with_truth(mut self, theta0: &Params) -> Self {
        let n = self.n_particles as f64;
        let mu = self.theta_hat.mu.iter().zip(&theta0.mu).map(|(a, b)| n.sqrt() * (a - b)).collect();
        let sd = (n / self.delta).sqrt();
        let sigma = self.theta_hat.sigma.iter().zip(&theta0.sigma).map(|(a, b)| sd * (a - b)).collect();
        self.normalized_errors = Some((mu, sigma));
        self
    }

    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut put = |k: String, v: String| {
            out.push_str(&k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        put("mode".into(), self.mode.tag().into());
        for (k, v) in self.theta_hat.mu.iter().enumerate() {
            put(format!("mu{}", k + 1), fmt_f64(*v));
        }
        for (k, v) in self.theta_hat.sigma.iter().enumerate() {
            put(format!("sigma{}", k + 1), fmt_f64(*v));
        }
        put("contrast".into(), fmt_f64(self.contrast_at_opt));
        put("n_evals".into(), self.n_evals.to_string());
        put("converged".into(), self.converged.to_string());
        put("at_boundary".into(), self.at_boundary.to_string());
        put("invertible".into(), self.sigma_blocks.invertible.to_string());
        if let Some((mu, sigma)) = &self.normalized_errors {
            for (k, v) in mu.iter().enumerate() {
                put(format!("err_mu{}", k + 1), fmt_f64(*v));
            }
            for (k, v) in sigma.iter().enumerate() {
                put(format!("err_sigma{}", k + 1), fmt_f64(*v));
            }
        }
        if let Some(c) = &self.sigma_blocks.mu_cov {
            for k in 0..c.nrows() {
                put(format!("avar_mu{}", k + 1), fmt_f64(c[(k, k)]));
            }
        }
        if let Some(c) = &self.sigma_blocks.sigma_cov {
            for k in 0..c.nrows() {
                put(format!("avar_sigma{}", k + 1), fmt_f64(c[(k, k)]));
            }
        }
        out
    }

    pub fn csv_header(p1: usize, p2: usize) -> Vec<String> {
        let mut h = vec!["mode".to_string()];
        h.extend((1..=p1).map(|k| format!("mu{k}")));
        h.extend((1..=p2).map(|k| format!("sigma{k}")));
        h.extend(["contrast", "n_evals", "converged", "at_boundary"].map(String::from));
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![self.mode.tag().to_string()];
        r.extend(self.theta_hat.mu.iter().chain(&self.theta_hat.sigma).map(|v| fmt_f64(*v)));
        r.push(fmt_f64(self.contrast_at_opt));
        r.push(self.n_evals.to_string());
        r.push(self.converged.to_string());
        r.push(self.at_boundary.to_string());
        r
    }
}

/// Starting points: the box centre, then uniform draws keyed by start index.
pub fn start_points(model: &ModelSpec, cfg: &OptConfig) -> Vec<Vec<f64>> {
    let b = model.param_box();
    let lo = b.lower();
    let hi = b.upper();
    let mut starts = vec![b.center().flat()];
    for k in 1..cfg.starts.max(1) {
        let mut rng = NoiseStream::new(cfg.seed, k as u64, StreamTag::Start);
        starts.push(lo.iter().zip(&hi).map(|(l, h)| l + (h - l) * rng.uniform()).collect());
    }
    starts
}

/// Minimizes the `mode` contrast over the model's box.
pub fn fit(model: &ModelSpec, obs: &ObservationSet, mode: ObservationMode, cfg: &OptConfig) -> Result<EstimateReport> {
    if mode == ObservationMode::Complete && obs.mode != ObservationMode::Complete {
        return Err(Error::Argument("complete fit needs observed velocities".into()));
    }
    let table = IncrementTable::new(model.coefficients(), obs, mode)?;
    fit_table(model, &table, cfg)
}

/// [`fit`] on prepared rows.
pub fn fit_table(model: &ModelSpec, table: &IncrementTable, cfg: &OptConfig) -> Result<EstimateReport> {
    let coeffs = model.coefficients();
    let p1 = model.drift_dim();
    let b = model.param_box();
    let (lo, hi) = (b.lower(), b.upper());
    let opts = BoxOptions { grad_tol: cfg.grad_tol, max_evals: cfg.max_evals };

    let mut outcomes: Vec<BoxOutcome> = Vec::new();
    let mut trace = Vec::new();
    let mut total_evals = 0;
    for (k, x0) in start_points(model, cfg).into_iter().enumerate() {
        let objective = |x: &[f64]| {
            let c = table.evaluate(coeffs, &Params::from_flat(x, p1))?;
            Ok((c.value, c.grad))
        };
        match minimize_box(objective, &x0, &lo, &hi, &opts) {
            Ok(o) => {
                total_evals += o.n_evals;
                outcomes.push(o);
            }
            Err(e) => trace.push(format!("start {k}: {e}")),
        }
    }
    let best = select_best(outcomes)
        .ok_or_else(|| Error::Optimization(format!("every start failed: {}", trace.join("; "))))?;
    let theta_hat = Params::from_flat(&best.x, p1);
    let sigma_blocks = plug_in_from_table(model, table, &theta_hat)?;
    Ok(EstimateReport {
        at_boundary: b.on_boundary(&theta_hat, 1e-6),
        theta_hat,
        mode: table.mode,
        contrast_at_opt: best.value,
        n_evals: total_evals,
        converged: best.converged,
        used_fallback: best.used_fallback,
        n_particles: table.n_particles(),
        delta: table.delta,
        sigma_blocks,
        normalized_errors: None,
    })
}

/// Lowest value; near-ties broken by smaller norm, then lexicographically.
fn select_best(mut outcomes: Vec<BoxOutcome>) -> Option<BoxOutcome> {
    let min = outcomes.iter().map(|o| o.value).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    let tie = 1e-12 * (1.0 + min.abs());
    outcomes.retain(|o| o.value - min <= tie);
    outcomes.sort_by(|a, b| {
        let na: f64 = a.x.iter().map(|v| v * v).sum();
        let nb: f64 = b.x.iter().map(|v| v * v).sum();
        na.total_cmp(&nb).then_with(|| {
            a.x.iter()
                .zip(&b.x)
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    outcomes.into_iter().next()
}

/// Exact minimizer of the contrast for drift linear in μ and constant
/// scalar diffusion: normal equations `Σφφᵀ μ = Σ φ·inc / Δ`, then
/// `σ̂² = w · RSS / (Δ · rows)`. Ignores the parameter box.
pub fn closed_form_linear(model: &ModelSpec, obs: &ObservationSet, mode: ObservationMode) -> Result<Params> {
    let c = model.coefficients();
    if !c.linear_drift() || !c.constant_diffusion() || c.diffusion_dim() != 1 {
        return Err(Error::Argument(format!("{} is not linear with constant diffusion", c.name())));
    }
    if mode == ObservationMode::Complete && obs.mode != ObservationMode::Complete {
        return Err(Error::Argument("complete fit needs observed velocities".into()));
    }
    let table = IncrementTable::new(c, obs, mode)?;
    let p = c.drift_dim();
    let delta = table.delta;
    let zero = vec![0.0; p];
    let mut phi = vec![0.0; p];
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DMatrix::<f64>::zeros(p, 1);
    for (z, m, inc) in table.rows() {
        c.drift_grad(&zero, z, m, &mut phi);
        for k in 0..p {
            rhs[(k, 0)] += phi[k] * inc / delta;
            for l in 0..p {
                gram[(k, l)] += phi[k] * phi[l];
            }
        }
    }
    let sv = gram.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= 1e-13 * max {
        return Err(Error::Rank(format!("normal matrix singular values {:?}", sv.as_slice())));
    }
    let mu = gram
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Rank("normal matrix not invertible".into()))?;
    let mu: Vec<f64> = mu.iter().copied().collect();
    let rss: f64 = table
        .rows()
        .map(|(z, m, inc)| {
            let r = inc - delta * c.drift(&mu, z, m);
            r * r
        })
        .sum();
    let var = table.weight * rss / (delta * table.len() as f64);
    Ok(Params::new(mu, vec![var.sqrt()]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(x: Vec<f64>, value: f64) -> BoxOutcome {
        BoxOutcome { x, value, grad: vec![], n_evals: 1, converged: true, used_fallback: false }
    }

    #[test]
    fn tie_break_prefers_small_norm_then_lexicographic() {
        let best = select_best(vec![outcome(vec![2.0, 0.0], 1.0), outcome(vec![0.0, 1.0], 1.0), outcome(vec![5.0, 5.0], 3.0)]).unwrap();
        assert_eq!(best.x, vec![0.0, 1.0]);
        let best = select_best(vec![outcome(vec![0.0, 1.0], 1.0), outcome(vec![-1.0, 0.0], 1.0)]).unwrap();
        assert_eq!(best.x, vec![-1.0, 0.0]);
        assert!(select_best(vec![]).is_none());
    }

    #[test]
    fn variance_factors() {
        assert_eq!(sigma_variance_factor(ObservationMode::Partial) / sigma_variance_factor(ObservationMode::Complete), 9.0 / 8.0);
    }
}
