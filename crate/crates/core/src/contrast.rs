//! Quasi-likelihood contrasts for complete and partial observations, their
//! analytic gradients, and the ν, I, Q data functionals.
//!
//! Both contrasts are sums over rows `(z, π, increment)`:
//!
//! * complete: `z = Z_j`, `π = Π_j`, increment `X_{j+1} − X_j`, `j = 0..n−1`,
//!   quadratic weight 1;
//! * partial: `z = Z̃_{j−1}`, `π = Π̃_{j−1}`, increment `X̃_{j+1} − X̃_j`,
//!   `j = 1..n−2`, quadratic weight 3/2.
//!
//! An [`IncrementTable`] holds those rows once per dataset so that repeated
//! evaluations at different θ only touch the coefficients.

use crate::error::{Error, Result};
use crate::measure::Point2;
use crate::model::{Coefficients, MeasureSummary, ModelSpec, Params};
use crate::observe::{ObservationMode, ObservationSet};
use crate::simulate::{simulate_streaming, InitLaw, SimConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastValue {
    pub value: f64,
    /// `∂μ` block followed by `∂σ` block.
    pub grad: Vec<f64>,
    pub per_term_count: usize,
}

/// Summands of a contrast, stored particle-major.
#[derive(Clone, Debug)]
pub struct IncrementTable {
    pub mode: ObservationMode,
    pub delta: f64,
    /// Prefactor of the quadratic term.
    pub weight: f64,
    n_particles: usize,
    n_slices: usize,
    states: Vec<Point2>,
    increments: Vec<f64>,
    summaries: Vec<MeasureSummary>,
}

impl IncrementTable {
    /// Rows for `mode`. Partial mode reads positions only, so complete data
    /// may be passed for either mode.
    pub fn new(coeffs: &dyn Coefficients, obs: &ObservationSet, mode: ObservationMode) -> Result<Self> {
        let np = obs.n_particles();
        let n = obs.obs_steps();
        match mode {
            ObservationMode::Complete => {
                let x = obs
                    .x
                    .as_ref()
                    .ok_or_else(|| Error::Argument("complete contrast needs observed velocities".into()))?;
                let mut states = Vec::with_capacity(np * n);
                let mut increments = Vec::with_capacity(np * n);
                for i in 0..np {
                    for j in 0..n {
                        states.push(Point2::new(obs.y[[i, j]], x[[i, j]]));
                        increments.push(x[[i, j + 1]] - x[[i, j]]);
                    }
                }
                let summaries = (0..n)
                    .map(|j| {
                        let cloud: Vec<Point2> = (0..np).map(|i| states[i * n + j]).collect();
                        coeffs.summarize(&cloud)
                    })
                    .collect();
                Ok(Self {
                    mode,
                    delta: obs.delta,
                    weight: 1.0,
                    n_particles: np,
                    n_slices: n,
                    states,
                    increments,
                    summaries,
                })
            }
            ObservationMode::Partial => {
                if n < 4 {
                    return Err(Error::Argument(format!("partial contrast needs n ≥ 4, got {n}")));
                }
                let sur = obs.surrogate()?;
                let slices = n - 2;
                let mut states = Vec::with_capacity(np * slices);
                let mut increments = Vec::with_capacity(np * slices);
                for i in 0..np {
                    for j in 1..=slices {
                        states.push(sur.state(i, j - 1));
                        increments.push(sur.x_tilde[[i, j + 1]] - sur.x_tilde[[i, j]]);
                    }
                }
                let summaries = (0..slices).map(|s| coeffs.summarize(sur.measures[s].points())).collect();
                Ok(Self {
                    mode,
                    delta: obs.delta,
                    weight: 1.5,
                    n_particles: np,
                    n_slices: slices,
                    states,
                    increments,
                    summaries,
                })
            }
        }
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    /// Number of time indices per particle.
    pub fn n_slices(&self) -> usize {
        self.n_slices
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Row `(state, summary, increment)` of particle `i` at slice `s`.
    pub fn row(&self, i: usize, s: usize) -> (Point2, &MeasureSummary, f64) {
        let k = i * self.n_slices + s;
        (self.states[k], &self.summaries[s], self.increments[k])
    }

    pub fn rows(&self) -> impl Iterator<Item = (Point2, &MeasureSummary, f64)> + '_ {
        (0..self.n_particles).flat_map(move |i| (0..self.n_slices).map(move |s| self.row(i, s)))
    }

    /// Contrast value and gradient at `theta`.
    pub fn evaluate(&self, coeffs: &dyn Coefficients, theta: &Params) -> Result<ContrastValue> {
        let p1 = theta.mu.len();
        let p2 = theta.sigma.len();
        let delta = self.delta;
        let w = self.weight;
        let mut gb = vec![0.0; p1];
        let mut ga = vec![0.0; p2];
        let mut values = Vec::with_capacity(self.n_particles);
        let mut grads = Vec::with_capacity(self.n_particles);
        for i in 0..self.n_particles {
            let mut v = 0.0;
            let mut g = vec![0.0; p1 + p2];
            for s in 0..self.n_slices {
                let (z, m, inc) = self.row(i, s);
                let b = coeffs.drift(&theta.mu, z, m);
                let a = coeffs.diffusion(&theta.sigma, z, m);
                let a2 = a * a;
                if !(a2 > 0.0) || !a2.is_finite() {
                    return Err(Error::Model(format!("squared diffusion {a2} at particle {i}, slice {s}")));
                }
                let r = inc - delta * b;
                let q = r * r / (delta * a2);
                v += w * q + a2.ln();
                coeffs.drift_grad(&theta.mu, z, m, &mut gb);
                let cb = -2.0 * w * r / a2;
                for (gk, d) in g[..p1].iter_mut().zip(&gb) {
                    *gk += cb * d;
                }
                coeffs.diffusion_grad(&theta.sigma, z, m, &mut ga);
                let ca = (2.0 - 2.0 * w * q) / a;
                for (gk, d) in g[p1..].iter_mut().zip(&ga) {
                    *gk += ca * d;
                }
            }
            values.push(v);
            grads.push(g);
        }
        let value = pairwise_sum(&values);
        let grad = (0..p1 + p2)
            .map(|k| pairwise_sum(&grads.iter().map(|g| g[k]).collect::<Vec<_>>()))
            .collect();
        Ok(ContrastValue { value, grad, per_term_count: self.len() })
    }

    /// `Σ f(z, π)` over the rows.
    pub fn nu<F>(&self, f: F) -> f64
    where
        F: Fn(Point2, &MeasureSummary) -> f64,
    {
        self.reduce(|z, m, _| f(z, m))
    }

    /// `Σ f(z, π) · (increment − Δ b_{μ0}(z, π))`.
    pub fn i_fun<F>(&self, coeffs: &dyn Coefficients, mu0: &[f64], f: F) -> f64
    where
        F: Fn(Point2, &MeasureSummary) -> f64,
    {
        self.reduce(|z, m, inc| f(z, m) * (inc - self.delta * coeffs.drift(mu0, z, m)))
    }

    /// `Σ f(z, π) · increment²`.
    pub fn q_fun<F>(&self, f: F) -> f64
    where
        F: Fn(Point2, &MeasureSummary) -> f64,
    {
        self.reduce(|z, m, inc| f(z, m) * inc * inc)
    }

    fn reduce<F>(&self, term: F) -> f64
    where
        F: Fn(Point2, &MeasureSummary, f64) -> f64,
    {
        let per_particle: Vec<f64> = (0..self.n_particles)
            .map(|i| (0..self.n_slices).map(|s| {
                let (z, m, inc) = self.row(i, s);
                term(z, m, inc)
            }).sum())
            .collect();
        pairwise_sum(&per_particle)
    }
}

/// Fixed-shape tree reduction, independent of how terms were produced.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n if n <= 8 => v.iter().sum(),
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

fn check_mode(obs: &ObservationSet, mode: ObservationMode) -> Result<()> {
    if obs.mode != mode {
        return Err(Error::Argument(format!(
            "{} contrast given {} observations",
            mode.tag(),
            obs.mode.tag()
        )));
    }
    Ok(())
}

/// Complete-observation contrast at `theta`.
pub fn contrast_complete(model: &ModelSpec, theta: &Params, obs: &ObservationSet) -> Result<ContrastValue> {
    check_mode(obs, ObservationMode::Complete)?;
    model.param_box().check(theta)?;
    IncrementTable::new(model.coefficients(), obs, ObservationMode::Complete)?.evaluate(model.coefficients(), theta)
}

/// Partial-observation contrast at `theta`.
pub fn contrast_partial(model: &ModelSpec, theta: &Params, obs: &ObservationSet) -> Result<ContrastValue> {
    check_mode(obs, ObservationMode::Partial)?;
    model.param_box().check(theta)?;
    IncrementTable::new(model.coefficients(), obs, ObservationMode::Partial)?.evaluate(model.coefficients(), theta)
}

/// Which prefactors were applied to a [`FunctionalReport`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// Raw sums.
    Raw,
    /// `(Δ/N) ν`, `(1/√N) I`, `(1/N) Q`.
    Scaled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FunctionalReport {
    pub nu: f64,
    pub i_fun: f64,
    pub q_fun: f64,
    pub normalization: Normalization,
}

/// ν, I and Q of `f` on `obs` in `mode`, centred at drift `mu0`.
pub fn functionals<F>(
    model: &ModelSpec,
    obs: &ObservationSet,
    mode: ObservationMode,
    mu0: &[f64],
    f: F,
    normalization: Normalization,
) -> Result<FunctionalReport>
where
    F: Fn(Point2, &MeasureSummary) -> f64,
{
    let table = IncrementTable::new(model.coefficients(), obs, mode)?;
    let mut r = FunctionalReport {
        nu: table.nu(&f),
        i_fun: table.i_fun(model.coefficients(), mu0, &f),
        q_fun: table.q_fun(&f),
        normalization,
    };
    if normalization == Normalization::Scaled {
        let n = table.n_particles() as f64;
        r.nu *= table.delta / n;
        r.i_fun /= n.sqrt();
        r.q_fun /= n;
    }
    if !(r.nu.is_finite() && r.i_fun.is_finite() && r.q_fun.is_finite()) {
        return Err(Error::Numeric(format!("non-finite functional {r:?}")));
    }
    Ok(r)
}

/// Raw `ν(f)` in `mode`.
pub fn functional_nu<F>(model: &ModelSpec, obs: &ObservationSet, mode: ObservationMode, f: F) -> Result<f64>
where
    F: Fn(Point2, &MeasureSummary) -> f64,
{
    Ok(IncrementTable::new(model.coefficients(), obs, mode)?.nu(f))
}

/// Raw `I(f)` in `mode`, centred at drift `mu0`.
pub fn functional_i<F>(model: &ModelSpec, obs: &ObservationSet, mode: ObservationMode, mu0: &[f64], f: F) -> Result<f64>
where
    F: Fn(Point2, &MeasureSummary) -> f64,
{
    Ok(IncrementTable::new(model.coefficients(), obs, mode)?.i_fun(model.coefficients(), mu0, f))
}

/// Raw `Q(f)` in `mode`.
pub fn functional_q<F>(model: &ModelSpec, obs: &ObservationSet, mode: ObservationMode, f: F) -> Result<f64>
where
    F: Fn(Point2, &MeasureSummary) -> f64,
{
    Ok(IncrementTable::new(model.coefficients(), obs, mode)?.q_fun(f))
}

/// Settings of the brute-force time-integrated mean-field average.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleConfig {
    pub n_particles: usize,
    pub obs_steps: usize,
    pub fine_factor: usize,
    pub seeds: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_particles: 5000,
            obs_steps: 50,
            fine_factor: 40,
            seeds: 5,
            seed: 0x0a11_ce,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleEstimate {
    /// Mean over seeds, per component.
    pub mean: Vec<f64>,
    /// Standard error of the mean over seeds, per component.
    pub std_err: Vec<f64>,
}

/// `∫₀ᵀ ∫ f(z, Π̄_t) Π̄_t(dz) dt` for a `dim`-valued `f`, estimated from one
/// large particle system per seed with the trapezoid rule on the fine grid.
pub fn pi_bar_oracle_vec<F>(
    model: &ModelSpec,
    theta0: &Params,
    horizon: f64,
    init: InitLaw,
    cfg: &OracleConfig,
    dim: usize,
    f: F,
) -> Result<OracleEstimate>
where
    F: Fn(Point2, &MeasureSummary, &mut [f64]),
{
    if cfg.seeds == 0 {
        return Err(Error::Config("oracle needs at least one seed".into()));
    }
    let mut per_seed: Vec<Vec<f64>> = Vec::with_capacity(cfg.seeds);
    for s in 0..cfg.seeds {
        let sim = SimConfig {
            n_particles: cfg.n_particles,
            horizon,
            obs_steps: cfg.obs_steps,
            fine_factor: cfg.fine_factor,
            seed: crate::rng::derive_seed(cfg.seed, &[s as u64]),
            init,
        };
        let steps = sim.total_steps();
        let dt = sim.fine_step();
        let mut acc = vec![0.0; dim];
        let mut buf = vec![0.0; dim];
        let mut slice = vec![0.0; dim];
        simulate_streaming(model, theta0, &sim, |k, cloud, m| {
            slice.iter_mut().for_each(|v| *v = 0.0);
            for z in cloud {
                f(*z, m, &mut buf);
                for (a, b) in slice.iter_mut().zip(&buf) {
                    *a += b;
                }
            }
            let wk = if k == 0 || k == steps { 0.5 * dt } else { dt };
            let n = cloud.len() as f64;
            for (a, b) in acc.iter_mut().zip(&slice) {
                *a += wk * b / n;
            }
        })?;
        per_seed.push(acc);
    }
    let r = per_seed.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|k| per_seed.iter().map(|v| v[k]).sum::<f64>() / r).collect();
    let std_err = (0..dim)
        .map(|k| {
            if per_seed.len() < 2 {
                return f64::NAN;
            }
            let var = per_seed.iter().map(|v| (v[k] - mean[k]).powi(2)).sum::<f64>() / (r - 1.0);
            (var / r).sqrt()
        })
        .collect();
    Ok(OracleEstimate { mean, std_err })
}

/// Scalar version of [`pi_bar_oracle_vec`], returning `(mean, std_err)`.
pub fn pi_bar_oracle<F>(model: &ModelSpec, theta0: &Params, horizon: f64, init: InitLaw, cfg: &OracleConfig, f: F) -> Result<(f64, f64)>
where
    F: Fn(Point2, &MeasureSummary) -> f64,
{
    let est = pi_bar_oracle_vec(model, theta0, horizon, init, cfg, 1, |z, m, out| out[0] = f(z, m))?;
    Ok((est.mean[0], est.std_err[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BuiltinModel;
    use ndarray::Array2;

    #[test]
    fn pairwise_sum_matches_plain_sum_on_integers() {
        let v: Vec<f64> = (0..1000).map(|k| k as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn perfect_single_step_fit() {
        let model = BuiltinModel::MeanFieldLangevin.spec(&Params::new(vec![1.0, 0.0], vec![1.0])).unwrap();
        let delta = 0.5;
        let (y0, x0) = (0.0, 2.0);
        let x1 = x0 + delta * (-1.0 * x0);
        let y = Array2::from_shape_vec((1, 2), vec![y0, y0 + delta * x0]).unwrap();
        let x = Array2::from_shape_vec((1, 2), vec![x0, x1]).unwrap();
        let obs = ObservationSet::new(delta, vec![0.0, delta], y, Some(x)).unwrap();
        let c = contrast_complete(&model, &Params::new(vec![1.0, 0.0], vec![1.0]), &obs).unwrap();
        assert_eq!(c.value, 0.0);
        assert_eq!(c.per_term_count, 1);
        assert_eq!(c.grad.len(), 3);
    }

    #[test]
    fn partial_index_audit() {
        // n = 4: rows j ∈ {1, 2} at surrogate states j − 1 ∈ {0, 1}
        let delta = 0.1;
        let ys = [0.0, 1.0, 3.0, 6.0, 10.0];
        let y = Array2::from_shape_vec((1, 5), ys.to_vec()).unwrap();
        let obs = ObservationSet::new(delta, (0..5).map(|j| j as f64 * delta).collect(), y, None).unwrap();
        let c = BuiltinModel::MeanFieldLangevin.coefficients();
        let t = IncrementTable::new(c.as_ref(), &obs, ObservationMode::Partial).unwrap();
        assert_eq!(t.len(), 2);
        let xt: Vec<f64> = (0..4).map(|j| (ys[j + 1] - ys[j]) / delta).collect();
        for (s, j) in [1usize, 2].iter().enumerate() {
            let (z, _, inc) = t.row(0, s);
            assert_eq!(z, Point2::new(ys[j - 1], xt[j - 1]));
            assert_eq!(inc, xt[j + 1] - xt[*j]);
        }
        assert_eq!(t.weight, 1.5);
    }

    #[test]
    fn partial_needs_four_intervals() {
        let obs = ObservationSet::new(0.1, vec![0.0, 0.1, 0.2, 0.3], Array2::zeros((2, 4)), None).unwrap();
        let c = BuiltinModel::MeanFieldLangevin.coefficients();
        assert!(IncrementTable::new(c.as_ref(), &obs, ObservationMode::Partial).is_err());
    }

    #[test]
    fn floor_breach_is_model_error() {
        let model = BuiltinModel::KramersKernel.spec(&BuiltinModel::KramersKernel.default_theta0()).unwrap();
        let obs = ObservationSet::new(0.1, (0..6).map(|j| j as f64 * 0.1).collect(), Array2::zeros((2, 6)), Some(Array2::zeros((2, 6)))).unwrap();
        let t = IncrementTable::new(model.coefficients(), &obs, ObservationMode::Complete).unwrap();
        let bad = Params::new(vec![0.0; 4], vec![0.0, 0.0]);
        assert!(matches!(t.evaluate(model.coefficients(), &bad), Err(Error::Model(_))));
    }
}
