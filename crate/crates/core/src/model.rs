//! Parameterized coefficient families and their evaluation on states and
//! empirical measures.
//!
//! Coefficients see the empirical measure only through a [`MeasureSummary`]:
//! a handful of θ-independent integrals of the cloud. Summaries are computed
//! once per time slice and shared by every particle and every candidate θ.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measure::{self, EmpiricalMeasure, Point2};
use crate::rng::{NoiseStream, StreamTag};

/// Drift parameters `mu` and diffusion parameters `sigma`.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Params {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Self {
        Self { mu, sigma }
    }

    pub fn dim(&self) -> usize {
        self.mu.len() + self.sigma.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.mu.iter().chain(&self.sigma).copied().collect()
    }

    pub fn from_flat(flat: &[f64], drift_dim: usize) -> Self {
        Self {
            mu: flat[..drift_dim].to_vec(),
            sigma: flat[drift_dim..].to_vec(),
        }
    }
}

/// Compact convex parameter set `Θ = Θ₁ × Θ₂`, a product of intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBox {
    pub mu_lo: Vec<f64>,
    pub mu_hi: Vec<f64>,
    pub sigma_lo: Vec<f64>,
    pub sigma_hi: Vec<f64>,
}

impl ParamBox {
    pub fn new(mu_lo: Vec<f64>, mu_hi: Vec<f64>, sigma_lo: Vec<f64>, sigma_hi: Vec<f64>) -> Result<Self> {
        if mu_lo.len() != mu_hi.len() || sigma_lo.len() != sigma_hi.len() {
            return Err(Error::Config("parameter box bounds have mismatched lengths".into()));
        }
        for (lo, hi) in mu_lo.iter().zip(&mu_hi).chain(sigma_lo.iter().zip(&sigma_hi)) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("empty or unbounded interval [{lo}, {hi}]")));
            }
        }
        Ok(Self { mu_lo, mu_hi, sigma_lo, sigma_hi })
    }

    /// `θ₀ ± half_width` componentwise, with diffusion lower bounds raised
    /// to `sigma_floor[k]`.
    pub fn around(theta0: &Params, half_width: f64, sigma_floor: &[f64]) -> Result<Self> {
        let sigma_lo = theta0
            .sigma
            .iter()
            .zip(sigma_floor)
            .map(|(s, f)| (s - half_width).max(*f))
            .collect();
        Self::new(
            theta0.mu.iter().map(|m| m - half_width).collect(),
            theta0.mu.iter().map(|m| m + half_width).collect(),
            sigma_lo,
            theta0.sigma.iter().map(|s| s + half_width).collect(),
        )
    }

    pub fn drift_dim(&self) -> usize {
        self.mu_lo.len()
    }

    pub fn diffusion_dim(&self) -> usize {
        self.sigma_lo.len()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.mu_lo.iter().chain(&self.sigma_lo).copied().collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.mu_hi.iter().chain(&self.sigma_hi).copied().collect()
    }

    pub fn center(&self) -> Params {
        let mid = |lo: &[f64], hi: &[f64]| lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
        Params::new(mid(&self.mu_lo, &self.mu_hi), mid(&self.sigma_lo, &self.sigma_hi))
    }

    fn inside(v: &[f64], lo: &[f64], hi: &[f64]) -> bool {
        v.len() == lo.len() && v.iter().zip(lo.iter().zip(hi)).all(|(x, (l, h))| *l <= *x && *x <= *h)
    }

    pub fn contains_mu(&self, mu: &[f64]) -> bool {
        Self::inside(mu, &self.mu_lo, &self.mu_hi)
    }

    pub fn contains_sigma(&self, sigma: &[f64]) -> bool {
        Self::inside(sigma, &self.sigma_lo, &self.sigma_hi)
    }

    pub fn contains(&self, theta: &Params) -> bool {
        self.contains_mu(&theta.mu) && self.contains_sigma(&theta.sigma)
    }

    pub fn check(&self, theta: &Params) -> Result<()> {
        if self.contains(theta) {
            Ok(())
        } else {
            Err(Error::Domain(format!("{theta:?} not in {self:?}")))
        }
    }

    /// True when some coordinate sits within `rel_tol · width` of a face.
    pub fn on_boundary(&self, theta: &Params, rel_tol: f64) -> bool {
        let lo = self.lower();
        let hi = self.upper();
        theta.flat().iter().zip(lo.iter().zip(&hi)).any(|(x, (l, h))| {
            let w = rel_tol * (h - l);
            *x - *l <= w || *h - *x <= w
        })
    }
}

/// θ-independent integrals of an empirical measure used by a coefficient
/// family. The meaning of each feature is private to the family.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeasureSummary {
    pub size: usize,
    pub features: [f64; 4],
}

/// A parameterized drift `b_μ(z, π)` and diffusion `a_σ(z, π)` with analytic
/// parameter gradients.
pub trait Coefficients: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn drift_dim(&self) -> usize;
    fn diffusion_dim(&self) -> usize;
    fn summarize(&self, points: &[Point2]) -> MeasureSummary;
    fn drift(&self, mu: &[f64], z: Point2, m: &MeasureSummary) -> f64;
    fn drift_grad(&self, mu: &[f64], z: Point2, m: &MeasureSummary, out: &mut [f64]);
    fn diffusion(&self, sigma: &[f64], z: Point2, m: &MeasureSummary) -> f64;
    fn diffusion_grad(&self, sigma: &[f64], z: Point2, m: &MeasureSummary, out: &mut [f64]);

    /// `∂/∂x_k a_σ(z_k, Π(z_1..z_N))`: sensitivity of particle `k`'s diffusion
    /// to its own velocity, through both the state and the empirical measure.
    fn diffusion_velocity_sensitivity(&self, sigma: &[f64], points: &[Point2], k: usize) -> f64 {
        let h = 1e-6 * (1.0 + points[k].x.abs());
        let mut cloud = points.to_vec();
        let mut at = |x: f64| {
            cloud[k].x = x;
            let m = self.summarize(&cloud);
            self.diffusion(sigma, cloud[k], &m)
        };
        let x0 = points[k].x;
        (at(x0 + h) - at(x0 - h)) / (2.0 * h)
    }

    /// Drift is `Σ μ_k φ_k(z, π)`; `drift_grad` then returns the features φ.
    fn linear_drift(&self) -> bool {
        false
    }

    /// Diffusion is `a = σ₁`, independent of state and measure.
    fn constant_diffusion(&self) -> bool {
        false
    }
}

/// `b_μ(z,π) = −μ₁x − μ₂(y − m_Y(π))`, `a_σ = σ₁`.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanFieldLangevin;

impl Coefficients for MeanFieldLangevin {
    fn name(&self) -> &str {
        "MeanFieldLangevin"
    }
    fn drift_dim(&self) -> usize {
        2
    }
    fn diffusion_dim(&self) -> usize {
        1
    }
    fn summarize(&self, points: &[Point2]) -> MeasureSummary {
        MeasureSummary {
            size: points.len(),
            features: [measure::mean_position(points), 0.0, 0.0, 0.0],
        }
    }
    #[inline]
    fn drift(&self, mu: &[f64], z: Point2, m: &MeasureSummary) -> f64 {
        -mu[0] * z.x - mu[1] * (z.y - m.features[0])
    }
    #[inline]
    fn drift_grad(&self, _mu: &[f64], z: Point2, m: &MeasureSummary, out: &mut [f64]) {
        out[0] = -z.x;
        out[1] = -(z.y - m.features[0]);
    }
    #[inline]
    fn diffusion(&self, sigma: &[f64], _z: Point2, _m: &MeasureSummary) -> f64 {
        sigma[0]
    }
    #[inline]
    fn diffusion_grad(&self, _sigma: &[f64], _z: Point2, _m: &MeasureSummary, out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn diffusion_velocity_sensitivity(&self, _sigma: &[f64], _points: &[Point2], _k: usize) -> f64 {
        0.0
    }
    fn linear_drift(&self) -> bool {
        true
    }
    fn constant_diffusion(&self) -> bool {
        true
    }
}

/// Scalar feature `ψ` entering the product kernel `K(z, z̄) = ψ(u)ψ(ū)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelFeature {
    /// `ψ(u) = u / (1 + u²)`, bounded with bounded derivative.
    Saturating,
    /// `ψ(u) = u`.
    Linear,
}

impl KernelFeature {
    #[inline]
    fn value(self, u: f64) -> f64 {
        match self {
            KernelFeature::Saturating => u / (1.0 + u * u),
            KernelFeature::Linear => u,
        }
    }

    #[inline]
    fn derivative(self, u: f64) -> f64 {
        match self {
            KernelFeature::Saturating => {
                let d = 1.0 + u * u;
                (1.0 - u * u) / (d * d)
            }
            KernelFeature::Linear => 1.0,
        }
    }
}

/// Which coordinate the kernel reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelArgument {
    Position,
    Velocity,
}

/// Kramers oscillator with cubic confinement, mean attraction and a
/// measure-dependent diffusion in kernel form:
///
/// `b_μ(z,π) = −μ₁x − μ₂y − μ₃c(y) + μ₄(m_Y(π) − y)`
/// `a_σ(z,π) = σ₁ + σ₂ tanh²(∫K(z,z̄)π(dz̄))`, `K(z,z̄) = ψ(u)ψ(ū)`.
///
/// `c(y) = y³` on `|y| ≤ 10`, continued by its tangent line beyond, so the
/// drift stays globally Lipschitz.
#[derive(Clone, Copy, Debug)]
pub struct KramersKernel {
    pub feature: KernelFeature,
    pub argument: KernelArgument,
}

impl Default for KramersKernel {
    fn default() -> Self {
        Self {
            feature: KernelFeature::Saturating,
            argument: KernelArgument::Position,
        }
    }
}

const CUBIC_KNEE: f64 = 10.0;

#[inline]
pub(crate) fn saturated_cubic(y: f64) -> f64 {
    if y.abs() <= CUBIC_KNEE {
        y * y * y
    } else {
        let k3 = CUBIC_KNEE * CUBIC_KNEE * CUBIC_KNEE;
        let slope = 3.0 * CUBIC_KNEE * CUBIC_KNEE;
        y.signum() * (k3 + slope * (y.abs() - CUBIC_KNEE))
    }
}

impl KramersKernel {
    #[inline]
    fn arg(&self, z: Point2) -> f64 {
        match self.argument {
            KernelArgument::Position => z.y,
            KernelArgument::Velocity => z.x,
        }
    }

    #[inline]
    fn kernel_integral(&self, z: Point2, m: &MeasureSummary) -> f64 {
        self.feature.value(self.arg(z)) * m.features[1]
    }
}

impl Coefficients for KramersKernel {
    fn name(&self) -> &str {
        "KramersKernel"
    }
    fn drift_dim(&self) -> usize {
        4
    }
    fn diffusion_dim(&self) -> usize {
        2
    }
    fn summarize(&self, points: &[Point2]) -> MeasureSummary {
        let n = points.len() as f64;
        let mean_psi = points.iter().map(|p| self.feature.value(self.arg(*p))).sum::<f64>() / n;
        MeasureSummary {
            size: points.len(),
            features: [measure::mean_position(points), mean_psi, 0.0, 0.0],
        }
    }
    #[inline]
    fn drift(&self, mu: &[f64], z: Point2, m: &MeasureSummary) -> f64 {
        -mu[0] * z.x - mu[1] * z.y - mu[2] * saturated_cubic(z.y) + mu[3] * (m.features[0] - z.y)
    }
    #[inline]
    fn drift_grad(&self, _mu: &[f64], z: Point2, m: &MeasureSummary, out: &mut [f64]) {
        out[0] = -z.x;
        out[1] = -z.y;
        out[2] = -saturated_cubic(z.y);
        out[3] = m.features[0] - z.y;
    }
    #[inline]
    fn diffusion(&self, sigma: &[f64], z: Point2, m: &MeasureSummary) -> f64 {
        let t = self.kernel_integral(z, m).tanh();
        sigma[0] + sigma[1] * t * t
    }
    #[inline]
    fn diffusion_grad(&self, _sigma: &[f64], z: Point2, m: &MeasureSummary, out: &mut [f64]) {
        let t = self.kernel_integral(z, m).tanh();
        out[0] = 1.0;
        out[1] = t * t;
    }
    fn diffusion_velocity_sensitivity(&self, sigma: &[f64], points: &[Point2], k: usize) -> f64 {
        if self.argument == KernelArgument::Position {
            return 0.0;
        }
        let m = self.summarize(points);
        let u = points[k].x;
        let psi = self.feature.value(u);
        let dpsi = self.feature.derivative(u);
        let n = points.len() as f64;
        // d/dx_k [ψ(x_k) · (1/N) Σ_j ψ(x_j)]
        let dk = dpsi * m.features[1] + psi * dpsi / n;
        let t = (psi * m.features[1]).tanh();
        sigma[1] * 2.0 * t * (1.0 - t * t) * dk
    }
}

/// Built-in coefficient families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BuiltinModel {
    MeanFieldLangevin,
    KramersKernel,
}

/// Lower bounds on diffusion parameters that keep the diffusion floor.
const MFL_SIGMA_FLOOR: [f64; 1] = [0.05];
const KRAMERS_SIGMA_FLOOR: [f64; 2] = [0.05, 0.0];

impl BuiltinModel {
    pub fn tag(self) -> &'static str {
        match self {
            BuiltinModel::MeanFieldLangevin => "MeanFieldLangevin",
            BuiltinModel::KramersKernel => "KramersKernel",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "MeanFieldLangevin" | "mfl" => Ok(BuiltinModel::MeanFieldLangevin),
            "KramersKernel" | "kramers" => Ok(BuiltinModel::KramersKernel),
            other => Err(Error::Config(format!("unknown model tag {other:?}"))),
        }
    }

    pub fn default_theta0(self) -> Params {
        match self {
            BuiltinModel::MeanFieldLangevin => Params::new(vec![0.5, 1.0], vec![1.0]),
            BuiltinModel::KramersKernel => Params::new(vec![1.0, 1.0, 0.2, 0.5], vec![0.5, 1.0]),
        }
    }

    pub fn coefficients(self) -> Arc<dyn Coefficients> {
        match self {
            BuiltinModel::MeanFieldLangevin => Arc::new(MeanFieldLangevin),
            BuiltinModel::KramersKernel => Arc::new(KramersKernel::default()),
        }
    }

    /// Model with the default box `θ₀ ± 5`, clipped to keep the diffusion floor.
    pub fn spec(self, theta0: &Params) -> Result<ModelSpec> {
        self.spec_with_half_width(theta0, 5.0)
    }

    /// Model with the box `θ₀ ± half_width`, clipped to keep the diffusion floor.
    pub fn spec_with_half_width(self, theta0: &Params, half_width: f64) -> Result<ModelSpec> {
        let floor: &[f64] = match self {
            BuiltinModel::MeanFieldLangevin => &MFL_SIGMA_FLOOR,
            BuiltinModel::KramersKernel => &KRAMERS_SIGMA_FLOOR,
        };
        let coeffs = self.coefficients();
        if theta0.mu.len() != coeffs.drift_dim() || theta0.sigma.len() != coeffs.diffusion_dim() {
            return Err(Error::Config(format!(
                "{} expects {} drift and {} diffusion parameters",
                self.tag(),
                coeffs.drift_dim(),
                coeffs.diffusion_dim()
            )));
        }
        let param_box = ParamBox::around(theta0, half_width, floor)?;
        ModelSpec::new(coeffs, param_box)
    }
}

/// A coefficient family together with its parameter box and the
/// thresholds used by [`ModelSpec::check_assumptions`].
#[derive(Clone, Debug)]
pub struct ModelSpec {
    coeffs: Arc<dyn Coefficients>,
    param_box: ParamBox,
    pub a_min: f64,
    pub lipschitz_probe_budget: usize,
    pub lipschitz_cap: f64,
}

impl ModelSpec {
    pub fn new(coeffs: Arc<dyn Coefficients>, param_box: ParamBox) -> Result<Self> {
        if param_box.drift_dim() != coeffs.drift_dim() || param_box.diffusion_dim() != coeffs.diffusion_dim() {
            return Err(Error::Config(format!(
                "box dimensions ({}, {}) do not match {}",
                param_box.drift_dim(),
                param_box.diffusion_dim(),
                coeffs.name()
            )));
        }
        Ok(Self {
            coeffs,
            param_box,
            a_min: 1e-3,
            lipschitz_probe_budget: 200,
            lipschitz_cap: 1e3,
        })
    }

    pub fn coefficients(&self) -> &dyn Coefficients {
        self.coeffs.as_ref()
    }

    pub fn param_box(&self) -> &ParamBox {
        &self.param_box
    }

    pub fn with_box(mut self, param_box: ParamBox) -> Result<Self> {
        if param_box.drift_dim() != self.coeffs.drift_dim() || param_box.diffusion_dim() != self.coeffs.diffusion_dim() {
            return Err(Error::Config("box dimensions do not match the model".into()));
        }
        self.param_box = param_box;
        Ok(self)
    }

    pub fn drift_dim(&self) -> usize {
        self.coeffs.drift_dim()
    }

    pub fn diffusion_dim(&self) -> usize {
        self.coeffs.diffusion_dim()
    }

    pub fn eval_drift(&self, mu: &[f64], z: Point2, pi: &EmpiricalMeasure) -> Result<f64> {
        if !self.param_box.contains_mu(mu) {
            return Err(Error::Domain(format!("drift parameter {mu:?} outside box")));
        }
        let m = self.coeffs.summarize(pi.points());
        Ok(self.coeffs.drift(mu, z, &m))
    }

    pub fn eval_diffusion(&self, sigma: &[f64], z: Point2, pi: &EmpiricalMeasure) -> Result<f64> {
        if !self.param_box.contains_sigma(sigma) {
            return Err(Error::Domain(format!("diffusion parameter {sigma:?} outside box")));
        }
        let m = self.coeffs.summarize(pi.points());
        let a = self.coeffs.diffusion(sigma, z, &m);
        if a.is_nan() || a < self.a_min {
            return Err(Error::Model(format!("diffusion {a} below floor {}", self.a_min)));
        }
        Ok(a)
    }

    /// Probes the Lipschitz condition on random pairs `(z,π)`, `(z̄,π̄)` and
    /// the diffusion floor. Report-only.
    pub fn check_assumptions(&self, theta: &Params, seed: u64, n_probes: usize) -> AssumptionReport {
        const CLOUD: usize = 3;
        let n_probes = n_probes.max(2);
        let mut rng = NoiseStream::new(seed, 0, StreamTag::Probe);
        let mut draw = |scale: f64| Point2::new(scale * rng.normal(), scale * rng.normal());
        let c = self.coefficients();
        let mut drift_ratio: f64 = 0.0;
        let mut diffusion_ratio: f64 = 0.0;
        let mut min_diffusion = f64::INFINITY;
        for probe in 0..n_probes {
            let z = draw(2.0);
            let cloud: Vec<Point2> = (0..CLOUD).map(|_| draw(2.0)).collect();
            // alternate far pairs with local perturbations
            let (z2, cloud2) = if probe % 2 == 0 {
                (draw(2.0), (0..CLOUD).map(|_| draw(2.0)).collect::<Vec<_>>())
            } else {
                let dz = draw(0.05);
                let shifted: Vec<Point2> = cloud
                    .iter()
                    .map(|p| {
                        let d = draw(0.05);
                        Point2::new(p.y + d.y, p.x + d.x)
                    })
                    .collect();
                (Point2::new(z.y + dz.y, z.x + dz.x), shifted)
            };
            let m1 = c.summarize(&cloud);
            let m2 = c.summarize(&cloud2);
            let dist = z.dist_sq(z2).sqrt() + measure::w2(&cloud, &cloud2).unwrap_or(f64::INFINITY);
            if dist <= 0.0 {
                continue;
            }
            let b1 = c.drift(&theta.mu, z, &m1);
            let b2 = c.drift(&theta.mu, z2, &m2);
            let a1 = c.diffusion(&theta.sigma, z, &m1);
            let a2 = c.diffusion(&theta.sigma, z2, &m2);
            drift_ratio = drift_ratio.max((b1 - b2).abs() / dist);
            diffusion_ratio = diffusion_ratio.max((a1 - a2).abs() / dist);
            min_diffusion = min_diffusion.min(a1).min(a2);
        }
        let mut failures = Vec::new();
        if !(drift_ratio <= self.lipschitz_cap) {
            failures.push(format!("drift Lipschitz ratio {drift_ratio} exceeds {}", self.lipschitz_cap));
        }
        if !(diffusion_ratio <= self.lipschitz_cap) {
            failures.push(format!("diffusion Lipschitz ratio {diffusion_ratio} exceeds {}", self.lipschitz_cap));
        }
        if !(min_diffusion >= self.a_min) {
            failures.push(format!("diffusion minimum {min_diffusion} below floor {}", self.a_min));
        }
        AssumptionReport {
            probes: n_probes,
            drift_ratio,
            diffusion_ratio,
            min_diffusion,
            passed: failures.is_empty(),
            failures,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    pub probes: usize,
    pub drift_ratio: f64,
    pub diffusion_ratio: f64,
    pub min_diffusion: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(v: &[(f64, f64)]) -> EmpiricalMeasure {
        EmpiricalMeasure::new(v.iter().map(|&(y, x)| Point2::new(y, x)).collect()).unwrap()
    }

    fn mfl() -> ModelSpec {
        BuiltinModel::MeanFieldLangevin
            .spec(&Params::new(vec![1.0, 2.0], vec![0.7]))
            .unwrap()
    }

    #[test]
    fn mfl_drift_examples() {
        let m = mfl().with_box(ParamBox::new(vec![-5.0; 2], vec![5.0; 2], vec![0.05], vec![6.0]).unwrap()).unwrap();
        let pi = cloud(&[(0.0, 0.0), (2.0, 0.0)]);
        assert_eq!(m.eval_drift(&[0.0, 0.0], Point2::new(3.0, -1.0), &pi).unwrap(), 0.0);
        assert_eq!(m.eval_drift(&[1.0, 2.0], Point2::new(1.0, 0.5), &pi).unwrap(), -0.5);
        assert!(matches!(
            m.eval_drift(&[9.0, 0.0], Point2::ORIGIN, &pi),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn kramers_without_interaction_is_plain_kramers() {
        let k = KramersKernel::default();
        let pts = [Point2::new(0.3, 0.1), Point2::new(-2.0, 1.0)];
        let m = k.summarize(&pts);
        for z in [Point2::new(0.5, -0.2), Point2::new(3.0, 1.0)] {
            let plain = -1.0 * z.x - 1.0 * z.y - 0.1 * z.y.powi(3);
            assert_eq!(k.drift(&[1.0, 1.0, 0.1, 0.0], z, &m), plain);
        }
    }

    #[test]
    fn kernel_diffusion_examples() {
        let k = KramersKernel { feature: KernelFeature::Linear, argument: KernelArgument::Position };
        let pts = [Point2::new(1.0, 0.0)];
        let m = k.summarize(&pts);
        let a = k.diffusion(&[1.0, 0.5], Point2::new(2.0, 0.3), &m);
        assert_eq!(a, 1.0 + 0.5 * 2.0f64.tanh().powi(2));
        let a0 = k.diffusion(&[1.3, 0.0], Point2::new(2.0, 0.3), &m);
        assert_eq!(a0, 1.3);
        let spec = BuiltinModel::MeanFieldLangevin.spec(&Params::new(vec![0.0, 0.0], vec![0.7])).unwrap();
        for z in [Point2::ORIGIN, Point2::new(4.0, -3.0)] {
            assert_eq!(spec.eval_diffusion(&[0.7], z, &cloud(&[(1.0, 2.0)])).unwrap(), 0.7);
        }
    }

    #[test]
    fn diffusion_floor_breach_is_model_error() {
        #[derive(Debug)]
        struct Shifted;
        impl Coefficients for Shifted {
            fn name(&self) -> &str { "shifted" }
            fn drift_dim(&self) -> usize { 1 }
            fn diffusion_dim(&self) -> usize { 1 }
            fn summarize(&self, p: &[Point2]) -> MeasureSummary { MeasureSummary { size: p.len(), ..Default::default() } }
            fn drift(&self, _: &[f64], _: Point2, _: &MeasureSummary) -> f64 { 0.0 }
            fn drift_grad(&self, _: &[f64], _: Point2, _: &MeasureSummary, o: &mut [f64]) { o[0] = 0.0 }
            fn diffusion(&self, s: &[f64], _: Point2, _: &MeasureSummary) -> f64 { s[0] - 1.0 }
            fn diffusion_grad(&self, _: &[f64], _: Point2, _: &MeasureSummary, o: &mut [f64]) { o[0] = 1.0 }
        }
        let spec = ModelSpec::new(
            Arc::new(Shifted),
            ParamBox::new(vec![-1.0], vec![1.0], vec![0.1], vec![2.0]).unwrap(),
        )
        .unwrap();
        let pi = cloud(&[(0.0, 0.0)]);
        assert!(matches!(spec.eval_diffusion(&[0.5], Point2::ORIGIN, &pi), Err(Error::Model(_))));
        let report = spec.check_assumptions(&Params::new(vec![0.0], vec![0.5]), 3, 10);
        assert!(!report.passed);
        assert_eq!(report.min_diffusion, -0.5);
        assert_eq!(report.diffusion_ratio, 0.0);
    }

    #[test]
    fn assumption_probe_on_builtins() {
        let spec = mfl();
        let report = spec.check_assumptions(&Params::new(vec![1.0, 2.0], vec![0.7]), 11, 400);
        assert!(report.passed, "{report:?}");
        assert!(report.drift_ratio <= 5.0 + 1e-9);
        assert_eq!(report.diffusion_ratio, 0.0);
        assert_eq!(report.min_diffusion, 0.7);

        let theta = BuiltinModel::KramersKernel.default_theta0();
        let spec = BuiltinModel::KramersKernel.spec(&theta).unwrap();
        let report = spec.check_assumptions(&theta, 5, 400);
        assert!(report.passed, "{report:?}");
        assert!(report.min_diffusion >= theta.sigma[0]);
    }

    #[test]
    fn mfl_drift_is_linear_in_mu() {
        let c = MeanFieldLangevin;
        let pts = [Point2::new(0.4, 1.0), Point2::new(-1.5, 0.2)];
        let m = c.summarize(&pts);
        let z = Point2::new(0.7, -0.9);
        let (mu, nu) = ([0.3, -1.2], [2.0, 0.5]);
        let (alpha, beta) = (1.5, -0.25);
        let combo = [alpha * mu[0] + beta * nu[0], alpha * mu[1] + beta * nu[1]];
        let lhs = c.drift(&combo, z, &m);
        let rhs = alpha * c.drift(&mu, z, &m) + beta * c.drift(&nu, z, &m);
        assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * (1.0 + lhs.abs()));
    }

    fn fd_check(c: &dyn Coefficients, theta: &Params, seed: u64) {
        let mut rng = NoiseStream::new(seed, 0, StreamTag::Probe);
        for _ in 0..20 {
            let pts: Vec<Point2> = (0..4).map(|_| Point2::new(2.0 * rng.normal(), 2.0 * rng.normal())).collect();
            let z = Point2::new(2.0 * rng.normal(), 2.0 * rng.normal());
            let m = c.summarize(&pts);
            let mut g = vec![0.0; c.drift_dim()];
            c.drift_grad(&theta.mu, z, &m, &mut g);
            for k in 0..g.len() {
                let h = 1e-5 * (1.0 + theta.mu[k].abs());
                let mut p = theta.mu.clone();
                p[k] += h;
                let fp = c.drift(&p, z, &m);
                p[k] -= 2.0 * h;
                let fm = c.drift(&p, z, &m);
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()), "drift grad {k}: {fd} vs {}", g[k]);
            }
            let mut g = vec![0.0; c.diffusion_dim()];
            c.diffusion_grad(&theta.sigma, z, &m, &mut g);
            for k in 0..g.len() {
                let h = 1e-5 * (1.0 + theta.sigma[k].abs());
                let mut p = theta.sigma.clone();
                p[k] += h;
                let fp = c.diffusion(&p, z, &m);
                p[k] -= 2.0 * h;
                let fm = c.diffusion(&p, z, &m);
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()), "diffusion grad {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        for model in [BuiltinModel::MeanFieldLangevin, BuiltinModel::KramersKernel] {
            fd_check(model.coefficients().as_ref(), &model.default_theta0(), 17);
        }
    }

    #[test]
    fn velocity_kernel_sensitivity_matches_generic_difference() {
        let k = KramersKernel { feature: KernelFeature::Saturating, argument: KernelArgument::Velocity };
        let pts = [Point2::new(0.1, 0.8), Point2::new(-1.0, -0.3), Point2::new(0.5, 1.7)];
        let sigma = [0.5, 1.2];
        for idx in 0..pts.len() {
            let analytic = k.diffusion_velocity_sensitivity(&sigma, &pts, idx);
            let h = 1e-6;
            let mut cloud = pts.to_vec();
            cloud[idx].x += h;
            let up = k.diffusion(&sigma, cloud[idx], &k.summarize(&cloud));
            cloud[idx].x -= 2.0 * h;
            let dn = k.diffusion(&sigma, cloud[idx], &k.summarize(&cloud));
            let fd = (up - dn) / (2.0 * h);
            assert!((analytic - fd).abs() < 1e-8, "{analytic} vs {fd}");
        }
    }

    #[test]
    fn cubic_saturation_is_continuous_and_lipschitz() {
        let knee = 10.0;
        for s in [-1.0, 1.0] {
            let inside = saturated_cubic(s * knee);
            let outside = saturated_cubic(s * (knee + 1e-9));
            assert!((inside - outside).abs() < 1e-5);
        }
        assert_eq!(saturated_cubic(12.0) - saturated_cubic(11.0), 300.0);
    }

    #[test]
    fn boxes() {
        let theta = Params::new(vec![1.0], vec![0.5]);
        let b = ParamBox::around(&theta, 5.0, &[0.05]).unwrap();
        assert_eq!(b.sigma_lo, vec![0.05]);
        assert!(b.contains(&theta));
        assert!(!b.on_boundary(&theta, 1e-6));
        assert!(b.on_boundary(&Params::new(vec![6.0], vec![0.5]), 1e-6));
        assert!(ParamBox::new(vec![1.0], vec![1.0], vec![], vec![]).is_err());
    }
}
