//! Numerical Hörmander rank check for the 2N-dimensional particle system.
//!
//! State vectors are ordered `(y_1, x_1, y_2, x_2, …)`: particle `k`
//! (0-based) has position at index `2k` and velocity at `2k + 1`.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::harness::io::fmt_f64;
use crate::measure::Point2;
use crate::model::{ModelSpec, Params};
use crate::rng::{NoiseStream, StreamTag};

type Field = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type Scalar = dyn Fn(&[f64], usize) -> f64 + Send + Sync;

/// Drift `B`, noise columns `A_k` and the Stratonovich drift `A₀`.
#[derive(Clone)]
pub struct VectorFieldSystem {
    n_particles: usize,
    drift: Arc<Field>,
    diffusion: Arc<Scalar>,
    sensitivity: Arc<Scalar>,
}

impl std::fmt::Debug for VectorFieldSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorFieldSystem").field("dim", &self.dim()).finish()
    }
}

fn cloud(z: &[f64]) -> Vec<Point2> {
    z.chunks_exact(2).map(|c| Point2::new(c[0], c[1])).collect()
}

impl VectorFieldSystem {
    /// System with full drift `B`, per-particle diffusion `a^{(k)}(z)`, and
    /// `∂_{x_k} a^{(k)}` taken by central differences of step `1e-6`.
    pub fn custom<B, A>(n_particles: usize, drift: B, diffusion: A) -> Self
    where
        B: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        A: Fn(&[f64], usize) -> f64 + Send + Sync + 'static,
    {
        let diffusion: Arc<Scalar> = Arc::new(diffusion);
        let a = diffusion.clone();
        let sensitivity = move |z: &[f64], k: usize| {
            let h = 1e-6 * (1.0 + z[2 * k + 1].abs());
            let mut w = z.to_vec();
            w[2 * k + 1] = z[2 * k + 1] + h;
            let up = a(&w, k);
            w[2 * k + 1] = z[2 * k + 1] - h;
            let dn = a(&w, k);
            (up - dn) / (2.0 * h)
        };
        Self { n_particles, drift: Arc::new(drift), diffusion, sensitivity: Arc::new(sensitivity) }
    }

    pub fn dim(&self) -> usize {
        2 * self.n_particles
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn drift_field(&self, z: &[f64]) -> Vec<f64> {
        (self.drift)(z)
    }

    /// `A_k(z)`: zero except `a^{(k)}(z)` at the velocity of particle `k`.
    pub fn noise_column(&self, z: &[f64], k: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        v[2 * k + 1] = (self.diffusion)(z, k);
        v
    }

    /// `A₀ = B − ½ a^{(l)} ∂_{x_l} a^{(l)}` on each velocity coordinate.
    pub fn stratonovich_drift(&self, z: &[f64]) -> Vec<f64> {
        let mut v = self.drift_field(z);
        for l in 0..self.n_particles {
            v[2 * l + 1] -= 0.5 * (self.diffusion)(z, l) * (self.sensitivity)(z, l);
        }
        v
    }
}

/// Fields of the particle system of `model` at `theta` with `n_particles`
/// particles.
pub fn build_fields(model: &ModelSpec, theta: &Params, n_particles: usize) -> Result<VectorFieldSystem> {
    if n_particles < 1 {
        return Err(Error::Argument("need at least one particle".into()));
    }
    let (m1, m2, m3) = (model.clone(), model.clone(), model.clone());
    let (t1, t2, t3) = (theta.clone(), theta.clone(), theta.clone());
    let drift = move |z: &[f64]| {
        let pts = cloud(z);
        let c = m1.coefficients();
        let s = c.summarize(&pts);
        let mut v = Vec::with_capacity(z.len());
        for p in &pts {
            v.push(p.x);
            v.push(c.drift(&t1.mu, *p, &s));
        }
        v
    };
    let diffusion = move |z: &[f64], k: usize| {
        let pts = cloud(z);
        let c = m2.coefficients();
        c.diffusion(&t2.sigma, pts[k], &c.summarize(&pts))
    };
    let sensitivity = move |z: &[f64], k: usize| m3.coefficients().diffusion_velocity_sensitivity(&t3.sigma, &cloud(z), k);
    Ok(VectorFieldSystem {
        n_particles,
        drift: Arc::new(drift),
        diffusion: Arc::new(diffusion),
        sensitivity: Arc::new(sensitivity),
    })
}

/// Default finite-difference step, scaled by `1 + ‖z‖∞`.
pub const FD_STEP: f64 = 1e-5;

/// `J_F(z) v` by a central difference moving `z` by `h` in sup norm.
fn jvp<F>(f: &F, z: &[f64], v: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64> + ?Sized,
{
    let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if vmax == 0.0 {
        return vec![0.0; z.len()];
    }
    let eps = h / vmax;
    let plus: Vec<f64> = z.iter().zip(v).map(|(a, b)| a + eps * b).collect();
    let minus: Vec<f64> = z.iter().zip(v).map(|(a, b)| a - eps * b).collect();
    f(&plus).iter().zip(f(&minus)).map(|(a, b)| (a - b) / (2.0 * eps)).collect()
}

/// `[F, G](z) = J_G F − J_F G` with step `fd_step · (1 + ‖z‖∞)`.
pub fn bracket<F, G>(f: &F, g: &G, z: &[f64], fd_step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64> + ?Sized,
    G: Fn(&[f64]) -> Vec<f64> + ?Sized,
{
    let h = fd_step * (1.0 + z.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    let fz = f(z);
    let gz = g(z);
    let out: Vec<f64> = jvp(g, z, &fz, h).iter().zip(jvp(f, z, &gz, h)).map(|(a, b)| a - b).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite bracket at {z:?}")));
    }
    Ok(out)
}

/// `[A₀, A_k](z)` for particle `k` (0-based).
pub fn lie_bracket(sys: &VectorFieldSystem, k: usize, z: &[f64], fd_step: f64) -> Result<Vec<f64>> {
    if k >= sys.n_particles() || z.len() != sys.dim() {
        return Err(Error::Argument(format!("particle {k} or state length {} out of range", z.len())));
    }
    let a0 = |w: &[f64]| sys.stratonovich_drift(w);
    let ak = |w: &[f64]| sys.noise_column(w, k);
    bracket(&a0, &ak, z, fd_step)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankReport {
    /// Descending.
    pub singular_values: Vec<f64>,
    pub numeric_rank: usize,
    pub full_rank: bool,
    pub probe_state: Vec<f64>,
}

/// Singular values of the matrix with columns `A_k(z)`, `[A₀, A_k](z)`.
pub fn rank_at(sys: &VectorFieldSystem, z: &[f64], rtol: f64, fd_step: f64) -> Result<RankReport> {
    let d = sys.dim();
    let mut m = DMatrix::zeros(d, d);
    for k in 0..sys.n_particles() {
        let col = sys.noise_column(z, k);
        let br = lie_bracket(sys, k, z, fd_step)?;
        for r in 0..d {
            m[(r, 2 * k)] = col[r];
            m[(r, 2 * k + 1)] = br[r];
        }
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let top = sv.first().copied().unwrap_or(0.0);
    let numeric_rank = if top > 0.0 { sv.iter().filter(|s| **s > rtol * top).count() } else { 0 };
    Ok(RankReport { full_rank: numeric_rank == d, singular_values: sv, numeric_rank, probe_state: z.to_vec() })
}

/// Rank report at each probe.
pub fn rank_check(model: &ModelSpec, theta: &Params, n_particles: usize, probes: &[Vec<f64>], rtol: f64) -> Result<Vec<RankReport>> {
    let sys = build_fields(model, theta, n_particles)?;
    probes.iter().map(|z| rank_at(&sys, z, rtol, FD_STEP)).collect()
}

/// `count` standard normal states followed by `stress` states of magnitude
/// around 10.
pub fn default_probes(n_particles: usize, seed: u64, count: usize, stress: usize) -> Vec<Vec<f64>> {
    let mut rng = NoiseStream::new(seed, 0, StreamTag::Probe);
    let mut out = Vec::with_capacity(count + stress);
    for p in 0..count + stress {
        let scale = if p < count { 1.0 } else { 10.0 };
        out.push((0..2 * n_particles).map(|_| scale * rng.normal()).collect());
    }
    out
}

/// CSV `probe,sv1..sv2N,rank,full_rank`.
pub fn write_rank_csv<W: Write>(reports: &[RankReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let d = reports.first().map(|r| r.singular_values.len()).unwrap_or(0);
    let mut header = vec!["probe".to_string()];
    header.extend((1..=d).map(|k| format!("sv{k}")));
    header.push("rank".into());
    header.push("full_rank".into());
    out.write_record(&header)?;
    for (p, r) in reports.iter().enumerate() {
        let mut rec = vec![p.to_string()];
        rec.extend(r.singular_values.iter().map(|v| fmt_f64(*v)));
        rec.push(r.numeric_rank.to_string());
        rec.push(r.full_rank.to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BuiltinModel;

    #[test]
    fn constant_fields_commute() {
        let f = |_: &[f64]| vec![1.0, 2.0];
        let g = |_: &[f64]| vec![-3.0, 0.5];
        assert_eq!(bracket(&f, &g, &[0.3, 0.4], FD_STEP).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn noise_columns_touch_velocity_only() {
        let theta = BuiltinModel::KramersKernel.default_theta0();
        let model = BuiltinModel::KramersKernel.spec(&theta).unwrap();
        let sys = build_fields(&model, &theta, 3).unwrap();
        let z = [0.1, -0.2, 1.0, 0.5, -0.7, 0.3];
        for k in 0..3 {
            let col = sys.noise_column(&z, k);
            for (r, v) in col.iter().enumerate() {
                if r == 2 * k + 1 {
                    assert!(*v > 0.0);
                } else {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn counterexample_has_deficient_rank() {
        let sys = VectorFieldSystem::custom(
            3,
            |z: &[f64]| {
                let mut v = vec![0.0; z.len()];
                for k in 0..z.len() / 2 {
                    v[2 * k] = z[2 * k].sin();
                    v[2 * k + 1] = -z[2 * k + 1] - z[2 * k];
                }
                v
            },
            |_: &[f64], _| 0.8,
        );
        for z in default_probes(3, 1, 5, 2) {
            let r = rank_at(&sys, &z, 1e-8, FD_STEP).unwrap();
            assert!(r.numeric_rank <= 3, "{r:?}");
        }
    }
}
