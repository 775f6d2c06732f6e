//! Box-constrained minimization: projected quasi-Newton with an Armijo search
//! along the projection arc, and a Nelder–Mead fallback on clamped
//! coordinates when the gradient path stalls.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BoxOptions {
    /// Stop when `‖x − P(x − ∇f)‖∞ ≤ grad_tol · (1 + |f|)`.
    pub grad_tol: f64,
    pub max_evals: usize,
}

impl Default for BoxOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-8, max_evals: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub n_evals: usize,
    pub converged: bool,
    /// Nelder–Mead was used after the gradient path stalled.
    pub used_fallback: bool,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F> Counted<F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.evals += 1;
        let (v, g) = (self.f)(x)?;
        if !v.is_finite() || g.iter().any(|d| !d.is_finite()) {
            return Err(Error::Numeric(format!("non-finite objective {v} at {x:?}")));
        }
        Ok((v, g))
    }
}

fn clamp(x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect()
}

/// `‖x − P(x − g)‖∞`.
pub fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((xi, gi), (l, h))| (xi - (xi - gi).clamp(*l, *h)).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over the box `[lo, hi]` starting from `x0`.
///
/// `f` returns the value and gradient. Errors raised by `f` away from the
/// start are treated as an infinite value; an error at the start is returned.
pub fn minimize_box<F>(f: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &BoxOptions) -> Result<BoxOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    if lo.len() != n || hi.len() != n || lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
        return Err(Error::Argument("inconsistent box bounds".into()));
    }
    let mut obj = Counted { f, evals: 0 };
    let mut x = clamp(x0, lo, hi);
    let (mut fx, mut g) = obj.eval(&x)?;
    let width = lo.iter().zip(hi).map(|(l, h)| h - l).fold(f64::INFINITY, f64::min);
    let tol = |v: f64| opts.grad_tol * (1.0 + v.abs());

    // inverse Hessian approximation, row-major
    let identity = |n: usize| {
        let mut h = vec![0.0; n * n];
        (0..n).for_each(|k| h[k * n + k] = 1.0);
        h
    };
    let mut hinv = identity(n);
    let mut fresh = true;
    let mut first = true;
    let mut stalled = false;

    while obj.evals < opts.max_evals {
        if projected_gradient_norm(&x, &g, lo, hi) <= tol(fx) {
            return Ok(BoxOutcome { x, value: fx, grad: g, n_evals: obj.evals, converged: true, used_fallback: false });
        }
        let free: Vec<bool> = (0..n)
            .map(|k| !((x[k] <= lo[k] && g[k] > 0.0) || (x[k] >= hi[k] && g[k] < 0.0)))
            .collect();
        let mut d = vec![0.0; n];
        for r in 0..n {
            if free[r] {
                d[r] = -(0..n).filter(|&c| free[c]).map(|c| hinv[r * n + c] * g[c]).sum::<f64>();
            }
        }
        if !(dot(&d, &g) < 0.0) {
            hinv = identity(n);
            fresh = true;
            d = (0..n).map(|k| if free[k] { -g[k] } else { 0.0 }).collect();
        }
        let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dmax == 0.0 {
            stalled = true;
            break;
        }
        let mut t = if fresh { (0.1 * width / dmax).min(1.0) } else { 1.0 };
        if first {
            t = t.min(0.1 * width / dmax);
            first = false;
        }

        let mut accepted = None;
        for _ in 0..60 {
            if obj.evals >= opts.max_evals {
                break;
            }
            let trial: Vec<f64> = clamp(&x.iter().zip(&d).map(|(a, b)| a + t * b).collect::<Vec<_>>(), lo, hi);
            let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if step.iter().all(|s| s.abs() <= f64::EPSILON * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())))) {
                break;
            }
            if let Ok((ft, gt)) = obj.eval(&trial) {
                if ft <= fx + 1e-4 * dot(&g, &step) {
                    accepted = Some((trial, ft, gt, step));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((xn, fnew, gn, s)) => {
                let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &yv);
                if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
                    if fresh {
                        let scale = sy / dot(&yv, &yv);
                        hinv.iter_mut().for_each(|v| *v *= scale);
                    }
                    bfgs_update(&mut hinv, &s, &yv, sy);
                    fresh = false;
                }
                x = xn;
                fx = fnew;
                g = gn;
            }
            None if !fresh => {
                hinv = identity(n);
                fresh = true;
            }
            None => {
                stalled = true;
                break;
            }
        }
    }

    if projected_gradient_norm(&x, &g, lo, hi) <= tol(fx) {
        return Ok(BoxOutcome { x, value: fx, grad: g, n_evals: obj.evals, converged: true, used_fallback: false });
    }
    if !stalled || obj.evals >= opts.max_evals {
        return Ok(BoxOutcome { x, value: fx, grad: g, n_evals: obj.evals, converged: false, used_fallback: false });
    }

    let budget = opts.max_evals - obj.evals;
    let (xb, fb) = nelder_mead(
        |p| match obj.eval(&clamp(p, lo, hi)) {
            Ok((v, _)) => v,
            Err(_) => f64::INFINITY,
        },
        &x,
        fx,
        lo,
        hi,
        budget.saturating_sub(1),
    );
    let (x, (fx, g)) = if fb < fx {
        let xb = clamp(&xb, lo, hi);
        let vg = obj.eval(&xb)?;
        (xb, vg)
    } else {
        (x, (fx, g))
    };
    let converged = projected_gradient_norm(&x, &g, lo, hi) <= tol(fx);
    Ok(BoxOutcome { x, value: fx, grad: g, n_evals: obj.evals, converged, used_fallback: true })
}

/// `H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|r| (0..n).map(|c| h[r * n + c] * y[c]).sum()).collect();
    let yhy = dot(y, &hy);
    for r in 0..n {
        for c in 0..n {
            h[r * n + c] += -rho * (hy[r] * s[c] + s[r] * hy[c]) + (rho * rho * yhy + rho) * s[r] * s[c];
        }
    }
}

/// Derivative-free simplex search. Returns the best vertex and its value.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], f0: f64, lo: &[f64], hi: &[f64], max_evals: usize) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0;
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    for k in 0..n {
        let mut v = x0.to_vec();
        let step = 0.05 * (hi[k] - lo[k]);
        v[k] = if v[k] + step <= hi[k] { v[k] + step } else { v[k] - step };
        let fv = f(&v);
        evals += 1;
        simplex.push((v, fv));
    }
    let key = |a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)| a.1.total_cmp(&b.1);
    while evals + 2 <= max_evals {
        simplex.sort_by(key);
        let spread = simplex[n].1 - simplex[0].1;
        if spread.abs() <= 1e-15 * (1.0 + simplex[0].1.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|k| simplex[..n].iter().map(|v| v.0[k]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (c - w)).collect()
        };
        let xr = along(1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let xc = if fr < simplex[n].1 { along(0.5) } else { along(-0.5) };
            let fc = f(&xc);
            evals += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    v.0 = v.0.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    v.1 = f(&v.0);
                    evals += 1;
                }
            }
        }
    }
    simplex.sort_by(key);
    let (x, v) = simplex.swap_remove(0);
    (x, v)
}
