mod common;

use common::{mfl, rms, zero_drift};
use hypoips::harness::scaling::{surrogate_error_scaling, surrogate_w2_scaling};
use hypoips::harness::stats::log_log_fit;
use hypoips::observe::{gaussian_weights, gaussian_weights_from_increments};
use hypoips::simulate::subsample;
use hypoips::*;

#[test]
fn partial_view_keeps_positions() {
    let (model, theta) = mfl();
    let obs = simulate_observations(&model, &theta, &SimConfig::new(3, 1.0, 10, 4, 8)).unwrap();
    let p = obs.make_partial();
    assert_eq!(p.y, obs.y);
    assert!(p.x.is_none());
    assert_eq!(p.make_partial(), p);
    let s1 = p.surrogate().unwrap();
    let s2 = obs.surrogate().unwrap();
    assert_eq!(s1.x_tilde, s2.x_tilde);
}

#[test]
fn surrogate_error_rates() {
    let (model, theta) = mfl();
    let base = SimConfig::new(100, 1.0, 400, 10, 21);
    let row = surrogate_error_scaling(&model, &theta, &base, &[50, 100, 200, 400]).unwrap();
    assert!((0.4..=0.6).contains(&row.slope().unwrap()), "{row:?}");
    let base = SimConfig::new(40, 1.0, 400, 10, 22);
    let row = surrogate_w2_scaling(&model, &theta, &base, &[50, 100, 200, 400]).unwrap();
    assert!((0.4..=0.6).contains(&row.slope().unwrap()), "{row:?}");
}

#[test]
fn weights_on_distinct_intervals_are_uncorrelated() {
    let (model, theta) = mfl();
    let cfg = SimConfig::new(2000, 1.0, 20, 10, 5);
    let grid = simulate_ips(&model, &theta, &cfg).unwrap();
    let w = gaussian_weights(&grid, &cfg).unwrap();
    let samples = 2000.0 * 19.0;
    let mut c = 0.0;
    for i in 0..2000 {
        for j in 0..19 {
            c += w.xi[[i, j]] * w.xi_tilde[[i, j + 1]];
        }
    }
    let corr = c / samples / (1.0f64 / 3.0);
    assert!(corr.abs() < 3.0 / samples.sqrt(), "{corr}");
    assert!(gaussian_weights_from_increments(&grid.db, 20, 1, cfg.delta()).is_err());
}

/// `ξ_j` with the weights the Euler position update actually applies: the
/// increment of fine step `r` enters `X̃_j` with weight `1 − (r+1)/m`.
fn scheme_xi(db: &ndarray::Array2<f64>, i: usize, j: usize, m: usize, delta: f64) -> f64 {
    (0..m).map(|r| (1.0 - (r + 1) as f64 / m as f64) * db[[i, j * m + r]]).sum::<f64>() / delta.sqrt()
}

#[test]
fn zero_drift_decomposition_is_exact_for_the_scheme() {
    let model = zero_drift();
    let theta = Params::new(vec![0.0], vec![0.7]);
    let cfg = SimConfig::new(50, 1.0, 40, 16, 31);
    let grid = simulate_ips(&model, &theta, &cfg).unwrap();
    let obs = subsample(&grid, &cfg).unwrap();
    let x = obs.x.clone().unwrap();
    let sur = obs.make_partial().surrogate().unwrap();
    let d = cfg.delta();
    for i in 0..50 {
        for j in 0..40 {
            let eps = (sur.x_tilde[[i, j]] - x[[i, j]]) - d.sqrt() * 0.7 * scheme_xi(&grid.db, i, j, 16, d);
            assert!(eps.abs() < 1e-11, "{i} {j} {eps}");
        }
    }
}

#[test]
fn surrogate_residual_with_drift_is_order_delta() {
    let (model, theta) = mfl();
    // The midpoint weights differ from the scheme by σ√Δ/(2m) in RMS, so the
    // fine grid must be fine enough for that to sit well below Δ.
    let finest = 400;
    let m = 64;
    let cfg = SimConfig::new(200, 1.0, finest, m, 32);
    let grid = simulate_ips(&model, &theta, &cfg).unwrap();
    let (mut deltas, mut res) = (Vec::new(), Vec::new());
    for n in [50usize, 100, 200, 400] {
        let sub = SimConfig { obs_steps: n, fine_factor: m * finest / n, ..cfg.clone() };
        let obs = subsample(&grid, &sub).unwrap();
        let x = obs.x.clone().unwrap();
        let sur = obs.make_partial().surrogate().unwrap();
        let w = gaussian_weights_from_increments(&grid.db, n, sub.fine_factor, sub.delta()).unwrap();
        let sigma = theta.sigma[0];
        let r: Vec<f64> = (0..200)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (sur.x_tilde[[i, j]] - x[[i, j]]) - sub.delta().sqrt() * sigma * w.xi[[i, j]])
            .collect();
        deltas.push(sub.delta());
        res.push(rms(&r));
    }
    let slope = log_log_fit(&deltas, &res).unwrap().slope;
    assert!((0.85..=1.15).contains(&slope), "{slope} {res:?}");
}
