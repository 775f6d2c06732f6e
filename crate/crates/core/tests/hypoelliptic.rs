mod common;

use std::sync::Arc;

use common::{kramers, mfl, mfl_wide};
use hypoips::hypocheck::{bracket, build_fields, default_probes, lie_bracket, rank_at, rank_check, FD_STEP};
use hypoips::model::{KernelArgument, KernelFeature, KramersKernel};
use hypoips::*;
use proptest::prelude::*;

fn velocity_kernel() -> (ModelSpec, Params) {
    let theta = Params::new(vec![1.0, 1.0, 0.2, 0.5], vec![0.5, 1.0]);
    let coeffs = Arc::new(KramersKernel { feature: KernelFeature::Saturating, argument: KernelArgument::Velocity });
    let model = ModelSpec::new(coeffs, ParamBox::around(&theta, 5.0, &[0.05, 0.0]).unwrap()).unwrap();
    (model, theta)
}

fn cloud(z: &[f64]) -> Vec<Point2> {
    z.chunks_exact(2).map(|c| Point2::new(c[0], c[1])).collect()
}

#[test]
fn constant_diffusion_leaves_drift_uncorrected() {
    let (model, theta) = mfl();
    let sys = build_fields(&model, &theta, 4).unwrap();
    for z in default_probes(4, 2, 5, 1) {
        let b = sys.drift_field(&z);
        assert_eq!(sys.stratonovich_drift(&z), b);
        for k in 0..4 {
            assert_eq!(b[2 * k], z[2 * k + 1]);
        }
    }
}

#[test]
fn ito_correction_matches_finite_differences() {
    let (model, theta) = velocity_kernel();
    let sys = build_fields(&model, &theta, 3).unwrap();
    let c = model.coefficients();
    for z in default_probes(3, 4, 5, 0) {
        let corr: Vec<f64> = sys.drift_field(&z).iter().zip(sys.stratonovich_drift(&z)).map(|(b, a0)| a0 - b).collect();
        for l in 0..3 {
            let a_at = |x: f64| {
                let mut w = z.clone();
                w[2 * l + 1] = x;
                let pts = cloud(&w);
                c.diffusion(&theta.sigma, pts[l], &c.summarize(&pts))
            };
            let x = z[2 * l + 1];
            let h = 1e-6;
            let da = (a_at(x + h) - a_at(x - h)) / (2.0 * h);
            let want = -0.5 * a_at(x) * da;
            assert!((corr[2 * l + 1] - want).abs() < 1e-7 * (1.0 + want.abs()), "{l}: {} vs {want}", corr[2 * l + 1]);
            assert_eq!(corr[2 * l], 0.0);
        }
    }
}

#[test]
fn brackets_of_constant_fields_vanish() {
    let f = |_: &[f64]| vec![1.0, -2.0, 0.5, 3.0];
    let g = |_: &[f64]| vec![0.0, 4.0, 1.0, -1.0];
    assert_eq!(bracket(&f, &g, &[0.3, 0.1, -2.0, 7.0], FD_STEP).unwrap(), vec![0.0; 4]);
}

#[test]
fn linear_system_brackets_match_hand_computation() {
    let (model, theta) = mfl();
    let (mu1, a) = (theta.mu[0], theta.sigma[0]);
    let sys = build_fields(&model, &theta, 3).unwrap();
    for z in default_probes(3, 6, 4, 1) {
        for k in 0..3 {
            let br = lie_bracket(&sys, k, &z, FD_STEP).unwrap();
            for (r, v) in br.iter().enumerate() {
                let want = if r == 2 * k {
                    -a
                } else if r == 2 * k + 1 {
                    a * mu1
                } else {
                    0.0
                };
                assert!((v - want).abs() < 1e-6, "k {k} r {r}: {v} vs {want}");
            }
        }
    }
}

#[test]
fn removing_the_noise_removes_the_rank() {
    let model = mfl_wide();
    let theta = Params::new(vec![0.5, 1.0], vec![0.0]);
    let probes = default_probes(3, 1, 3, 0);
    for r in rank_check(&model, &theta, 3, &probes, 1e-8).unwrap() {
        assert_eq!(r.numeric_rank, 0);
        assert!(!r.full_rank);
    }
}

#[test]
fn position_coordinates_of_the_generating_fields() {
    for (model, theta) in [mfl(), kramers(), velocity_kernel()] {
        let sys = build_fields(&model, &theta, 3).unwrap();
        let c = model.coefficients();
        for z in default_probes(3, 8, 5, 2) {
            let pts = cloud(&z);
            let s = c.summarize(&pts);
            for k in 0..3 {
                let col = sys.noise_column(&z, k);
                let br = lie_bracket(&sys, k, &z, FD_STEP).unwrap();
                let a = c.diffusion(&theta.sigma, pts[k], &s);
                assert_eq!(col[2 * k], 0.0);
                assert!((br[2 * k] + a).abs() < 1e-6 * (1.0 + a.abs()), "{}: {} vs {}", c.name(), br[2 * k], -a);
            }
            assert!(rank_at(&sys, &z, 1e-8, FD_STEP).unwrap().full_rank);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn brackets_are_antisymmetric(seed in 0u64..10_000, k in 0usize..3, kernel in any::<bool>()) {
        let (model, theta) = if kernel { velocity_kernel() } else { mfl() };
        let sys = build_fields(&model, &theta, 3).unwrap();
        let z = default_probes(3, seed, 1, 0).remove(0);
        let a0 = |w: &[f64]| sys.stratonovich_drift(w);
        let ak = |w: &[f64]| sys.noise_column(w, k);
        let fg = bracket(&a0, &ak, &z, FD_STEP).unwrap();
        let gf = bracket(&ak, &a0, &z, FD_STEP).unwrap();
        for (u, v) in fg.iter().zip(&gf) {
            prop_assert!((u + v).abs() < 1e-6 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn rank_ignores_a_common_noise_scale(seed in 0u64..10_000, scale in 0.2f64..20.0) {
        let (model, theta) = kramers();
        let scaled = Params::new(theta.mu.clone(), theta.sigma.iter().map(|s| s * scale).collect());
        let model_scaled = BuiltinModel::KramersKernel.spec(&scaled).unwrap();
        let probes = default_probes(3, seed, 2, 0);
        let a = rank_check(&model, &theta, 3, &probes, 1e-8).unwrap();
        let b = rank_check(&model_scaled, &scaled, 3, &probes, 1e-8).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert_eq!(u.numeric_rank, v.numeric_rank);
        }
    }
}
