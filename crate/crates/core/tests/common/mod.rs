#![allow(dead_code)]

use std::sync::Arc;

use hypoips::model::Coefficients;
use hypoips::*;

pub fn mfl() -> (ModelSpec, Params) {
    let theta = BuiltinModel::MeanFieldLangevin.default_theta0();
    (BuiltinModel::MeanFieldLangevin.spec(&theta).unwrap(), theta)
}

pub fn kramers() -> (ModelSpec, Params) {
    let theta = BuiltinModel::KramersKernel.default_theta0();
    (BuiltinModel::KramersKernel.spec(&theta).unwrap(), theta)
}

/// `b = 0`, `a = σ₁`. The drift parameter is a dummy.
#[derive(Debug)]
pub struct ZeroDrift;

impl Coefficients for ZeroDrift {
    fn name(&self) -> &str {
        "ZeroDrift"
    }
    fn drift_dim(&self) -> usize {
        1
    }
    fn diffusion_dim(&self) -> usize {
        1
    }
    fn summarize(&self, points: &[Point2]) -> MeasureSummary {
        MeasureSummary { size: points.len(), ..Default::default() }
    }
    fn drift(&self, _: &[f64], _: Point2, _: &MeasureSummary) -> f64 {
        0.0
    }
    fn drift_grad(&self, _: &[f64], _: Point2, _: &MeasureSummary, out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn diffusion(&self, sigma: &[f64], _: Point2, _: &MeasureSummary) -> f64 {
        sigma[0]
    }
    fn diffusion_grad(&self, _: &[f64], _: Point2, _: &MeasureSummary, out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn constant_diffusion(&self) -> bool {
        true
    }
}

/// ZeroDrift with `σ₁ ∈ [0, 10]`, so noiseless paths can be simulated.
pub fn zero_drift() -> ModelSpec {
    ModelSpec::new(Arc::new(ZeroDrift), ParamBox::new(vec![-1.0], vec![1.0], vec![0.0], vec![10.0]).unwrap()).unwrap()
}

/// MeanFieldLangevin with the diffusion box reaching down to 0.
pub fn mfl_wide() -> ModelSpec {
    ModelSpec::new(
        BuiltinModel::MeanFieldLangevin.coefficients(),
        ParamBox::new(vec![-5.0, -5.0], vec![5.0, 5.0], vec![0.0], vec![10.0]).unwrap(),
    )
    .unwrap()
}

/// `RMS` of a slice.
pub fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Reverses particle order.
pub fn relabel(obs: &ObservationSet) -> ObservationSet {
    let rev = |a: &ndarray::Array2<f64>| {
        let mut b = a.clone();
        b.invert_axis(ndarray::Axis(0));
        b.as_standard_layout().to_owned()
    };
    ObservationSet::new(obs.delta, obs.times.clone(), rev(&obs.y), obs.x.as_ref().map(rev)).unwrap()
}
