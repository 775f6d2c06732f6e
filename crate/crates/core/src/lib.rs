pub mod contrast;
pub mod error;
pub mod estimate;
pub mod harness;
pub mod hypocheck;
pub mod measure;
pub mod model;
pub mod observe;
pub mod optim;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use estimate::{closed_form_linear, fit, plug_in_sigma, EstimateReport, OptConfig};
pub use measure::{EmpiricalMeasure, Point2};
pub use model::{BuiltinModel, Coefficients, MeasureSummary, ModelSpec, ParamBox, Params};
pub use observe::{ObservationMode, ObservationSet};
pub use simulate::{simulate_ips, simulate_observations, SimConfig, TrajectoryGrid};
