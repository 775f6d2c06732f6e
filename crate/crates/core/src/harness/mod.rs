//! Monte Carlo experiments, diagnostics and persistence.

pub mod clt;
pub mod config;
pub mod io;
pub mod replicate;
pub mod scaling;
pub mod stats;

pub use clt::{clt_summary, oracle_variances, CltSummary, OracleVariances};
pub use config::{Cell, ExperimentConfig};
pub use replicate::{run_replications, run_replications_to_dir, ReplicationRow};
pub use scaling::{scaling_study, ScalingTable, SlopeRow};
