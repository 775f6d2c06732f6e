//! Declarative experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contrast::OracleConfig;
use crate::error::{Error, Result};
use crate::estimate::OptConfig;
use crate::model::{BuiltinModel, ModelSpec, Params};
use crate::observe::ObservationMode;
use crate::simulate::{InitLaw, SimConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub tag: String,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Half-width of the box around θ₀.
    #[serde(default = "default_half_width")]
    pub half_width: f64,
}

fn default_half_width() -> f64 {
    5.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n_particles: Vec<usize>,
    pub obs_steps: Vec<usize>,
    #[serde(default = "default_fine")]
    pub fine_factor: Vec<usize>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

fn default_fine() -> Vec<usize> {
    vec![20]
}

fn default_horizon() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub replications: usize,
    #[serde(default = "default_modes")]
    pub modes: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_modes() -> Vec<String> {
    vec!["C".into(), "P".into()]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
}

fn default_starts() -> usize {
    OptConfig::default().starts
}

fn default_grad_tol() -> f64 {
    OptConfig::default().grad_tol
}

fn default_max_evals() -> usize {
    OptConfig::default().max_evals
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self { starts: default_starts(), grad_tol: default_grad_tol(), max_evals: default_max_evals() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub n_particles: usize,
    pub obs_steps: usize,
    pub fine_factor: usize,
    pub seeds: usize,
    pub seed: u64,
}

impl Default for OracleSection {
    fn default() -> Self {
        let o = OracleConfig::default();
        Self { n_particles: o.n_particles, obs_steps: o.obs_steps, fine_factor: o.fine_factor, seeds: o.seeds, seed: o.seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    pub run: RunSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub oracle: OracleSection,
}

/// One `(N, n, m)` combination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub n_particles: usize,
    pub obs_steps: usize,
    pub fine_factor: usize,
    pub horizon: f64,
}

impl Cell {
    pub fn delta(&self) -> f64 {
        self.horizon / self.obs_steps as f64
    }

    /// `N Δ`, which the normal approximation wants small.
    pub fn n_delta(&self) -> f64 {
        self.n_particles as f64 * self.delta()
    }

    /// `N Δ ≥ 1`.
    pub fn flagged(&self) -> bool {
        self.n_delta() >= 1.0
    }

    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            n_particles: self.n_particles,
            horizon: self.horizon,
            obs_steps: self.obs_steps,
            fine_factor: self.fine_factor,
            seed,
            init: InitLaw::StandardNormal,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.builtin()?;
        self.model_spec()?;
        self.modes()?;
        let g = &self.grid;
        if g.n_particles.is_empty() || g.obs_steps.is_empty() || g.fine_factor.is_empty() {
            return Err(Error::Config("every grid axis needs at least one value".into()));
        }
        for cell in self.cells() {
            cell.sim_config(0).validate()?;
        }
        if self.run.replications == 0 {
            return Err(Error::Config("replications must be positive".into()));
        }
        if self.run.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        if self.optimizer.starts == 0 || !(self.optimizer.grad_tol > 0.0) || self.optimizer.max_evals == 0 {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        if self.oracle.seeds == 0 || self.oracle.n_particles == 0 {
            return Err(Error::Config("invalid oracle settings".into()));
        }
        Ok(())
    }

    pub fn builtin(&self) -> Result<BuiltinModel> {
        BuiltinModel::from_tag(&self.model.tag)
    }

    pub fn theta0(&self) -> Params {
        Params::new(self.model.mu.clone(), self.model.sigma.clone())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        self.builtin()?.spec_with_half_width(&self.theta0(), self.model.half_width)
    }

    pub fn modes(&self) -> Result<Vec<ObservationMode>> {
        if self.run.modes.is_empty() {
            return Err(Error::Config("no observation modes requested".into()));
        }
        let mut m = self.run.modes.iter().map(|t| ObservationMode::from_tag(t)).collect::<Result<Vec<_>>>()?;
        m.sort();
        m.dedup();
        Ok(m)
    }

    /// Cells in `N`-major, then `n`, then `m` order.
    pub fn cells(&self) -> Vec<Cell> {
        let g = &self.grid;
        let mut out = Vec::new();
        for &n_particles in &g.n_particles {
            for &obs_steps in &g.obs_steps {
                for &fine_factor in &g.fine_factor {
                    out.push(Cell { index: out.len(), n_particles, obs_steps, fine_factor, horizon: g.horizon });
                }
            }
        }
        out
    }

    pub fn opt_config(&self, seed: u64) -> OptConfig {
        OptConfig {
            starts: self.optimizer.starts,
            grad_tol: self.optimizer.grad_tol,
            max_evals: self.optimizer.max_evals,
            seed,
        }
    }

    pub fn oracle_config(&self) -> OracleConfig {
        OracleConfig {
            n_particles: self.oracle.n_particles,
            obs_steps: self.oracle.obs_steps,
            fine_factor: self.oracle.fine_factor,
            seeds: self.oracle.seeds,
            seed: self.oracle.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[model]
tag = "MeanFieldLangevin"
mu = [0.5, 1.0]
sigma = [1.0]

[grid]
n_particles = [10, 20]
obs_steps = [50]

[run]
replications = 2
"#;

    #[test]
    fn parse_defaults_and_round_trip() {
        let cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(cfg.grid.fine_factor, vec![20]);
        assert_eq!(cfg.modes().unwrap(), vec![ObservationMode::Complete, ObservationMode::Partial]);
        assert_eq!(cfg.cells().len(), 2);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            SAMPLE.replace("MeanFieldLangevin", "Nope"),
            SAMPLE.replace("mu = [0.5, 1.0]", "mu = [0.5]"),
            SAMPLE.replace("obs_steps = [50]", "obs_steps = [2]"),
            SAMPLE.replace("replications = 2", "replications = 0"),
            SAMPLE.replace("replications = 2", "replications = 2\nbogus = 1"),
        ] {
            assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn cells_flag_large_n_delta() {
        let cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        let cells = cfg.cells();
        assert!((cells[0].n_delta() - 0.2).abs() < 1e-15);
        assert!(!cells[1].flagged());
        let big = ExperimentConfig::from_toml_str(&SAMPLE.replace("[10, 20]", "[100]")).unwrap();
        assert!(big.cells()[0].flagged());
    }
}
