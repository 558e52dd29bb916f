//! Run configuration, read from TOML. Every section and key is optional and
//! falls back to the defaults below; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::BasisRecipe;
use crate::error::{Error, Result};
use crate::model::{head_impact_model, LinearOdeModel};
use crate::simulation::{Estimator, EstimatorControls, SimulationScenario, TRUE_THETA};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Worker threads for `benchmark`; 0 lets the pool decide.
    pub threads: usize,
    pub model: ModelSpec,
    pub basis: BasisRecipe,
    pub estimation: EstimatorControls,
    pub simulation: ScenarioSpec,
    pub benchmark: BenchmarkSpec,
    pub surface: SurfaceSpec,
    pub output: OutputSpec,
}

/// `D^2 x = beta0 x + beta1 Dx + alpha u` with `u` a unit pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub domain: (f64, f64),
    pub impact_time: f64,
    pub pulse_width: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            domain: (0.0, 60.0),
            impact_time: 14.0,
            pulse_width: 1.0,
        }
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<LinearOdeModel> {
        head_impact_model(self.domain, self.impact_time, self.pulse_width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub true_theta: Vec<f64>,
    pub n_obs: usize,
    /// Noise sd as a fraction of the range of the true curve.
    pub sigma: f64,
    pub replicates: usize,
    pub seed: u64,
    pub reference_resolution: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        let s = SimulationScenario::default();
        Self {
            true_theta: TRUE_THETA.to_vec(),
            n_obs: s.n_obs,
            sigma: s.sigma,
            replicates: s.replicates,
            seed: s.base_seed,
            reference_resolution: s.reference_resolution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSpec {
    pub estimators: Vec<Estimator>,
    /// Sample sizes; one table row per `(sigma, n)` pair.
    pub n_obs: Vec<usize>,
    pub sigmas: Vec<f64>,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            estimators: vec![Estimator::Data2ld, Estimator::Nls, Estimator::Sa],
            n_obs: vec![101],
            sigmas: vec![0.05],
        }
    }
}

/// Grid of `H(theta | rho)` over two parameters, the rest held at `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceSpec {
    pub rho: Vec<f64>,
    pub axes: (usize, usize),
    pub first: (f64, f64),
    pub second: (f64, f64),
    pub points: usize,
    /// Values of the other parameters; `None` uses `simulation.true_theta`.
    pub base: Option<Vec<f64>>,
    /// Simulated replicate used when no data file is given.
    pub replicate: usize,
}

impl Default for SurfaceSpec {
    fn default() -> Self {
        Self {
            rho: vec![0.5, 0.99],
            axes: (0, 1),
            first: (-0.55, 0.45),
            second: (-0.65, 0.35),
            points: 41,
            base: None,
            replicate: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.model.domain;
        if !(a < b) {
            return Err(Error::Config("model.domain must be increasing".into()));
        }
        if !(self.model.pulse_width > 0.0) || self.model.impact_time < a || self.model.impact_time + self.model.pulse_width > b {
            return Err(Error::Config("pulse must lie inside the domain".into()));
        }
        self.estimation.ladder.validate()?;
        self.estimation.annealer.validate()?;
        self.scenario().validate()?;
        let s = &self.surface;
        if s.points < 2 {
            return Err(Error::Config("surface.points must be at least 2".into()));
        }
        if s.axes.0 == s.axes.1 || s.axes.0 >= 3 || s.axes.1 >= 3 {
            return Err(Error::Config("surface.axes must name two distinct parameters".into()));
        }
        if s.rho.iter().any(|r| !(*r >= 0.0 && *r < 1.0)) {
            return Err(Error::Config("surface.rho values must lie in [0, 1)".into()));
        }
        if self.benchmark.n_obs.iter().any(|n| *n < 2) || self.benchmark.sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("benchmark sizes must be >= 2 and sigmas >= 0".into()));
        }
        Ok(())
    }

    /// Simulation scenario built from the model, basis and simulation sections.
    pub fn scenario(&self) -> SimulationScenario {
        let s = &self.simulation;
        SimulationScenario {
            true_theta: s.true_theta.clone(),
            domain: self.model.domain,
            impact_time: self.model.impact_time,
            pulse_width: self.model.pulse_width,
            n_obs: s.n_obs,
            sigma: s.sigma,
            replicates: s.replicates,
            base_seed: s.seed,
            reference_resolution: s.reference_resolution,
            basis: self.basis.clone(),
        }
    }
}
