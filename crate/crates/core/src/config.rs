//! Experiment configuration files (TOML) and their mapping onto the engine.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::{Bounds, SwarmParams};
use crate::env::{Environment, Pendulum, PendulumConfig, SyntheticPlant};
use crate::error::{Error, Result};
use crate::exploration::{
    Algorithm, BoundaryMode, BoundaryParams, ContextSpec, EngineConfig, FixedSchedule, Schedule, SearchSpace,
};
use crate::gp::{BaseKernel, CompositionMode, KernelSpec};
use crate::safe_sets::CandidateDomain;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    /// Regular grid; the first coordinate varies slowest.
    Grid {
        lower: Vec<f64>,
        upper: Vec<f64>,
        resolution: Vec<usize>,
    },
    /// Explicit candidate list.
    Points { points: Vec<Vec<f64>> },
    /// Continuous box searched by particle swarms.
    Swarm {
        lower: Vec<f64>,
        upper: Vec<f64>,
        exclusion_radius: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelOverride {
    /// 0 is the objective, `i ≥ 1` the i-th constraint.
    pub output: usize,
    pub theta: BaseKernel,
    #[serde(default)]
    pub context: Option<BaseKernel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub noise_sigma: f64,
    /// Kernel over θ, or over the joint input when `context` is absent.
    pub theta: BaseKernel,
    #[serde(default)]
    pub context: Option<BaseKernel>,
    #[serde(default)]
    pub composition: Option<CompositionMode>,
    #[serde(default)]
    pub overrides: Vec<KernelOverride>,
}

impl KernelConfig {
    fn spec(&self, theta: &BaseKernel, context: &Option<BaseKernel>) -> Result<KernelSpec> {
        match (context, self.composition) {
            (None, _) => Ok(KernelSpec::Base(theta.clone())),
            (Some(c), Some(mode)) => Ok(KernelSpec::composite(mode, theta.clone(), c.clone())),
            (Some(_), None) => Err(Error::config(
                "kernel.composition",
                "a context kernel needs `composition = \"product\"` or `\"sum\"`",
            )),
        }
    }

    pub fn shared(&self) -> Result<KernelSpec> {
        self.spec(&self.theta, &self.context)
    }

    /// One entry per output; empty when nothing is overridden.
    pub fn overrides(&self, num_outputs: usize) -> Result<Vec<Option<KernelSpec>>> {
        if self.overrides.is_empty() {
            return Ok(Vec::new());
        }
        let mut out = vec![None; num_outputs];
        for (j, o) in self.overrides.iter().enumerate() {
            if o.output >= num_outputs {
                return Err(Error::config(
                    format!("kernel.overrides[{j}].output"),
                    format!("output {} out of range (0..{num_outputs})", o.output),
                ));
            }
            if out[o.output].is_some() {
                return Err(Error::config(format!("kernel.overrides[{j}].output"), "duplicate output"));
            }
            out[o.output] = Some(self.spec(&o.theta, &o.context)?);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    Convergence,
    Fixed {
        #[serde(default = "default_n_l")]
        n_l: usize,
        #[serde(default = "default_n_g")]
        n_g: usize,
        #[serde(default = "default_n_d")]
        n_d: usize,
        #[serde(default = "default_c")]
        c: f64,
    },
}

fn default_n_l() -> usize {
    FixedSchedule::default().n_l
}
fn default_n_g() -> usize {
    FixedSchedule::default().n_g
}
fn default_n_d() -> usize {
    FixedSchedule::default().n_d
}
fn default_c() -> f64 {
    FixedSchedule::default().c
}

impl From<&ScheduleConfig> for Schedule {
    fn from(s: &ScheduleConfig) -> Self {
        match *s {
            ScheduleConfig::Convergence => Schedule::Convergence,
            ScheduleConfig::Fixed { n_l, n_g, n_d, c } => Schedule::Fixed(FixedSchedule { n_l, n_g, n_d, c }),
        }
    }
}

/// `Ξ`: a number, or `"auto"` for the environment's computed one-step bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum XiSetting {
    Value(f64),
    Keyword(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    /// Default algorithm when the command line does not pick one.
    #[serde(default)]
    pub name: Option<Algorithm>,
    pub beta: f64,
    pub epsilon: f64,
    pub lipschitz_x: f64,
    pub xi: XiSetting,
    pub boundary: BoundaryMode,
    pub schedule: ScheduleConfig,
    #[serde(default = "default_cap")]
    pub episode_cap: usize,
    #[serde(default)]
    pub add_triggered_data: bool,
    #[serde(default = "default_beta_ucb")]
    pub beta_ucb: f64,
}

fn default_cap() -> usize {
    150
}
fn default_beta_ucb() -> f64 {
    4.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentKind {
    Pendulum,
    Benchmark,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub kind: EnvironmentKind,
    /// Standard deviation of Gaussian noise on every measured output.
    pub observation_noise: f64,
    #[serde(default)]
    pub pendulum: Option<PendulumConfig>,
    #[serde(default)]
    pub plant: Option<SyntheticPlant>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub context: String,
    pub episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub domain: DomainConfig,
    pub kernel: KernelConfig,
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub swarm: Option<SwarmParams>,
    pub environment: EnvironmentConfig,
    pub contexts: Vec<ContextSpec>,
    /// Episodes per context in order; empty means round-robin up to the cap.
    #[serde(default)]
    pub schedule: Vec<ScheduleEntry>,
}

/// Environment built from a config; owned so runs can share it across threads.
pub enum EnvironmentInstance {
    Pendulum(Pendulum),
    Plant(SyntheticPlant),
}

impl EnvironmentInstance {
    pub fn as_dyn(&self) -> &dyn Environment {
        match self {
            EnvironmentInstance::Pendulum(p) => p,
            EnvironmentInstance::Plant(p) => p,
        }
    }
}

fn toml_error(e: impl std::fmt::Display) -> Error {
    let msg = e.to_string();
    Error::config("<file>", msg.trim().to_string())
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(toml_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(toml_error)
    }

    /// Structural checks that do not need the environment.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let a = &self.algorithm;
        if !(a.beta.is_finite() && a.beta > 0.0) {
            return Err(Error::config("algorithm.beta", "must be positive"));
        }
        if !(a.epsilon.is_finite() && a.epsilon > 0.0) {
            return Err(Error::config("algorithm.epsilon", "must be positive"));
        }
        if !(a.beta_ucb.is_finite() && a.beta_ucb > 0.0) {
            return Err(Error::config("algorithm.beta_ucb", "must be positive"));
        }
        if a.episode_cap == 0 {
            return Err(Error::config("algorithm.episode_cap", "must be >= 1"));
        }
        if let XiSetting::Keyword(k) = &a.xi {
            if k != "auto" {
                return Err(Error::config("algorithm.xi", format!("expected a number or \"auto\", got `{k}`")));
            }
        }
        if !(self.kernel.noise_sigma.is_finite() && self.kernel.noise_sigma >= 0.0) {
            return Err(Error::config("kernel.noise_sigma", "must be non-negative"));
        }
        if !(self.environment.observation_noise.is_finite() && self.environment.observation_noise >= 0.0) {
            return Err(Error::config("environment.observation_noise", "must be non-negative"));
        }
        match (&self.environment.kind, &self.environment.pendulum, &self.environment.plant) {
            (EnvironmentKind::Pendulum, Some(p), None) => p.validate()?,
            (EnvironmentKind::Benchmark, None, Some(p)) => p.validate()?,
            (EnvironmentKind::Pendulum, _, _) => {
                return Err(Error::config(
                    "environment",
                    "kind = \"pendulum\" needs an [environment.pendulum] table and no [environment.plant]",
                ))
            }
            (EnvironmentKind::Benchmark, _, _) => {
                return Err(Error::config(
                    "environment",
                    "kind = \"benchmark\" needs an [environment.plant] table and no [environment.pendulum]",
                ))
            }
        }
        if let Some(s) = &self.swarm {
            s.validate()?;
        }
        if matches!(self.domain, DomainConfig::Swarm { .. }) && self.swarm.is_none() {
            return Err(Error::config("swarm", "swarm domains need a [swarm] table"));
        }
        if self.contexts.is_empty() {
            return Err(Error::config("contexts", "at least one [[contexts]] entry is required"));
        }
        for (i, c) in self.contexts.iter().enumerate() {
            if self.contexts[..i].iter().any(|o| o.id == c.id) {
                return Err(Error::config(format!("contexts[{i}].id"), format!("duplicate id `{}`", c.id)));
            }
            if c.seeds.is_empty() {
                return Err(Error::config(
                    format!("contexts[{i}].seeds"),
                    "initial safe set is empty; at least one known safe parameter is required",
                ));
            }
        }
        for (j, e) in self.schedule.iter().enumerate() {
            if !self.contexts.iter().any(|c| c.id == e.context) {
                return Err(Error::config(
                    format!("schedule[{j}].context"),
                    format!("unknown context `{}`", e.context),
                ));
            }
        }
        Ok(())
    }

    pub fn build_environment(&self) -> Result<EnvironmentInstance> {
        match self.environment.kind {
            EnvironmentKind::Pendulum => {
                let p = self.environment.pendulum.clone().expect("validated");
                let seed = self.contexts.first().and_then(|c| c.seeds.first()).map(|s| s.as_slice());
                Ok(EnvironmentInstance::Pendulum(Pendulum::new(p, seed)?))
            }
            EnvironmentKind::Benchmark => Ok(EnvironmentInstance::Plant(self.environment.plant.clone().expect("validated"))),
        }
    }

    pub fn search_space(&self) -> Result<SearchSpace> {
        match &self.domain {
            DomainConfig::Grid {
                lower,
                upper,
                resolution,
            } => Ok(SearchSpace::Grid(CandidateDomain::grid(lower, upper, resolution)?)),
            DomainConfig::Points { points } => Ok(SearchSpace::Grid(CandidateDomain::new(points.clone())?)),
            DomainConfig::Swarm {
                lower,
                upper,
                exclusion_radius,
            } => {
                if !(exclusion_radius.is_finite() && *exclusion_radius >= 0.0) {
                    return Err(Error::config("domain.exclusion_radius", "must be non-negative"));
                }
                Ok(SearchSpace::Swarm {
                    bounds: Bounds::new(lower.clone(), upper.clone())?,
                    params: self.swarm.clone().unwrap_or_default(),
                    exclusion_radius: *exclusion_radius,
                })
            }
        }
    }

    /// Context index per episode slot, capped at `episode_cap`.
    pub fn plan(&self) -> Vec<usize> {
        let cap = self.algorithm.episode_cap;
        let index = |id: &str| self.contexts.iter().position(|c| c.id == id).expect("validated");
        if self.schedule.is_empty() {
            return (0..cap).map(|k| k % self.contexts.len()).collect();
        }
        self.schedule
            .iter()
            .flat_map(|e| std::iter::repeat_n(index(&e.context), e.episodes))
            .take(cap)
            .collect()
    }

    pub fn algorithm(&self, cli: Option<Algorithm>) -> Algorithm {
        cli.or(self.algorithm.name).unwrap_or(Algorithm::GoSafeOpt)
    }

    pub fn engine_config(&self, algorithm: Algorithm, seed: u64, env: &dyn Environment) -> Result<EngineConfig> {
        let num_outputs = env.num_constraints() + 1;
        let kernel = self.kernel.shared()?;
        kernel.validate(env.theta_dim(), env.context_dim())?;
        let overrides = self.kernel.overrides(num_outputs)?;
        for k in overrides.iter().flatten() {
            k.validate(env.theta_dim(), env.context_dim())?;
        }
        let xi = match self.algorithm.xi {
            XiSetting::Value(v) => v,
            XiSetting::Keyword(_) => env.one_step_bound(),
        };
        Ok(EngineConfig {
            algorithm,
            space: self.search_space()?,
            kernel,
            kernel_overrides: overrides,
            noise_sigma: self.kernel.noise_sigma,
            observation_noise: self.environment.observation_noise,
            beta: self.algorithm.beta,
            beta_ucb: self.algorithm.beta_ucb,
            epsilon: self.algorithm.epsilon,
            boundary: BoundaryParams {
                lipschitz_x: self.algorithm.lipschitz_x,
                xi,
                mode: self.algorithm.boundary.clone(),
            },
            schedule: (&self.algorithm.schedule).into(),
            add_triggered_data: self.algorithm.add_triggered_data,
            contexts: self.contexts.clone(),
            plan: self.plan(),
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
seeds = [0, 1]

[domain]
mode = "grid"
lower = [0.0]
upper = [1.0]
resolution = [200]

[kernel]
noise_sigma = 0.001
theta = { family = "matern_nu_1_5", lengthscales = [0.1], output_scale = 1.0 }

[algorithm]
beta = 16.0
epsilon = 0.05
lipschitz_x = 1.0
xi = "auto"
boundary = { mode = "lipschitz" }
schedule = { mode = "convergence" }

[environment]
kind = "benchmark"
observation_noise = 0.001
plant = { benchmark = "two_island" }

[[contexts]]
id = "default"
z = []
seeds = [[0.10050251256281408]]
lipschitz_theta = 9.5
"#;

    #[test]
    fn minimal_config_maps_onto_the_engine() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let env = cfg.build_environment().unwrap();
        let e = cfg.engine_config(cfg.algorithm(None), 7, env.as_dyn()).unwrap();
        assert_eq!(e.algorithm, Algorithm::GoSafeOpt);
        assert_eq!(e.plan.len(), 150);
        assert_eq!(e.boundary.xi, 0.05);
        assert_eq!(e.beta_ucb, 4.0);
        assert!(e.kernel_overrides.is_empty());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        cfg.algorithm.schedule = ScheduleConfig::Fixed {
            n_l: 10,
            n_g: 5,
            n_d: 5,
            c: 0.5,
        };
        cfg.algorithm.boundary = BoundaryMode::Gaussian(crate::exploration::GaussianBoundary::hardware(0.1, 0.4));
        cfg.swarm = Some(SwarmParams::default());
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn missing_safety_constant_is_a_field_error() {
        let text = MINIMAL.replace("lipschitz_theta = 9.5\n", "");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("lipschitz_theta"), "{err}");
        let text = MINIMAL.replace("beta = 16.0\n", "");
        assert!(ExperimentConfig::from_toml_str(&text).unwrap_err().to_string().contains("beta"));
    }

    #[test]
    fn gaussian_mode_requires_eta() {
        let text = MINIMAL.replace(
            "boundary = { mode = \"lipschitz\" }",
            "boundary = { mode = \"gaussian\", sigma_b = 2.0 }",
        );
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("eta_l"), "{err}");
    }

    #[test]
    fn rejects_bad_versions_and_references() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config { field, .. }) if field == "schema_version"));
        let text = format!("{MINIMAL}\n[[schedule]]\ncontext = \"nope\"\nepisodes = 3\n");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config { field, .. }) if field == "schedule[0].context"));
        let text = MINIMAL.replace("seeds = [[0.10050251256281408]]", "seeds = []");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config { field, .. }) if field == "contexts[0].seeds"));
    }

    #[test]
    fn schedule_concatenates_and_caps() {
        let mut cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        cfg.contexts.push(ContextSpec {
            id: "b".into(),
            ..cfg.contexts[0].clone()
        });
        assert_eq!(&cfg.plan()[..4], &[0, 1, 0, 1]);
        cfg.schedule = vec![
            ScheduleEntry {
                context: "b".into(),
                episodes: 2,
            },
            ScheduleEntry {
                context: "default".into(),
                episodes: 200,
            },
        ];
        let plan = cfg.plan();
        assert_eq!(plan.len(), 150);
        assert_eq!(&plan[..3], &[1, 1, 0]);
    }
}
