//! Bundled experiment configurations.

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const TWO_ISLAND: &str = include_str!("../../../configs/two_island.toml");
pub const PENDULUM: &str = include_str!("../../../configs/pendulum.toml");
pub const CONTEXTUAL_QUADRATIC: &str = include_str!("../../../configs/contextual_quadratic.toml");
pub const SMOOTH_1D: &str = include_str!("../../../configs/smooth_1d.toml");

pub const NAMES: [&str; 4] = ["two_island", "pendulum", "contextual_quadratic", "smooth_1d"];

pub fn source(name: &str) -> Result<&'static str> {
    match name {
        "two_island" => Ok(TWO_ISLAND),
        "pendulum" => Ok(PENDULUM),
        "contextual_quadratic" => Ok(CONTEXTUAL_QUADRATIC),
        "smooth_1d" => Ok(SMOOTH_1D),
        other => Err(Error::config("preset", format!("unknown preset `{other}`"))),
    }
}

pub fn load(name: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml_str(source(name)?)
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_presets_parse_and_build() {
        for name in super::NAMES {
            let cfg = super::load(name).unwrap();
            let env = cfg.build_environment().unwrap();
            cfg.engine_config(cfg.algorithm(None), 0, env.as_dyn()).unwrap();
        }
    }
}
