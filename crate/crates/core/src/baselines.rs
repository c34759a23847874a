//! SafeOpt and GP-UCB on the shared surrogate and environment stack.
//!
//! Both run through [`Engine`]: SafeOpt is the local loop with global
//! exploration disabled, GP-UCB ignores every safety structure.

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::exploration::{Algorithm, Engine, EngineConfig, RunOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    #[serde(rename = "safeopt")]
    SafeOpt,
    GpUcb,
}

impl From<BaselineKind> for Algorithm {
    fn from(k: BaselineKind) -> Self {
        match k {
            BaselineKind::SafeOpt => Algorithm::SafeOpt,
            BaselineKind::GpUcb => Algorithm::GpUcb,
        }
    }
}

impl TryFrom<Algorithm> for BaselineKind {
    type Error = Error;

    fn try_from(a: Algorithm) -> Result<Self> {
        match a {
            Algorithm::SafeOpt => Ok(BaselineKind::SafeOpt),
            Algorithm::GpUcb => Ok(BaselineKind::GpUcb),
            Algorithm::GoSafeOpt => Err(Error::config("algo", "gosafeopt is not a baseline")),
        }
    }
}

pub fn run_baseline(kind: BaselineKind, cfg: EngineConfig, env: &dyn Environment) -> Result<RunOutcome> {
    Engine::new(
        EngineConfig {
            algorithm: kind.into(),
            ..cfg
        },
        env,
    )?
    .run()
}
