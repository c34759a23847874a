//! Gaussian process surrogate over joint (parameter, context) inputs.

mod confidence;
mod kernel;
mod model;

pub use confidence::{ConfidenceState, ContextIntervals, Interval, UpdateReport};
pub use kernel::{BaseKernel, CompositionMode, KernelFamily, KernelSpec};
pub use model::{Prediction, SurrogateModel, JITTER_LADDER};

use serde::{Deserialize, Serialize};

/// A controller parameter vector `θ` paired with the context `z` it was run under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputPoint {
    pub theta: Vec<f64>,
    pub z: Vec<f64>,
}

impl InputPoint {
    pub fn new(theta: Vec<f64>, z: Vec<f64>) -> Self {
        Self { theta, z }
    }

    pub fn dim(&self) -> usize {
        self.theta.len() + self.z.len()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.z).all(|v| v.is_finite())
    }
}

/// Index into the stacked outputs: 0 is the objective, `1..=c` the constraints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OutputIndex(pub usize);

impl OutputIndex {
    pub const OBJECTIVE: OutputIndex = OutputIndex(0);

    pub fn is_constraint(self) -> bool {
        self.0 >= 1
    }
}
