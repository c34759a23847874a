//! Evaluation targets that the optimizers run rollouts against.

mod pendulum;
mod reward;
mod synthetic;

pub use pendulum::{disturbed_torque, Pendulum, PendulumConfig};
pub use reward::{evaluate_rollout, recompute_constraint, RewardSpec};
pub use synthetic::{Benchmark, BenchmarkId, SyntheticPlant};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Consulted before every observation step with `(step, monitored state)`.
/// Returning a parameter vector switches the controller for the rest of the
/// rollout; it is not consulted again after a switch.
pub type Guard<'a> = dyn FnMut(usize, &[f64]) -> Option<Vec<f64>> + 'a;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackupSwitch {
    pub step: usize,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    /// Monitored state at every observation step, `x(0)` included.
    pub states: Vec<Vec<f64>>,
    /// Applied control per step; empty for plants without an actuator model.
    pub torques: Vec<f64>,
    /// Weighted squared tracking error per step after `x(0)`.
    pub tracking_errors: Vec<f64>,
    pub objective: f64,
    pub constraints: Vec<f64>,
    /// Smallest safety margin per constraint over the executed trajectory.
    pub min_margin: Vec<f64>,
    pub switch: Option<BackupSwitch>,
}

impl RolloutRecord {
    /// `[g, q_1, …, q_c]` before observation noise.
    pub fn measurements(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(1 + self.constraints.len());
        y.push(self.objective);
        y.extend_from_slice(&self.constraints);
        y
    }

    pub fn violated(&self) -> bool {
        self.min_margin.iter().any(|m| *m < 0.0)
    }

    pub fn triggered(&self) -> bool {
        self.switch.is_some()
    }
}

/// A black-box system evaluated one episode at a time.
pub trait Environment: Send + Sync {
    fn theta_dim(&self) -> usize;
    fn context_dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    /// Monitored state at the start of every rollout.
    fn initial_state(&self) -> Vec<f64>;
    /// Bound on how far the monitored state moves in one observation step.
    fn one_step_bound(&self) -> f64;
    fn rollout(&self, theta: &[f64], z: &[f64], guard: &mut Guard<'_>) -> Result<RolloutRecord>;

    fn rollout_unguarded(&self, theta: &[f64], z: &[f64]) -> Result<RolloutRecord> {
        self.rollout(theta, z, &mut |_, _| None)
    }

    /// Noise-free objective, used for reporting only.
    fn true_objective(&self, theta: &[f64], z: &[f64]) -> Result<f64> {
        Ok(self.rollout_unguarded(theta, z)?.objective)
    }
}
