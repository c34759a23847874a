use serde::{Deserialize, Serialize};

use super::RolloutRecord;
use crate::error::{Error, Result};

/// Diagonal weights over the tracking error `(angle, velocity)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSpec {
    pub q_g: Vec<f64>,
    pub q_q: Vec<f64>,
    /// Constraint level; `None` means calibrate it from the seed rollout.
    #[serde(default)]
    pub v0: Option<f64>,
    /// Optional velocity penalty on the absolute state.
    #[serde(default)]
    pub q_p: Option<Vec<f64>>,
}

impl RewardSpec {
    pub fn identity(v0: f64) -> Self {
        Self {
            q_g: vec![1.0, 1.0],
            q_q: vec![1.0, 1.0],
            v0: Some(v0),
            q_p: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let psd = |w: &[f64]| w.len() == 2 && w.iter().all(|v| v.is_finite() && *v >= 0.0);
        if !psd(&self.q_g) || !psd(&self.q_q) || !self.q_p.as_deref().is_none_or(psd) {
            return Err(Error::config(
                "environment.reward",
                "weights must be two non-negative finite diagonal entries",
            ));
        }
        if self.v0.is_some_and(|v| !v.is_finite()) {
            return Err(Error::config("environment.reward.v0", "v0 must be finite"));
        }
        Ok(())
    }
}

pub(crate) fn weighted_sq(w: &[f64], e: &[f64]) -> f64 {
    w.iter().zip(e).map(|(w, e)| w * e * e).sum()
}

/// Objective and constraint from stored tracking errors.
///
/// `errors[t]` is `x*(t) − x(t)` and `states[t]` the absolute state for
/// `t = 1..=h`; returns `[g, q]`.
pub fn evaluate_rollout(errors: &[[f64; 2]], states: &[[f64; 2]], spec: &RewardSpec, v0: f64) -> Result<Vec<f64>> {
    if errors.iter().chain(states).flatten().any(|v| !v.is_finite()) {
        return Err(Error::Environment("non-finite state in rollout record".into()));
    }
    let mut g = 0.0;
    let mut q = f64::INFINITY;
    for e in errors {
        g -= weighted_sq(&spec.q_g, e);
        q = q.min(v0 - weighted_sq(&spec.q_q, e));
    }
    if let Some(qp) = &spec.q_p {
        for x in states {
            g -= qp[1] * x[1] * x[1];
        }
    }
    if errors.is_empty() {
        q = v0;
    }
    Ok(vec![g, q])
}

/// Constraint value recomputed from the stored per-step weighted errors.
pub fn recompute_constraint(rec: &RolloutRecord, v0: f64) -> f64 {
    rec.tracking_errors
        .iter()
        .fold(f64::INFINITY, |acc, e| acc.min(v0 - e))
        .min(v0)
}
