//! Backup sets, boundary conditions and fail-set maintenance.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::gp::ContextIntervals;
use crate::safe_sets::distance;

/// A visited `(θ_s, x_s)` pair; `cand` indexes the context's candidate list.
#[derive(Clone, Debug, PartialEq)]
pub struct Backup {
    pub cand: usize,
    pub state: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct BackupSet {
    entries: Vec<Backup>,
}

impl BackupSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, cand: usize, state: Vec<f64>) {
        self.entries.push(Backup { cand, state });
    }

    pub fn extend(&mut self, cand: usize, states: &[Vec<f64>]) {
        for s in states {
            self.push(cand, s.clone());
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Backup] {
        &self.entries
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianBoundary {
    #[serde(default = "default_sigma_b")]
    pub sigma_b: f64,
    #[serde(default = "default_tau_i")]
    pub tau_i: f64,
    #[serde(default = "default_tau_m")]
    pub tau_m: f64,
    pub eta_l: f64,
    pub eta_u: f64,
}

fn default_sigma_b() -> f64 {
    2.0
}
fn default_tau_i() -> f64 {
    0.2
}
fn default_tau_m() -> f64 {
    0.6
}

impl GaussianBoundary {
    /// Simulation thresholds; `eta_l`, `eta_u` have no published values.
    pub fn simulation(eta_l: f64, eta_u: f64) -> Self {
        Self {
            sigma_b: 2.0,
            tau_i: 0.2,
            tau_m: 0.6,
            eta_l,
            eta_u,
        }
    }

    pub fn hardware(eta_l: f64, eta_u: f64) -> Self {
        Self {
            tau_i: 0.05,
            tau_m: 0.1,
            ..Self::simulation(eta_l, eta_u)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_b > 0.0 && self.tau_i > 0.0 && self.tau_m > 0.0) {
            return Err(Error::config("algorithm.boundary", "sigma_b, tau_i and tau_m must be positive"));
        }
        if self.tau_m < self.tau_i {
            return Err(Error::config("algorithm.boundary.tau_m", "tau_m must be >= tau_i"));
        }
        if !(self.eta_l.is_finite() && self.eta_u.is_finite() && self.eta_l <= self.eta_u) {
            return Err(Error::config("algorithm.boundary", "need finite eta_l <= eta_u"));
        }
        Ok(())
    }

    /// `P(|X| ≥ d)` for `X ~ N(0, σ_b²)`.
    pub fn tail_probability(&self, d: f64) -> f64 {
        erfc(d / (self.sigma_b * std::f64::consts::SQRT_2))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BoundaryMode {
    Lipschitz,
    Gaussian(GaussianBoundary),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryParams {
    pub lipschitz_x: f64,
    pub xi: f64,
    pub mode: BoundaryMode,
}

impl BoundaryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lipschitz_x.is_finite() && self.lipschitz_x > 0.0) {
            return Err(Error::config("algorithm.lipschitz_x", "must be positive"));
        }
        if !(self.xi.is_finite() && self.xi >= 0.0) {
            return Err(Error::config("algorithm.xi", "must be non-negative"));
        }
        match &self.mode {
            BoundaryMode::Lipschitz => Ok(()),
            BoundaryMode::Gaussian(g) => g.validate(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryDecision {
    pub trigger: bool,
    /// Index into the backup entries of the selected backup, set on trigger.
    pub backup: Option<usize>,
    /// `max_b min_i l(θ_s, i) − L_x‖x − x_s‖`.
    pub margin: f64,
}

/// Checks whether some backup still covers every state reachable in one step.
///
/// Lipschitz mode triggers when `max_b [min_i l(θ_s, i) − L_x‖x − x_s‖] − L_x·Ξ < 0`,
/// i.e. no backup keeps a non-negative margin after the state moves by up to
/// `Ξ`. Gaussian mode replaces the distance test by tail probabilities over
/// interior and marginal backups.
pub fn boundary_condition(x: &[f64], backups: &BackupSet, ci: &ContextIntervals, params: &BoundaryParams) -> BoundaryDecision {
    let mut best: Option<(f64, usize)> = None;
    let mut covered = false;
    for (b, entry) in backups.entries.iter().enumerate() {
        let lmin = ci.min_constraint_lower(entry.cand);
        let d = distance(x, &entry.state);
        let margin = lmin - params.lipschitz_x * d;
        if best.is_none_or(|(m, _)| margin > m) {
            best = Some((margin, b));
        }
        if let BoundaryMode::Gaussian(g) = &params.mode {
            if !covered {
                let p = g.tail_probability(d);
                covered = if lmin >= g.eta_u {
                    p > g.tau_i
                } else if lmin >= g.eta_l {
                    p > g.tau_m
                } else {
                    false
                };
            }
        }
    }
    let Some((margin, b)) = best else {
        return BoundaryDecision {
            trigger: true,
            backup: None,
            margin: f64::NEG_INFINITY,
        };
    };
    let trigger = match params.mode {
        BoundaryMode::Lipschitz => margin - params.lipschitz_x * params.xi < 0.0,
        BoundaryMode::Gaussian(_) => !covered,
    };
    BoundaryDecision {
        trigger,
        backup: trigger.then_some(b),
        margin,
    }
}

/// A parameter excluded after triggering, with the state where it triggered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailEntry {
    pub cand: usize,
    pub state: Vec<f64>,
}

/// `E(z)` and `X_Fail(z)`, stored as pairs.
#[derive(Clone, Debug, Default)]
pub struct FailState {
    entries: Vec<FailEntry>,
}

impl FailState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, cand: usize, state: Vec<f64>) {
        self.entries.push(FailEntry { cand, state });
    }

    pub fn excludes(&self, cand: usize) -> bool {
        self.entries.iter().any(|e| e.cand == cand)
    }

    pub fn entries(&self) -> &[FailEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct excluded candidates.
    pub fn excluded(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.entries.iter().map(|e| e.cand).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Drops every pair whose candidate satisfies `pred`; returns how many.
    pub fn remove_where(&mut self, pred: impl Fn(&FailEntry) -> bool) -> usize {
        let before = self.entries.len();
        self.entries.retain(|e| !pred(e));
        before - self.entries.len()
    }
}

/// Releases fail pairs whose state is covered by the current backups.
pub fn update_fail_sets(fail: &mut FailState, backups: &BackupSet, ci: &ContextIntervals, params: &BoundaryParams) -> usize {
    fail.remove_where(|e| !boundary_condition(&e.state, backups, ci, params).trigger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::Interval;

    fn ci(lowers: &[f64]) -> ContextIntervals {
        ContextIntervals::from_intervals(
            2,
            lowers
                .iter()
                .map(|l| vec![Interval::UNBOUNDED, Interval::new(*l, l + 1.0)])
                .collect(),
        )
    }

    fn lipschitz(lx: f64, xi: f64) -> BoundaryParams {
        BoundaryParams {
            lipschitz_x: lx,
            xi,
            mode: BoundaryMode::Lipschitz,
        }
    }

    #[test]
    fn coincident_backup_with_margin_does_not_trigger() {
        let mut b = BackupSet::new();
        b.push(0, vec![0.5, 0.5]);
        let d = boundary_condition(&[0.5, 0.5], &b, &ci(&[0.2]), &lipschitz(1.0, 0.1));
        assert!(!d.trigger);
        assert_eq!(d.backup, None);
    }

    #[test]
    fn zero_margin_without_slack_does_not_trigger() {
        let mut b = BackupSet::new();
        b.push(0, vec![0.0]);
        assert!(!boundary_condition(&[0.5], &b, &ci(&[0.5]), &lipschitz(1.0, 0.0)).trigger);
        assert!(boundary_condition(&[0.5], &b, &ci(&[0.5]), &lipschitz(1.0, 1e-9)).trigger);
    }

    #[test]
    fn far_backups_trigger_and_pick_largest_margin() {
        let mut b = BackupSet::new();
        b.push(0, vec![0.0]);
        b.push(1, vec![3.0]);
        // Margins at x = 1.5 with L_x = 1: 0.4 − 1.5 = −1.1 and 0.9 − 1.5 = −0.6.
        let d = boundary_condition(&[1.5], &b, &ci(&[0.4, 0.9]), &lipschitz(1.0, 0.05));
        assert!(d.trigger);
        assert_eq!(d.backup, Some(1));
        assert!((d.margin + 0.6).abs() < 1e-15);
    }

    #[test]
    fn gaussian_threshold_distance() {
        let g = GaussianBoundary::simulation(0.1, 0.5);
        assert_eq!(g.tail_probability(0.0), 1.0);
        // 2(1 − Φ(d/2)) = 0.2 at d = 2·Φ⁻¹(0.9).
        let d_star = 2.0 * 1.281_551_565_544_600_5;
        let p = g.tail_probability(d_star);
        assert!((p - 0.2).abs() < 1e-10, "{p}");
        let params = BoundaryParams {
            lipschitz_x: 1.0,
            xi: 0.0,
            mode: BoundaryMode::Gaussian(g),
        };
        let mut b = BackupSet::new();
        b.push(0, vec![0.0]);
        assert!(boundary_condition(&[3.0], &b, &ci(&[0.8]), &params).trigger);
        assert!(!boundary_condition(&[2.5], &b, &ci(&[0.8]), &params).trigger);
        assert!(!boundary_condition(&[0.0], &b, &ci(&[0.8]), &params).trigger);
    }

    #[test]
    fn fail_pairs_release_once_covered() {
        let params = lipschitz(1.0, 0.05);
        let mut fail = FailState::new();
        let mut b = BackupSet::new();
        b.push(0, vec![0.0]);
        let c = ci(&[0.3, 0.9]);
        assert_eq!(update_fail_sets(&mut fail, &b, &c, &params), 0);
        fail.record(7, vec![2.0]);
        assert!(boundary_condition(&[2.0], &b, &c, &params).trigger);
        assert_eq!(update_fail_sets(&mut fail, &b, &c, &params), 0);
        assert!(fail.excludes(7));
        b.push(1, vec![2.0]);
        assert_eq!(update_fail_sets(&mut fail, &b, &c, &params), 1);
        assert!(!fail.excludes(7));
    }
}
