//! Closed-form benchmarks with known safe regions, and a first-order plant
//! that turns them into rollouts a backup policy can guard.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{BackupSwitch, Environment, Guard, RolloutRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkId {
    /// 1D, two disjoint safe islands; the better optimum is in the far one.
    TwoIsland,
    /// 2D parameters, scalar context shifting the optimum.
    ContextualQuadratic,
    /// 1D with a constraint that is positive everywhere.
    #[serde(rename = "smooth_1d")]
    Smooth1d,
}

impl std::str::FromStr for BenchmarkId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_island" => Ok(Self::TwoIsland),
            "contextual_quadratic" => Ok(Self::ContextualQuadratic),
            "smooth_1d" => Ok(Self::Smooth1d),
            other => Err(Error::config("environment.benchmark", format!("unknown benchmark `{other}`"))),
        }
    }
}

impl std::fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::TwoIsland => "two_island",
            Self::ContextualQuadratic => "contextual_quadratic",
            Self::Smooth1d => "smooth_1d",
        })
    }
}

/// `sin(πx)` with exact zeros at integers.
fn sin_pi(x: f64) -> f64 {
    let r = x.rem_euclid(2.0);
    if r == 0.0 || r == 1.0 {
        0.0
    } else {
        (PI * r).sin()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub id: BenchmarkId,
}

impl Benchmark {
    pub fn new(id: BenchmarkId) -> Self {
        Self { id }
    }

    pub fn theta_dim(&self) -> usize {
        match self.id {
            BenchmarkId::ContextualQuadratic => 2,
            _ => 1,
        }
    }

    pub fn context_dim(&self) -> usize {
        match self.id {
            BenchmarkId::ContextualQuadratic => 1,
            _ => 0,
        }
    }

    pub fn num_constraints(&self) -> usize {
        1
    }

    /// Default `(lower, upper, resolution)` grid.
    pub fn default_grid(&self) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
        match self.id {
            BenchmarkId::TwoIsland => (vec![0.0], vec![1.0], vec![200]),
            BenchmarkId::ContextualQuadratic => (vec![-1.0, -1.0], vec![1.0, 1.0], vec![21, 21]),
            BenchmarkId::Smooth1d => (vec![0.0], vec![1.0], vec![101]),
        }
    }

    /// `(g, [q_1, …])`.
    pub fn eval(&self, theta: &[f64], z: &[f64]) -> (f64, Vec<f64>) {
        match self.id {
            BenchmarkId::TwoIsland => {
                let t = theta[0];
                let bump = |c: f64| (-((t - c) / 0.1).powi(2)).exp();
                let g = 0.6 * bump(1.0 / 6.0) + bump(5.0 / 6.0);
                (g, vec![sin_pi(3.0 * t)])
            }
            BenchmarkId::ContextualQuadratic => {
                let c = 0.4 * z.first().copied().unwrap_or(0.0);
                let d2 = (theta[0] - c).powi(2) + (theta[1] - c).powi(2);
                (1.0 - d2, vec![1.0 - d2])
            }
            BenchmarkId::Smooth1d => {
                let t = theta[0];
                let g = (-((t - 0.7) / 0.15).powi(2)).exp();
                (g, vec![0.5 + 0.3 * (2.0 * PI * t).cos()])
            }
        }
    }
}

/// First-order plant: each monitored coordinate moves from `x0` towards the
/// active parameter's constraint value by at most `rate` per step, so the
/// per-step margin is the state itself and `L_x = 1` bounds its sensitivity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPlant {
    pub benchmark: BenchmarkId,
    #[serde(default = "default_x0")]
    pub x0: f64,
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

fn default_x0() -> f64 {
    1.5
}
fn default_rate() -> f64 {
    0.05
}
fn default_horizon() -> usize {
    60
}

impl SyntheticPlant {
    pub fn new(benchmark: BenchmarkId) -> Self {
        Self {
            benchmark,
            x0: default_x0(),
            rate: default_rate(),
            horizon: default_horizon(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) || self.horizon == 0 || !self.x0.is_finite() {
            return Err(Error::config(
                "environment.plant",
                "rate must be positive, horizon >= 1 and x0 finite",
            ));
        }
        Ok(())
    }

    pub fn bench(&self) -> Benchmark {
        Benchmark::new(self.benchmark)
    }
}

impl Environment for SyntheticPlant {
    fn theta_dim(&self) -> usize {
        self.bench().theta_dim()
    }

    fn context_dim(&self) -> usize {
        self.bench().context_dim()
    }

    fn num_constraints(&self) -> usize {
        self.bench().num_constraints()
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![self.x0; self.num_constraints()]
    }

    fn one_step_bound(&self) -> f64 {
        self.rate * (self.num_constraints() as f64).sqrt()
    }

    fn rollout(&self, theta: &[f64], z: &[f64], guard: &mut Guard<'_>) -> Result<RolloutRecord> {
        let bench = self.bench();
        let (g, q) = bench.eval(theta, z);
        let mut target = q.clone();
        let mut switch = None;
        let mut x = self.initial_state();
        let mut min_margin = x.clone();
        let mut states = Vec::with_capacity(self.horizon + 1);
        for k in 0..self.horizon {
            if switch.is_none() {
                if let Some(t) = guard(k, &x) {
                    target = bench.eval(&t, z).1;
                    switch = Some(BackupSwitch { step: k, theta: t });
                }
            }
            states.push(x.clone());
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += (target[i] - *xi).clamp(-self.rate, self.rate);
                min_margin[i] = min_margin[i].min(*xi);
            }
        }
        states.push(x);
        Ok(RolloutRecord {
            states,
            torques: Vec::new(),
            tracking_errors: Vec::new(),
            objective: g,
            constraints: q,
            min_margin,
            switch,
        })
    }

    fn true_objective(&self, theta: &[f64], z: &[f64]) -> Result<f64> {
        Ok(self.bench().eval(theta, z).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_island_optima_and_boundaries() {
        let b = Benchmark::new(BenchmarkId::TwoIsland);
        // Dense scan separates the two island optima.
        let mut best = [(f64::NEG_INFINITY, 0.0); 2];
        for k in 0..=10_000 {
            let t = k as f64 * 1e-4;
            let (g, q) = b.eval(&[t], &[]);
            if q[0] > 0.0 {
                let island = usize::from(t > 0.5);
                if g > best[island].0 {
                    best[island] = (g, t);
                }
            }
        }
        assert!((best[0].0 - 0.6).abs() < 1e-6 && (best[0].1 - 1.0 / 6.0).abs() < 1e-3);
        assert!((best[1].0 - 1.0).abs() < 1e-6 && (best[1].1 - 5.0 / 6.0).abs() < 1e-3);
        for t in [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0] {
            assert_eq!(b.eval(&[t], &[]).1[0], 0.0);
        }
        assert!(b.eval(&[0.5], &[]).1[0] < 0.0);
        assert!(b.eval(&[20.0 / 199.0], &[]).1[0] > 0.8);
    }

    #[test]
    fn quadratic_optimum_moves_with_context() {
        let b = Benchmark::new(BenchmarkId::ContextualQuadratic);
        assert_eq!(b.eval(&[0.0, 0.0], &[0.0]).0, 1.0);
        assert!((b.eval(&[0.2, 0.2], &[0.5]).0 - 1.0).abs() < 1e-15);
        assert!(b.eval(&[-0.4, -0.4], &[0.5]).1[0] > 0.0);
    }

    #[test]
    fn plant_settles_on_constraint_value_when_unguarded() {
        let p = SyntheticPlant::new(BenchmarkId::TwoIsland);
        let (_, q) = p.bench().eval(&[0.5], &[]);
        let rec = p.rollout_unguarded(&[0.5], &[]).unwrap();
        assert_eq!(rec.states.len(), 61);
        assert!((rec.min_margin[0] - q[0]).abs() < 1e-12);
        assert!(rec.violated());
        let safe = p.rollout_unguarded(&[0.8], &[]).unwrap();
        assert!(!safe.violated());
        for w in rec.states.windows(2) {
            assert!((w[1][0] - w[0][0]).abs() <= p.one_step_bound() + 1e-15);
        }
    }

    #[test]
    fn guard_switch_redirects_the_state() {
        let p = SyntheticPlant::new(BenchmarkId::TwoIsland);
        let rec = p
            .rollout(&[0.5], &[], &mut |_, x| (x[0] < 0.3).then(|| vec![1.0 / 6.0]))
            .unwrap();
        assert!(rec.triggered());
        assert!(!rec.violated());
        assert!((rec.states.last().unwrap()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ids_round_trip() {
        for id in [BenchmarkId::TwoIsland, BenchmarkId::ContextualQuadratic, BenchmarkId::Smooth1d] {
            assert_eq!(id.to_string().parse::<BenchmarkId>().unwrap(), id);
        }
        assert!("nope".parse::<BenchmarkId>().is_err());
    }
}
