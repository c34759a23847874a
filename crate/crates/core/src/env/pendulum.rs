//! Torque-disturbed pendulum with PD gain correction, gym conventions.
//!
//! Angle 0 is upright. The nominal controller is a PD law on the actual state;
//! the reference trajectory is the undisturbed closed loop under that law.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::reward::weighted_sq;
use super::{BackupSwitch, Environment, Guard, RewardSpec, RolloutRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumConfig {
    #[serde(default = "defaults::mass")]
    pub mass: f64,
    #[serde(default = "defaults::length")]
    pub length: f64,
    #[serde(default = "defaults::gravity")]
    pub gravity: f64,
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    #[serde(default = "defaults::horizon")]
    pub horizon: usize,
    #[serde(default = "defaults::torque_limit")]
    pub torque_limit: f64,
    #[serde(default = "defaults::max_speed")]
    pub max_speed: f64,
    /// Integrator sub-steps per `dt`.
    #[serde(default = "defaults::substeps")]
    pub substeps: usize,
    /// `(θ_p^d, θ_d^d)`.
    pub disturbance: [f64; 2],
    #[serde(default = "defaults::nominal_gains")]
    pub nominal_gains: [f64; 2],
    #[serde(default = "defaults::initial_state")]
    pub initial_state: [f64; 2],
    pub reward: RewardSpec,
}

mod defaults {
    pub fn mass() -> f64 {
        1.0
    }
    pub fn length() -> f64 {
        1.0
    }
    pub fn gravity() -> f64 {
        10.0
    }
    pub fn dt() -> f64 {
        0.05
    }
    pub fn horizon() -> usize {
        100
    }
    pub fn torque_limit() -> f64 {
        2.0
    }
    pub fn max_speed() -> f64 {
        8.0
    }
    pub fn substeps() -> usize {
        10
    }
    pub fn nominal_gains() -> [f64; 2] {
        [10.0, 2.0]
    }
    pub fn initial_state() -> [f64; 2] {
        [0.3, 0.0]
    }
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            mass: defaults::mass(),
            length: defaults::length(),
            gravity: defaults::gravity(),
            dt: defaults::dt(),
            horizon: defaults::horizon(),
            torque_limit: defaults::torque_limit(),
            max_speed: defaults::max_speed(),
            substeps: defaults::substeps(),
            disturbance: [6.0, 3.0],
            nominal_gains: defaults::nominal_gains(),
            initial_state: defaults::initial_state(),
            reward: RewardSpec {
                q_g: vec![1.0, 1.0],
                q_q: vec![1.0, 1.0],
                v0: None,
                q_p: None,
            },
        }
    }
}

impl PendulumConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("environment.pendulum.mass", self.mass),
            ("environment.pendulum.length", self.length),
            ("environment.pendulum.gravity", self.gravity),
            ("environment.pendulum.dt", self.dt),
            ("environment.pendulum.torque_limit", self.torque_limit),
            ("environment.pendulum.max_speed", self.max_speed),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, "must be positive and finite"));
            }
        }
        if self.horizon == 0 || self.substeps == 0 {
            return Err(Error::config("environment.pendulum", "horizon and substeps must be >= 1"));
        }
        if self
            .disturbance
            .iter()
            .chain(&self.nominal_gains)
            .chain(&self.initial_state)
            .any(|v| !v.is_finite())
        {
            return Err(Error::config("environment.pendulum", "gains and states must be finite"));
        }
        self.reward.validate()
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Applied torque under the candidate correction and the injected disturbance.
///
/// The candidate PD acts on the angle error with a zero velocity reference.
/// Correction and disturbance are summed before adding `tau_ideal`, so gains
/// equal to the disturbance cancel it exactly.
pub fn disturbed_torque(
    tau_ideal: f64,
    x_ref: [f64; 2],
    x: [f64; 2],
    gains: &[f64],
    disturbance: [f64; 2],
    torque_limit: f64,
) -> f64 {
    let e = wrap_angle(x_ref[0] - x[0]);
    let correction = gains[0] * e - gains[1] * x[1];
    let injected = -disturbance[0] * e + disturbance[1] * x[1];
    (tau_ideal + (correction + injected)).clamp(-torque_limit, torque_limit)
}

#[derive(Clone, Debug)]
pub struct Pendulum {
    cfg: PendulumConfig,
    v0: f64,
    reference: Vec<[f64; 2]>,
    xi: f64,
}

impl Pendulum {
    /// Builds the plant; `v0` is taken from the reward spec or, if absent,
    /// calibrated so that `seed` keeps 30% of it as margin.
    pub fn new(cfg: PendulumConfig, seed: Option<&[f64]>) -> Result<Self> {
        cfg.validate()?;
        let mut p = Self {
            v0: cfg.reward.v0.unwrap_or(f64::INFINITY),
            reference: Vec::new(),
            xi: 0.0,
            cfg,
        };
        p.reference = p.simulate_reference();
        if p.cfg.reward.v0.is_none() {
            let seed = seed.ok_or_else(|| {
                Error::config("environment.reward.v0", "v0 is unset and no seed is available to calibrate it")
            })?;
            let worst = p.worst_error(seed)?;
            if !(worst > 0.0) {
                return Err(Error::config(
                    "environment.reward.v0",
                    "seed tracks perfectly; v0 cannot be calibrated from it",
                ));
            }
            p.v0 = worst / 0.7;
        }
        p.xi = p.compute_one_step_bound();
        Ok(p)
    }

    pub fn config(&self) -> &PendulumConfig {
        &self.cfg
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn reference(&self) -> &[[f64; 2]] {
        &self.reference
    }

    fn nominal_torque(&self, x: [f64; 2]) -> f64 {
        -self.cfg.nominal_gains[0] * x[0] - self.cfg.nominal_gains[1] * x[1]
    }

    /// One observation step of semi-implicit Euler with internal sub-steps.
    pub fn step(&self, x: [f64; 2], torque: f64) -> [f64; 2] {
        let c = &self.cfg;
        let u = torque.clamp(-c.torque_limit, c.torque_limit);
        let h = c.dt / c.substeps as f64;
        let (mut th, mut w) = (x[0], x[1]);
        for _ in 0..c.substeps {
            let acc = 3.0 * c.gravity / (2.0 * c.length) * th.sin() + 3.0 / (c.mass * c.length * c.length) * u;
            w = (w + acc * h).clamp(-c.max_speed, c.max_speed);
            th += w * h;
        }
        [wrap_angle(th), w]
    }

    fn simulate_reference(&self) -> Vec<[f64; 2]> {
        let mut x = self.cfg.initial_state;
        let mut out = Vec::with_capacity(self.cfg.horizon + 1);
        out.push(x);
        for _ in 0..self.cfg.horizon {
            x = self.step(x, self.nominal_torque(x));
            out.push(x);
        }
        out
    }

    /// Largest `Q_q`-weighted squared tracking error along an unguarded rollout.
    fn worst_error(&self, theta: &[f64]) -> Result<f64> {
        let rec = self.rollout_unguarded(theta, &[])?;
        Ok(rec.tracking_errors.iter().copied().fold(0.0, f64::max))
    }

    /// Bound on the one-step change of the tracking error: largest plant
    /// displacement over a state grid at the extreme torques, plus the largest
    /// one-step move of the reference.
    fn compute_one_step_bound(&self) -> f64 {
        let c = &self.cfg;
        let mut plant: f64 = 0.0;
        for a in 0..=60 {
            let th = -PI + 2.0 * PI * a as f64 / 60.0;
            for b in 0..=40 {
                let w = -c.max_speed + 2.0 * c.max_speed * b as f64 / 40.0;
                for u in [-c.torque_limit, 0.0, c.torque_limit] {
                    let n = self.step([th, w], u);
                    let d = [wrap_angle(n[0] - th), n[1] - w];
                    plant = plant.max((d[0] * d[0] + d[1] * d[1]).sqrt());
                }
            }
        }
        let reference = self
            .reference
            .windows(2)
            .map(|p| {
                let d = [wrap_angle(p[1][0] - p[0][0]), p[1][1] - p[0][1]];
                (d[0] * d[0] + d[1] * d[1]).sqrt()
            })
            .fold(0.0, f64::max);
        plant + reference
    }
}

impl Environment for Pendulum {
    fn theta_dim(&self) -> usize {
        2
    }

    fn context_dim(&self) -> usize {
        0
    }

    fn num_constraints(&self) -> usize {
        1
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn one_step_bound(&self) -> f64 {
        self.xi
    }

    /// The monitored state is the tracking error `x − x*`.
    fn rollout(&self, theta: &[f64], _z: &[f64], guard: &mut Guard<'_>) -> Result<RolloutRecord> {
        let c = &self.cfg;
        let mut active = theta.to_vec();
        let mut switch = None;
        let mut x = c.initial_state;
        let mut states = Vec::with_capacity(c.horizon + 1);
        let mut torques = Vec::with_capacity(c.horizon);
        let mut errors = Vec::with_capacity(c.horizon);
        let mut objective = 0.0;
        let mut margin = self.v0;

        let err = |x: [f64; 2], r: [f64; 2]| [wrap_angle(x[0] - r[0]), x[1] - r[1]];
        for k in 0..c.horizon {
            let e = err(x, self.reference[k]);
            if switch.is_none() {
                if let Some(t) = guard(k, &e) {
                    active.clone_from(&t);
                    switch = Some(BackupSwitch { step: k, theta: t });
                }
            }
            states.push(e.to_vec());
            let tau = disturbed_torque(
                self.nominal_torque(x),
                self.reference[k],
                x,
                &active,
                c.disturbance,
                c.torque_limit,
            );
            x = self.step(x, tau);
            if !(x[0].is_finite() && x[1].is_finite()) {
                return Err(Error::Environment(format!("pendulum state diverged at step {k}")));
            }
            torques.push(tau);
            let e = err(x, self.reference[k + 1]);
            let wq = weighted_sq(&c.reward.q_q, &e);
            errors.push(wq);
            objective -= weighted_sq(&c.reward.q_g, &e);
            if let Some(qp) = &c.reward.q_p {
                objective -= qp[1] * x[1] * x[1];
            }
            margin = margin.min(self.v0 - wq);
        }
        states.push(err(x, self.reference[c.horizon]).to_vec());
        Ok(RolloutRecord {
            states,
            torques,
            tracking_errors: errors,
            objective,
            constraints: vec![margin],
            min_margin: vec![margin],
            switch,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::recompute_constraint;

    fn plant() -> Pendulum {
        let cfg = PendulumConfig {
            reward: RewardSpec::identity(1.0),
            ..PendulumConfig::default()
        };
        Pendulum::new(cfg, None).unwrap()
    }

    #[test]
    fn upright_is_an_equilibrium() {
        assert_eq!(plant().step([0.0, 0.0], 0.0), [0.0, 0.0]);
    }

    #[test]
    fn dynamics_are_odd() {
        let p = plant();
        let mut a = [0.2, -0.4];
        let mut b = [-0.2, 0.4];
        for k in 0..50 {
            let u = 0.7 * (k as f64 * 0.3).sin();
            a = p.step(a, u);
            b = p.step(b, -u);
            assert_eq!(a[0], -b[0]);
            assert_eq!(a[1], -b[1]);
        }
    }

    #[test]
    fn single_step_matches_fine_integrator() {
        let p = plant();
        let got = p.step([0.1, 0.0], 0.0);
        // RK4 at dt/100 as an independent reference.
        let f = |s: [f64; 2]| [s[1], 15.0 * s[0].sin()];
        let h = 0.05 / 100.0;
        let mut s = [0.1f64, 0.0];
        for _ in 0..100 {
            let k1 = f(s);
            let k2 = f([s[0] + 0.5 * h * k1[0], s[1] + 0.5 * h * k1[1]]);
            let k3 = f([s[0] + 0.5 * h * k2[0], s[1] + 0.5 * h * k2[1]]);
            let k4 = f([s[0] + h * k3[0], s[1] + h * k3[1]]);
            s[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
            s[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
        }
        assert!((got[0] - s[0]).abs() < 1e-3, "{got:?} vs {s:?}");
    }

    #[test]
    fn free_swing_conserves_energy() {
        let p = plant();
        let energy = |x: [f64; 2]| x[1] * x[1] / 6.0 + 5.0 * x[0].cos();
        let mut x = [PI - 0.5, 0.0];
        let e0 = energy(x);
        for _ in 0..200 {
            x = p.step(x, 0.0);
            assert!((energy(x) - e0).abs() <= 0.01 * e0.abs());
        }
    }

    #[test]
    fn torque_rules() {
        assert_eq!(disturbed_torque(0.4, [0.1, 0.2], [0.3, -0.1], &[0.0, 0.0], [0.0, 0.0], 2.0), 0.4);
        assert_eq!(disturbed_torque(0.4, [0.1, 0.0], [0.1, 0.0], &[5.0, 7.0], [3.0, 1.0], 2.0), 0.4);
        assert_eq!(disturbed_torque(0.4, [0.1, 0.0], [0.3, -0.2], &[3.0, 1.0], [3.0, 1.0], 2.0), 0.4);
        assert_eq!(disturbed_torque(5.0, [0.0; 2], [0.0; 2], &[0.0, 0.0], [0.0, 0.0], 2.0), 2.0);
    }

    #[test]
    fn cancelling_gains_reproduce_the_reference() {
        let p = plant();
        let rec = p.rollout_unguarded(&p.cfg.disturbance.clone(), &[]).unwrap();
        for e in &rec.states {
            assert!(e[0].abs() < 1e-6 && e[1].abs() < 1e-6);
        }
        assert!(rec.objective.abs() < 1e-10);
    }

    #[test]
    fn default_disturbance_destabilizes_the_nominal_loop() {
        let p = plant();
        let rec = p.rollout_unguarded(&[0.0, 0.0], &[]).unwrap();
        let worst = rec.tracking_errors.iter().copied().fold(0.0, f64::max);
        assert!(worst > 1.0, "{worst}");
        assert!(rec.states.last().unwrap()[0].abs() > 1.0);
    }

    #[test]
    fn guard_switches_once_and_record_is_consistent() {
        let p = plant();
        let mut calls = 0;
        let rec = p
            .rollout(&[0.0, 0.0], &[], &mut |k, _| {
                calls += 1;
                (k == 3).then(|| vec![6.0, 3.0])
            })
            .unwrap();
        assert_eq!(calls, 4);
        assert_eq!(rec.switch.as_ref().unwrap().step, 3);
        assert_eq!(rec.states.len(), p.cfg.horizon + 1);
        assert_eq!(rec.torques.len(), p.cfg.horizon);
        assert!((recompute_constraint(&rec, p.v0) - rec.constraints[0]).abs() <= 1e-12);

        let quiet = p.rollout(&[2.0, 1.0], &[], &mut |_, _| None).unwrap();
        assert_eq!(quiet, p.rollout_unguarded(&[2.0, 1.0], &[]).unwrap());
    }

    #[test]
    fn v0_calibration_leaves_thirty_percent_margin() {
        let cfg = PendulumConfig::default();
        let p = Pendulum::new(cfg, Some(&[3.0, 1.5])).unwrap();
        let rec = p.rollout_unguarded(&[3.0, 1.5], &[]).unwrap();
        assert!((rec.constraints[0] - 0.3 * p.v0()).abs() < 1e-12);
        assert!(p.one_step_bound() > 0.0);
    }
}
