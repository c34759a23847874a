//! Acquisition maximization: exact argmax over a finite pool, or particle swarm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pool member with the largest score; ties go to the lowest index.
pub fn grid_argmax(pool: &[usize], score: impl Fn(usize) -> f64) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for &k in pool {
        let s = score(k);
        let better = match best {
            None => true,
            Some((b, bk)) => s > b || (s == b && k < bk),
        };
        if better {
            best = Some((s, k));
        }
    }
    best.map(|(_, k)| k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwarmParams {
    #[serde(default = "one")]
    pub social: f64,
    #[serde(default = "one")]
    pub cognitive: f64,
    #[serde(default = "default_inertia")]
    pub inertia: f64,
    #[serde(default = "hundred")]
    pub iterations: usize,
    #[serde(default = "hundred")]
    pub restarts: usize,
    #[serde(default = "hundred")]
    pub particles: usize,
    /// Maximum speed per coordinate as a fraction of the box width.
    #[serde(default = "default_clamp")]
    pub velocity_clamp: f64,
    /// Rejection-sampling attempts per restart when drawing start positions.
    #[serde(default = "default_rejections")]
    pub max_rejections: usize,
}

fn one() -> f64 {
    1.0
}
fn default_inertia() -> f64 {
    0.9
}
fn hundred() -> usize {
    100
}
fn default_clamp() -> f64 {
    0.2
}
fn default_rejections() -> usize {
    1000
}

impl Default for SwarmParams {
    fn default() -> Self {
        Self {
            social: 1.0,
            cognitive: 1.0,
            inertia: 0.9,
            iterations: 100,
            restarts: 100,
            particles: 100,
            velocity_clamp: 0.2,
            max_rejections: 1000,
        }
    }
}

impl SwarmParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.restarts == 0 || self.particles == 0 {
            return Err(Error::config("swarm", "iterations, restarts and particles must be >= 1"));
        }
        if !(self.inertia > 0.0 && self.inertia <= 1.0) {
            return Err(Error::config("swarm.inertia", "inertia must lie in (0, 1]"));
        }
        if !(self.velocity_clamp > 0.0) || self.max_rejections == 0 {
            return Err(Error::config("swarm", "velocity_clamp and max_rejections must be positive"));
        }
        Ok(())
    }
}

/// Axis-aligned search box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() || lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::config("domain", "bounds need lower < upper in every coordinate"));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (d, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[d], self.upper[d]);
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.dim()).map(|d| rng.random_range(self.lower[d]..=self.upper[d])).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_value: f64,
}

/// Draws up to `count` box samples accepted by `accept`, restarting up to
/// `params.restarts` times after `params.max_rejections` consecutive misses.
/// An empty result means no acceptable point was found.
pub fn rejection_sample(
    bounds: &Bounds,
    count: usize,
    params: &SwarmParams,
    rng: &mut impl Rng,
    accept: impl Fn(&[f64]) -> bool,
) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..params.restarts {
        let mut misses = 0;
        while out.len() < count && misses < params.max_rejections {
            let x = bounds.sample(rng);
            if accept(&x) {
                out.push(x);
                misses = 0;
            } else {
                misses += 1;
            }
        }
        if !out.is_empty() {
            break;
        }
    }
    out
}

/// Standard global-best PSO. `score` evaluates a whole swarm at once; start
/// positions are drawn from `init_pool`. Returns the best position and value.
pub fn pso_maximize(
    score: &(dyn Fn(&[Vec<f64>]) -> Vec<f64> + Sync),
    init_pool: &[Vec<f64>],
    bounds: &Bounds,
    params: &SwarmParams,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    if init_pool.is_empty() {
        return Err(Error::Optimization("swarm has no feasible start position".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = bounds.dim();
    let vmax: Vec<f64> = (0..dim)
        .map(|d| params.velocity_clamp * (bounds.upper[d] - bounds.lower[d]))
        .collect();

    let mut positions: Vec<Vec<f64>> = (0..params.particles)
        .map(|p| {
            let k = if p < init_pool.len() { p } else { rng.random_range(0..init_pool.len()) };
            let mut x = init_pool[k].clone();
            bounds.clamp(&mut x);
            x
        })
        .collect();
    let values = score(&positions);
    let mut swarm: Vec<Particle> = positions
        .drain(..)
        .zip(values)
        .map(|(x, v)| Particle {
            velocity: vec![0.0; dim],
            best_position: x.clone(),
            best_value: v,
            position: x,
        })
        .collect();
    let mut gbest = 0;
    for (k, p) in swarm.iter().enumerate() {
        if p.best_value > swarm[gbest].best_value {
            gbest = k;
        }
    }
    let mut g_pos = swarm[gbest].best_position.clone();
    let mut g_val = swarm[gbest].best_value;

    for _ in 0..params.iterations {
        for p in &mut swarm {
            for d in 0..dim {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = params.inertia * p.velocity[d]
                    + params.cognitive * r1 * (p.best_position[d] - p.position[d])
                    + params.social * r2 * (g_pos[d] - p.position[d]);
                p.velocity[d] = v.clamp(-vmax[d], vmax[d]);
                p.position[d] = (p.position[d] + p.velocity[d]).clamp(bounds.lower[d], bounds.upper[d]);
            }
        }
        let current: Vec<Vec<f64>> = swarm.iter().map(|p| p.position.clone()).collect();
        let values = score(&current);
        for (p, v) in swarm.iter_mut().zip(values) {
            if v > p.best_value {
                p.best_value = v;
                p.best_position.clone_from(&p.position);
            }
            if v > g_val {
                g_val = v;
                g_pos.clone_from(&p.position);
            }
        }
    }
    Ok((g_pos, g_val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> Bounds {
        Bounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn grid_argmax_rules() {
        let s = [1.0, 3.0, 2.0];
        assert_eq!(grid_argmax(&[0, 1, 2], |k| s[k]), Some(1));
        assert_eq!(grid_argmax(&[2, 1, 0], |_| 0.5), Some(0));
        assert_eq!(grid_argmax(&[4], |_| 0.0), Some(4));
        assert_eq!(grid_argmax(&[], |_| 0.0), None);
    }

    #[test]
    fn stationary_swarm_stays_put() {
        let p = SwarmParams {
            particles: 10,
            ..SwarmParams::default()
        };
        let pool = vec![vec![0.25, -0.5]];
        let score = |xs: &[Vec<f64>]| xs.iter().map(|x| -(x[0] * x[0])).collect();
        let (x, _) = pso_maximize(&score, &pool, &unit_box(), &p, 1).unwrap();
        assert_eq!(x, vec![0.25, -0.5]);
    }

    #[test]
    fn finds_quadratic_peak() {
        let p = SwarmParams {
            particles: 50,
            ..SwarmParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = unit_box();
        let pool: Vec<Vec<f64>> = (0..50).map(|_| b.sample(&mut rng)).collect();
        let score = |xs: &[Vec<f64>]| {
            xs.iter()
                .map(|x| -((x[0] - 0.3).powi(2) + 2.0 * (x[1] + 0.2).powi(2)))
                .collect()
        };
        let (x, _) = pso_maximize(&score, &pool, &b, &p, 42).unwrap();
        assert!((x[0] - 0.3).abs() < 1e-2 && (x[1] + 0.2).abs() < 1e-2, "{x:?}");
    }

    #[test]
    fn flat_score_returns_a_start_position() {
        let p = SwarmParams {
            particles: 5,
            iterations: 20,
            ..SwarmParams::default()
        };
        let pool = vec![vec![0.1, 0.1], vec![0.4, -0.3]];
        let score = |xs: &[Vec<f64>]| vec![1.0; xs.len()];
        let (x, _) = pso_maximize(&score, &pool, &unit_box(), &p, 9).unwrap();
        assert!(pool.contains(&x));
    }

    #[test]
    fn deterministic_and_contained() {
        let p = SwarmParams {
            particles: 20,
            iterations: 30,
            ..SwarmParams::default()
        };
        let b = unit_box();
        let pool = vec![vec![0.9, 0.9], vec![-0.9, 0.0]];
        let score = |xs: &[Vec<f64>]| xs.iter().map(|x| x[0] + x[1]).collect();
        let a = pso_maximize(&score, &pool, &b, &p, 5).unwrap();
        let c = pso_maximize(&score, &pool, &b, &p, 5).unwrap();
        assert_eq!(a.0, c.0);
        assert!(b.contains(&a.0));
    }

    #[test]
    fn empty_pool_is_an_error_and_rejection_can_fail() {
        let p = SwarmParams {
            restarts: 2,
            max_rejections: 10,
            ..SwarmParams::default()
        };
        let score = |xs: &[Vec<f64>]| vec![0.0; xs.len()];
        assert!(matches!(
            pso_maximize(&score, &[], &unit_box(), &p, 0),
            Err(Error::Optimization(_))
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(rejection_sample(&unit_box(), 5, &p, &mut rng, |_| false).is_empty());
        let got = rejection_sample(&unit_box(), 5, &p, &mut rng, |x| x[0] > 0.0);
        assert!(!got.is_empty() && got.iter().all(|x| x[0] > 0.0));
    }
}
