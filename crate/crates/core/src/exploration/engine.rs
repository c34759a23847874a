//! The contextual episode loop shared by GoSafeOpt and the baselines.

use std::collections::HashMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::boundary::{boundary_condition, update_fail_sets, BackupSet, BoundaryParams, FailState};
use super::monitor::InvariantReport;
use crate::acquisition::{grid_argmax, pso_maximize, rejection_sample, Bounds, SwarmParams};
use crate::env::{Environment, RolloutRecord};
use crate::error::{Error, Result};
use crate::gp::{ConfidenceState, ContextIntervals, InputPoint, KernelSpec, SurrogateModel};
use crate::safe_sets::{distance, CandidateDomain, SafeSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[serde(rename = "gosafeopt")]
    GoSafeOpt,
    #[serde(rename = "safeopt")]
    SafeOpt,
    GpUcb,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gosafeopt" => Ok(Self::GoSafeOpt),
            "safeopt" => Ok(Self::SafeOpt),
            "gp_ucb" => Ok(Self::GpUcb),
            other => Err(Error::config("algo", format!("unknown algorithm `{other}`"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::GoSafeOpt => "gosafeopt",
            Self::SafeOpt => "safeopt",
            Self::GpUcb => "gp_ucb",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Lse,
    Ge,
    Ucb,
    /// The context had already terminated; nothing was evaluated.
    Done,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Lse => "lse",
            Phase::Ge => "ge",
            Phase::Ucb => "ucb",
            Phase::Done => "done",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedSchedule {
    pub n_l: usize,
    pub n_g: usize,
    pub n_d: usize,
    pub c: f64,
}

impl Default for FixedSchedule {
    fn default() -> Self {
        Self {
            n_l: 10,
            n_g: 5,
            n_d: 5,
            c: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    /// Switch to global exploration only once local exploration converged.
    Convergence,
    Fixed(FixedSchedule),
}

#[derive(Clone, Debug)]
pub enum SearchSpace {
    Grid(CandidateDomain),
    Swarm {
        bounds: Bounds,
        params: SwarmParams,
        /// Radius around fail-set members that global proposals avoid.
        exclusion_radius: f64,
    },
}

impl SearchSpace {
    pub fn dim(&self) -> usize {
        match self {
            SearchSpace::Grid(d) => d.dim(),
            SearchSpace::Swarm { bounds, .. } => bounds.dim(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextSpec {
    pub id: String,
    #[serde(default)]
    pub z: Vec<f64>,
    pub seeds: Vec<Vec<f64>>,
    pub lipschitz_theta: f64,
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub algorithm: Algorithm,
    pub space: SearchSpace,
    pub kernel: KernelSpec,
    /// Per-output kernel overrides; empty means all outputs share `kernel`.
    pub kernel_overrides: Vec<Option<KernelSpec>>,
    pub noise_sigma: f64,
    /// Standard deviation of the Gaussian noise added to every measurement.
    pub observation_noise: f64,
    pub beta: f64,
    pub beta_ucb: f64,
    pub epsilon: f64,
    pub boundary: BoundaryParams,
    pub schedule: Schedule,
    pub add_triggered_data: bool,
    pub contexts: Vec<ContextSpec>,
    /// Context index per episode slot.
    pub plan: Vec<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub context_id: String,
    pub context: usize,
    pub phase: Phase,
    pub theta: Option<Vec<f64>>,
    /// Noisy `[g, q_1, …]` as observed.
    pub measurement: Option<Vec<f64>>,
    pub triggered: bool,
    pub switch_step: Option<usize>,
    pub min_margin: Option<Vec<f64>>,
    pub violated: bool,
    pub added_to_model: bool,
    pub best_guess: Vec<f64>,
    pub best_guess_objective: f64,
    pub safe_set_size: usize,
    pub fail_set_size: usize,
    pub violations_cum: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextSummary {
    pub id: String,
    pub best_guess: Vec<f64>,
    pub best_guess_objective: f64,
    pub terminated_at: Option<usize>,
    pub safe_set_size: usize,
    pub evaluations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunOutcome {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub records: Vec<EpisodeRecord>,
    pub contexts: Vec<ContextSummary>,
    pub invariants: InvariantReport,
    pub violations: usize,
}

#[derive(Clone, Debug, Default)]
struct FixedState {
    in_global: bool,
    lse_steps: usize,
    ge_steps: usize,
    active_region: usize,
}

/// Everything the algorithm tracks for one context.
#[derive(Clone, Debug)]
pub struct ContextState {
    pub spec: ContextSpec,
    points: Vec<Vec<f64>>,
    seeds: Vec<usize>,
    safe: SafeSet,
    expanders: Vec<usize>,
    maximizers: Vec<usize>,
    backups: BackupSet,
    fail: FailState,
    /// Candidates whose measurements conditioned the model.
    dataset: Vec<usize>,
    evaluations: usize,
    last_safe_size: usize,
    terminated_at: Option<usize>,
    fixed: FixedState,
    objective_cache: HashMap<usize, f64>,
}

impl ContextState {
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
    pub fn seeds(&self) -> &[usize] {
        &self.seeds
    }
    pub fn safe(&self) -> &SafeSet {
        &self.safe
    }
    pub fn expanders(&self) -> &[usize] {
        &self.expanders
    }
    pub fn maximizers(&self) -> &[usize] {
        &self.maximizers
    }
    pub fn backups(&self) -> &BackupSet {
        &self.backups
    }
    pub fn fail(&self) -> &FailState {
        &self.fail
    }
    pub fn dataset(&self) -> &[usize] {
        &self.dataset
    }
    pub fn terminated(&self) -> bool {
        self.terminated_at.is_some()
    }

    /// `G ∪ M` in ascending order.
    pub fn lse_pool(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.expanders.iter().chain(&self.maximizers).copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Which parameter to evaluate next.
#[derive(Clone, Debug, PartialEq)]
enum Target {
    Index(usize),
    Point(Vec<f64>),
}

/// Result of one evaluated episode.
#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub theta: Vec<f64>,
    pub context: usize,
    pub measurement: Vec<f64>,
    pub rollout: RolloutRecord,
    pub triggered: bool,
    pub phase: Phase,
    pub added_to_model: bool,
}

pub struct Engine<'a> {
    cfg: EngineConfig,
    env: &'a dyn Environment,
    model: SurrogateModel,
    confidence: ConfidenceState,
    contexts: Vec<ContextState>,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    invariants: InvariantReport,
    records: Vec<EpisodeRecord>,
    violations: usize,
}

impl<'a> Engine<'a> {
    pub fn new(cfg: EngineConfig, env: &'a dyn Environment) -> Result<Self> {
        let c = env.num_constraints();
        let theta_dim = env.theta_dim();
        let context_dim = env.context_dim();
        if cfg.space.dim() != theta_dim {
            return Err(Error::Dimension {
                expected: theta_dim,
                actual: cfg.space.dim(),
                context: "search space",
            });
        }
        if cfg.contexts.is_empty() {
            return Err(Error::config("contexts", "at least one context is required"));
        }
        if cfg.algorithm != Algorithm::GpUcb && c == 0 {
            return Err(Error::config("environment", "safe algorithms need at least one constraint"));
        }
        if !(cfg.epsilon > 0.0) || !(cfg.beta_ucb > 0.0) || !(cfg.observation_noise >= 0.0) {
            return Err(Error::config("algorithm", "epsilon, beta_ucb must be positive and noise non-negative"));
        }
        cfg.boundary.validate()?;
        if let Some(bad) = cfg.plan.iter().find(|k| **k >= cfg.contexts.len()) {
            return Err(Error::config("schedule", format!("context index {bad} out of range")));
        }
        if let Schedule::Fixed(f) = cfg.schedule {
            if f.n_l == 0 || f.n_g == 0 || f.n_d == 0 || f.n_d > f.n_l {
                return Err(Error::config("algorithm.schedule", "need n_l, n_g >= 1 and 1 <= n_d <= n_l"));
            }
        }

        let overrides = if cfg.kernel_overrides.is_empty() {
            vec![None; c + 1]
        } else if cfg.kernel_overrides.len() == c + 1 {
            cfg.kernel_overrides.clone()
        } else {
            return Err(Error::config(
                "kernel.overrides",
                format!("expected {} entries, got {}", c + 1, cfg.kernel_overrides.len()),
            ));
        };
        let model = SurrogateModel::with_overrides(cfg.kernel.clone(), overrides, cfg.noise_sigma, theta_dim, context_dim)?;
        let mut confidence = ConfidenceState::new(cfg.beta, c + 1, cfg.contexts.len())?;

        let mut contexts = Vec::with_capacity(cfg.contexts.len());
        for (ci, spec) in cfg.contexts.iter().enumerate() {
            let field = format!("contexts[{ci}]");
            if spec.z.len() != context_dim {
                return Err(Error::config(
                    format!("{field}.z"),
                    format!("expected {context_dim} coordinates, got {}", spec.z.len()),
                ));
            }
            if cfg.algorithm != Algorithm::GpUcb && !(spec.lipschitz_theta.is_finite() && spec.lipschitz_theta > 0.0) {
                return Err(Error::config(format!("{field}.lipschitz_theta"), "must be positive"));
            }
            if spec.seeds.is_empty() && cfg.algorithm != Algorithm::GpUcb {
                return Err(Error::config(
                    format!("{field}.seeds"),
                    "initial safe set is empty; at least one known safe parameter is required",
                ));
            }
            for s in &spec.seeds {
                if s.len() != theta_dim {
                    return Err(Error::config(format!("{field}.seeds"), "seed dimension mismatch"));
                }
            }
            let (points, seeds) = match &cfg.space {
                SearchSpace::Grid(domain) => {
                    let mut seeds = Vec::new();
                    for s in &spec.seeds {
                        let k = domain.nearest(s);
                        let scale = s.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                        if distance(domain.point(k), s) > 1e-9 * scale {
                            return Err(Error::config(
                                format!("{field}.seeds"),
                                format!("seed {s:?} is not a grid point"),
                            ));
                        }
                        seeds.push(k);
                    }
                    (domain.points().to_vec(), seeds)
                }
                SearchSpace::Swarm { bounds, .. } => {
                    if let Some(s) = spec.seeds.iter().find(|s| !bounds.contains(s)) {
                        return Err(Error::config(format!("{field}.seeds"), format!("seed {s:?} outside bounds")));
                    }
                    (spec.seeds.clone(), (0..spec.seeds.len()).collect())
                }
            };
            let ctx_ci = confidence.context_mut(ci);
            for k in 0..points.len() {
                ctx_ci.track(seeds.contains(&k));
            }
            let safe = if seeds.is_empty() {
                SafeSet::from_seeds(points.len().max(1), &[0])?
            } else {
                SafeSet::from_seeds(points.len(), &seeds)?
            };
            let mut backups = BackupSet::new();
            for &s in &seeds {
                backups.push(s, env.initial_state());
            }
            contexts.push(ContextState {
                spec: spec.clone(),
                last_safe_size: safe.len(),
                points,
                seeds,
                safe,
                expanders: Vec::new(),
                maximizers: Vec::new(),
                backups,
                fail: FailState::new(),
                dataset: Vec::new(),
                evaluations: 0,
                terminated_at: None,
                fixed: FixedState::default(),
                objective_cache: HashMap::new(),
            });
        }

        let noise = Normal::new(0.0, cfg.observation_noise).map_err(|e| Error::config("observation_noise", e.to_string()))?;
        let mut engine = Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            env,
            model,
            confidence,
            contexts,
            noise,
            invariants: InvariantReport::default(),
            records: Vec::new(),
            violations: 0,
        };
        engine.refresh(None);
        for ctx in &mut engine.contexts {
            ctx.last_safe_size = ctx.safe.len();
        }
        Ok(engine)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }
    pub fn model(&self) -> &SurrogateModel {
        &self.model
    }
    pub fn confidence(&self) -> &ConfidenceState {
        &self.confidence
    }
    pub fn context(&self, c: usize) -> &ContextState {
        &self.contexts[c]
    }
    pub fn invariants(&self) -> &InvariantReport {
        &self.invariants
    }
    pub fn records(&self) -> &[EpisodeRecord] {
        &self.records
    }
    pub fn violations(&self) -> usize {
        self.violations
    }

    fn is_safe_algo(&self) -> bool {
        self.cfg.algorithm != Algorithm::GpUcb
    }

    fn query(&self, c: usize, thetas: &[Vec<f64>]) -> Vec<InputPoint> {
        let z = &self.contexts[c].spec.z;
        thetas.iter().map(|t| InputPoint::new(t.clone(), z.clone())).collect()
    }

    /// Intersects every context's intervals with the current posterior and
    /// advances the safe sets by one recursion step.
    fn refresh(&mut self, restrict: Option<(usize, usize)>) {
        for c in 0..self.contexts.len() {
            let report = self.confidence.update(
                &self.model,
                c,
                &self.contexts[c].spec.z,
                &self.contexts[c].points,
            );
            self.invariants.interval_updates += report.updated;
            self.invariants.nesting_violations += report.nesting_violations;
            self.invariants.interval_crossings += report.crossings;
        }
        if let Some((c, k)) = restrict {
            self.confidence.restrict_constraints_non_negative(c, k);
        }
        if !self.is_safe_algo() {
            return;
        }
        for c in 0..self.contexts.len() {
            let ci = self.confidence.context(c);
            let ctx = &mut self.contexts[c];
            let before = ctx.safe.members();
            let lipschitz = ctx.spec.lipschitz_theta;
            ctx.safe.update(&ctx.points, ci, lipschitz);
            self.invariants.safe_set_checks += 1;
            if before.iter().any(|k| !ctx.safe.contains(*k)) || ctx.seeds.iter().any(|k| !ctx.safe.contains(*k)) {
                self.invariants.safe_set_shrinks += 1;
            }
            self.invariants.certification_failures += ctx.safe.uncertified(&ctx.points, ci, lipschitz).len();
            let safe = &ctx.safe;
            ctx.fail.remove_where(|e| safe.contains(e.cand));
            if matches!(self.cfg.space, SearchSpace::Grid(_)) {
                ctx.expanders = ctx.safe.expanders(&ctx.points, ci, lipschitz);
            }
            ctx.maximizers = ctx.safe.maximizers(ci);
        }
    }

    fn register(&mut self, c: usize, theta: Vec<f64>) -> usize {
        let ctx = &mut self.contexts[c];
        if let Some(k) = ctx.points.iter().position(|p| *p == theta) {
            return k;
        }
        ctx.points.push(theta);
        let n = ctx.points.len();
        ctx.safe.grow(n);
        self.confidence.context_mut(c).track(false);
        n - 1
    }

    fn measure(&mut self, rec: &RolloutRecord) -> Result<Vec<f64>> {
        let mut y = rec.measurements();
        if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Measurement { index, value });
        }
        if self.cfg.observation_noise > 0.0 {
            for v in &mut y {
                *v += self.noise.sample(&mut self.rng);
            }
        }
        Ok(y)
    }

    fn observe(&mut self, c: usize, k: usize, y: Vec<f64>) -> Result<()> {
        let theta = self.contexts[c].points[k].clone();
        let z = self.contexts[c].spec.z.clone();
        self.model.add_observation(InputPoint::new(theta, z), y)?;
        self.contexts[c].dataset.push(k);
        Ok(())
    }

    /// `∀i ∃ a ∈ S : l(a, i) − L‖θ − a‖ ≥ 0` for arbitrary `θ`.
    fn continuous_safe(ctx: &ContextState, ci: &ContextIntervals, members: &[usize], theta: &[f64]) -> bool {
        (1..ci.num_outputs()).all(|i| {
            members
                .iter()
                .any(|&a| ci.lower(a, i) - ctx.spec.lipschitz_theta * distance(&ctx.points[a], theta) >= 0.0)
        })
    }

    fn active_region(&self, c: usize) -> Option<usize> {
        match self.cfg.schedule {
            Schedule::Fixed(_) => Some(self.contexts[c].fixed.active_region),
            Schedule::Convergence => None,
        }
    }

    /// Best local proposal and its acquisition value.
    fn lse_proposal(&mut self, c: usize, region: Option<usize>) -> Option<(Target, f64)> {
        let ci = self.confidence.context(c);
        let ctx = &self.contexts[c];
        match &self.cfg.space {
            SearchSpace::Grid(_) => {
                let full = ctx.lse_pool();
                let restricted: Vec<usize> = match region {
                    Some(r) => full.iter().copied().filter(|k| ctx.safe.region(*k) == Some(r)).collect(),
                    None => Vec::new(),
                };
                let pool = if restricted.is_empty() { full } else { restricted };
                let k = grid_argmax(&pool, |k| ci.max_width(k))?;
                Some((Target::Index(k), ci.max_width(k)))
            }
            SearchSpace::Swarm { bounds, params, .. } => {
                let members = ctx.safe.members();
                let mut init: Vec<Vec<f64>> = members
                    .iter()
                    .filter(|k| region.is_none_or(|r| ctx.safe.region(**k) == Some(r)))
                    .map(|k| ctx.points[*k].clone())
                    .collect();
                if init.is_empty() {
                    init = members.iter().map(|k| ctx.points[*k].clone()).collect();
                }
                let best_l0 = members.iter().map(|&a| ci.lower(a, 0)).fold(f64::NEG_INFINITY, f64::max);
                let beta = self.cfg.beta;
                let lipschitz = ctx.spec.lipschitz_theta;
                let model = &self.model;
                let z = &ctx.spec.z;
                let score = |xs: &[Vec<f64>]| -> Vec<f64> {
                    let q: Vec<InputPoint> = xs.iter().map(|t| InputPoint::new(t.clone(), z.clone())).collect();
                    let p = model.predict(&q);
                    xs.iter()
                        .enumerate()
                        .map(|(r, x)| {
                            if !Self::continuous_safe(ctx, ci, &members, x) {
                                return f64::NEG_INFINITY;
                            }
                            let outs = ci.num_outputs();
                            let sd: Vec<f64> = (0..outs).map(|i| p.std_dev(r, i)).collect();
                            let u: Vec<f64> = (0..outs).map(|i| p.mean[(r, i)] + beta * sd[i]).collect();
                            let w = sd.iter().fold(f64::NEG_INFINITY, |m, s| m.max(2.0 * beta * s));
                            let maximizer = u[0] >= best_l0;
                            let reach = u[1..].iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)) / lipschitz;
                            let expander = reach > 0.0
                                && (0..x.len()).any(|d| {
                                    [-1.0, 1.0].iter().any(|s| {
                                        let mut probe = x.clone();
                                        probe[d] += s * reach;
                                        bounds.clamp(&mut probe);
                                        probe != *x && !Self::continuous_safe(ctx, ci, &members, &probe)
                                    })
                                });
                            if maximizer || expander {
                                w
                            } else {
                                f64::NEG_INFINITY
                            }
                        })
                        .collect()
                };
                let seed = self.rng.next_u64();
                let (theta, value) = pso_maximize(&score, &init, bounds, params, seed).ok()?;
                value.is_finite().then_some((Target::Point(theta), value))
            }
        }
    }

    /// Global-exploration candidates: indices on a grid, start samples otherwise.
    fn ge_pool(&mut self, c: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
        let ctx = &self.contexts[c];
        match &self.cfg.space {
            SearchSpace::Grid(_) => (
                (0..ctx.points.len())
                    .filter(|&k| !ctx.safe.contains(k) && !ctx.fail.excludes(k))
                    .collect(),
                Vec::new(),
            ),
            SearchSpace::Swarm {
                bounds,
                params,
                exclusion_radius,
            } => {
                let ci = self.confidence.context(c);
                let members = ctx.safe.members();
                let failed: Vec<&Vec<f64>> = ctx.fail.excluded().into_iter().map(|k| &ctx.points[k]).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(self.rng.next_u64());
                let samples = rejection_sample(bounds, params.particles, params, &mut rng, |x| {
                    !Self::continuous_safe(ctx, ci, &members, x)
                        && failed.iter().all(|f| distance(f, x) > *exclusion_radius)
                });
                (Vec::new(), samples)
            }
        }
    }

    fn ge_proposal(&mut self, c: usize, pool: (Vec<usize>, Vec<Vec<f64>>)) -> Option<Target> {
        let ci = self.confidence.context(c);
        match &self.cfg.space {
            SearchSpace::Grid(_) => grid_argmax(&pool.0, |k| ci.max_width(k)).map(Target::Index),
            SearchSpace::Swarm {
                bounds,
                params,
                exclusion_radius,
            } => {
                if pool.1.is_empty() {
                    return None;
                }
                let ctx = &self.contexts[c];
                let members = ctx.safe.members();
                let failed: Vec<&Vec<f64>> = ctx.fail.excluded().into_iter().map(|k| &ctx.points[k]).collect();
                let beta = self.cfg.beta;
                let model = &self.model;
                let z = &ctx.spec.z;
                let score = |xs: &[Vec<f64>]| -> Vec<f64> {
                    let q: Vec<InputPoint> = xs.iter().map(|t| InputPoint::new(t.clone(), z.clone())).collect();
                    let p = model.predict(&q);
                    xs.iter()
                        .enumerate()
                        .map(|(r, x)| {
                            if Self::continuous_safe(ctx, ci, &members, x)
                                || failed.iter().any(|f| distance(f, x) <= *exclusion_radius)
                            {
                                f64::NEG_INFINITY
                            } else {
                                (0..ci.num_outputs()).fold(f64::NEG_INFINITY, |m, i| m.max(2.0 * beta * p.std_dev(r, i)))
                            }
                        })
                        .collect()
                };
                let seed = self.rng.next_u64();
                let (theta, v) = pso_maximize(&score, &pool.1, bounds, params, seed).ok()?;
                v.is_finite().then_some(Target::Point(theta))
            }
        }
    }

    fn resolve(&mut self, c: usize, t: Target) -> usize {
        match t {
            Target::Index(k) => k,
            Target::Point(theta) => self.register(c, theta),
        }
    }

    /// `max_{G ∪ M} max_i w < ε` and the safe set did not grow since the last check.
    pub fn lse_converged(&self, c: usize, width: Option<f64>) -> bool {
        let ctx = &self.contexts[c];
        let stable = ctx.safe.len() == ctx.last_safe_size;
        width.is_none_or(|w| stable && w < self.cfg.epsilon)
    }

    /// Evaluates the safe parameter `k` and conditions the model on it.
    fn lse_step(&mut self, c: usize, target: Target) -> Result<EpisodeOutcome> {
        if let Target::Point(theta) = &target {
            let ci = self.confidence.context(c);
            let ctx = &self.contexts[c];
            if !Self::continuous_safe(ctx, ci, &ctx.safe.members(), theta) {
                self.invariants.unsafe_selections += 1;
            }
        }
        let k = self.resolve(c, target);
        if matches!(self.cfg.space, SearchSpace::Grid(_)) && !self.contexts[c].safe.contains(k) {
            self.invariants.unsafe_selections += 1;
        }
        let theta = self.contexts[c].points[k].clone();
        let rec = self.env.rollout_unguarded(&theta, &self.contexts[c].spec.z)?;
        let y = self.measure(&rec)?;
        self.contexts[c].backups.extend(k, &rec.states);
        self.observe(c, k, y.clone())?;
        self.refresh(None);
        Ok(EpisodeOutcome {
            theta,
            context: c,
            measurement: y,
            triggered: false,
            phase: Phase::Lse,
            added_to_model: true,
            rollout: rec,
        })
    }

    /// Evaluates a possibly unsafe parameter under the boundary-condition guard.
    fn ge_step(&mut self, c: usize, target: Target) -> Result<EpisodeOutcome> {
        let k = self.resolve(c, target);
        if self.contexts[c].fail.excludes(k) || self.contexts[c].safe.contains(k) {
            self.invariants.exclusion_violations += 1;
        }
        let grown_before = self.contexts[c].safe.len() + self.contexts[c].fail.len();
        let theta = self.contexts[c].points[k].clone();
        let mut fail_state: Option<Vec<f64>> = None;
        let rec = {
            let ctx = &self.contexts[c];
            let ci = self.confidence.context(c);
            let params = &self.cfg.boundary;
            let mut empty_checks = 0;
            let mut guard = |_: usize, x: &[f64]| -> Option<Vec<f64>> {
                if ctx.backups.is_empty() {
                    empty_checks += 1;
                }
                let d = boundary_condition(x, &ctx.backups, ci, params);
                if d.trigger {
                    fail_state = Some(x.to_vec());
                    d.backup.map(|b| ctx.points[ctx.backups.entries()[b].cand].clone())
                } else {
                    None
                }
            };
            let rec = self.env.rollout(&theta, &ctx.spec.z, &mut guard)?;
            self.invariants.empty_backup_checks += empty_checks;
            rec
        };
        let y = self.measure(&rec)?;
        let triggered = fail_state.is_some();
        let mut added = false;
        if let Some(x) = fail_state {
            self.contexts[c].fail.record(k, x);
            if self.cfg.add_triggered_data {
                self.observe(c, k, y.clone())?;
                self.refresh(None);
                added = true;
            }
        } else {
            self.contexts[c].backups.extend(k, &rec.states);
            let region = self.contexts[c].safe.add_experiment(k);
            if let Schedule::Fixed(_) = self.cfg.schedule {
                let f = &mut self.contexts[c].fixed;
                f.active_region = region;
                f.in_global = false;
                f.lse_steps = 0;
            }
            self.observe(c, k, y.clone())?;
            self.refresh(Some((c, k)));
            added = true;
        }
        if self.contexts[c].safe.len() + self.contexts[c].fail.len() <= grown_before {
            self.invariants.stalled_global_steps += 1;
        }
        Ok(EpisodeOutcome {
            theta,
            context: c,
            measurement: y,
            triggered,
            phase: Phase::Ge,
            added_to_model: added,
            rollout: rec,
        })
    }

    /// Unconstrained `argmax μ + √β_u σ` over the whole domain.
    fn gp_ucb_step(&mut self, c: usize) -> Result<EpisodeOutcome> {
        let sqrt_beta = self.cfg.beta_ucb.sqrt();
        let target = match &self.cfg.space {
            SearchSpace::Grid(domain) => {
                let q = self.query(c, domain.points());
                let p = self.model.predict(&q);
                let pool: Vec<usize> = (0..domain.len()).collect();
                Target::Index(
                    grid_argmax(&pool, |k| p.mean[(k, 0)] + sqrt_beta * p.std_dev(k, 0)).expect("domain is non-empty"),
                )
            }
            SearchSpace::Swarm { bounds, params, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.rng.next_u64());
                let init: Vec<Vec<f64>> = (0..params.particles).map(|_| bounds.sample(&mut rng)).collect();
                let model = &self.model;
                let z = &self.contexts[c].spec.z;
                let score = |xs: &[Vec<f64>]| -> Vec<f64> {
                    let q: Vec<InputPoint> = xs.iter().map(|t| InputPoint::new(t.clone(), z.clone())).collect();
                    let p = model.predict(&q);
                    (0..xs.len()).map(|r| p.mean[(r, 0)] + sqrt_beta * p.std_dev(r, 0)).collect()
                };
                let seed = rng.random();
                Target::Point(pso_maximize(&score, &init, bounds, params, seed)?.0)
            }
        };
        let k = self.resolve(c, target);
        let theta = self.contexts[c].points[k].clone();
        let rec = self.env.rollout_unguarded(&theta, &self.contexts[c].spec.z)?;
        let y = self.measure(&rec)?;
        self.observe(c, k, y.clone())?;
        self.refresh(None);
        Ok(EpisodeOutcome {
            theta,
            context: c,
            measurement: y,
            triggered: false,
            phase: Phase::Ucb,
            added_to_model: true,
            rollout: rec,
        })
    }

    /// Current best guess for context `c` as a candidate index.
    pub fn best_guess(&self, c: usize) -> usize {
        let ctx = &self.contexts[c];
        if self.is_safe_algo() {
            return ctx.safe.best_guess(self.confidence.context(c));
        }
        if ctx.dataset.is_empty() {
            return 0;
        }
        let mut evaluated = ctx.dataset.clone();
        evaluated.sort_unstable();
        evaluated.dedup();
        let thetas: Vec<Vec<f64>> = evaluated.iter().map(|k| ctx.points[*k].clone()).collect();
        let p = self.model.predict(&self.query(c, &thetas));
        let pos: Vec<usize> = (0..evaluated.len()).collect();
        evaluated[grid_argmax(&pos, |r| p.mean[(r, 0)]).expect("non-empty")]
    }

    fn best_guess_objective(&mut self, c: usize, k: usize) -> Result<f64> {
        if let Some(v) = self.contexts[c].objective_cache.get(&k) {
            return Ok(*v);
        }
        let ctx = &self.contexts[c];
        let v = self.env.true_objective(&ctx.points[k], &ctx.spec.z)?;
        self.contexts[c].objective_cache.insert(k, v);
        Ok(v)
    }

    /// Decides the phase for context `c` and runs it; `None` if terminated.
    fn safe_episode(&mut self, c: usize, slot: usize) -> Result<Option<EpisodeOutcome>> {
        if self.cfg.algorithm == Algorithm::GoSafeOpt {
            let ci = self.confidence.context(c);
            let ctx = &mut self.contexts[c];
            update_fail_sets(&mut ctx.fail, &ctx.backups, ci, &self.cfg.boundary);
        }
        let unrestricted = self.lse_proposal(c, None);
        let converged = self.lse_converged(c, unrestricted.as_ref().map(|p| p.1));
        self.contexts[c].last_safe_size = self.contexts[c].safe.len();

        if self.cfg.algorithm == Algorithm::SafeOpt {
            return match unrestricted {
                Some((t, _)) if !converged => self.lse_step(c, t).map(Some),
                _ => {
                    self.contexts[c].terminated_at = Some(slot);
                    Ok(None)
                }
            };
        }

        let pool = self.ge_pool(c);
        let ge_empty = pool.0.is_empty() && pool.1.is_empty();
        if converged && ge_empty {
            self.contexts[c].terminated_at = Some(slot);
            return Ok(None);
        }
        let global = match self.cfg.schedule {
            Schedule::Convergence => converged,
            Schedule::Fixed(f) => {
                let st = &mut self.contexts[c].fixed;
                if st.in_global && (st.ge_steps >= f.n_g || ge_empty) {
                    st.in_global = false;
                    st.lse_steps = 0;
                }
                if !st.in_global && !ge_empty && (converged || st.lse_steps >= f.n_l) {
                    st.in_global = true;
                    st.ge_steps = 0;
                }
                st.in_global || unrestricted.is_none()
            }
        };
        if global {
            let Some(t) = self.ge_proposal(c, pool) else {
                self.contexts[c].terminated_at = Some(slot);
                return Ok(None);
            };
            let out = self.ge_step(c, t)?;
            if out.triggered {
                self.contexts[c].fixed.ge_steps += 1;
            }
            return Ok(Some(out));
        }

        let target = match self.active_region(c) {
            Some(r) => self.lse_proposal(c, Some(r)).or(unrestricted).expect("local pool is non-empty"),
            None => unrestricted.expect("local pool is non-empty"),
        }
        .0;
        let out = self.lse_step(c, target)?;
        if let Schedule::Fixed(f) = self.cfg.schedule {
            self.contexts[c].fixed.lse_steps += 1;
            if self.contexts[c].fixed.lse_steps == f.n_d {
                self.apply_discard_rule(c, f.c);
            }
        }
        Ok(Some(out))
    }

    /// Moves local exploration to the best region if the active one lags.
    fn apply_discard_rule(&mut self, c: usize, factor: f64) {
        let ci = self.confidence.context(c);
        let ctx = &self.contexts[c];
        let best_in = |region: Option<usize>| {
            ctx.safe
                .members()
                .into_iter()
                .filter(|k| region.is_none_or(|r| ctx.safe.region(*k) == Some(r)))
                .map(|k| ci.lower(k, 0))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let active = ctx.fixed.active_region;
        if best_in(Some(active)) < factor * best_in(None) {
            let best = ctx.safe.best_guess(ci);
            let region = ctx.safe.region(best).unwrap_or(0);
            self.contexts[c].fixed.active_region = region;
        }
    }

    /// Runs one episode slot for context `c`.
    pub fn episode(&mut self, slot: usize, c: usize) -> Result<EpisodeRecord> {
        let outcome = if self.contexts[c].terminated() {
            None
        } else if self.cfg.algorithm == Algorithm::GpUcb {
            Some(self.gp_ucb_step(c)?)
        } else {
            self.safe_episode(c, slot)?
        };
        if let Some(o) = &outcome {
            self.contexts[c].evaluations += 1;
            if o.rollout.violated() {
                self.violations += 1;
            }
        }
        let best = self.best_guess(c);
        let best_obj = self.best_guess_objective(c, best)?;
        let ctx = &self.contexts[c];
        let record = EpisodeRecord {
            episode: slot,
            context_id: ctx.spec.id.clone(),
            context: c,
            phase: outcome.as_ref().map_or(Phase::Done, |o| o.phase),
            theta: outcome.as_ref().map(|o| o.theta.clone()),
            measurement: outcome.as_ref().map(|o| o.measurement.clone()),
            triggered: outcome.as_ref().is_some_and(|o| o.triggered),
            switch_step: outcome.as_ref().and_then(|o| o.rollout.switch.as_ref().map(|s| s.step)),
            min_margin: outcome.as_ref().map(|o| o.rollout.min_margin.clone()),
            violated: outcome.as_ref().is_some_and(|o| o.rollout.violated()),
            added_to_model: outcome.as_ref().is_some_and(|o| o.added_to_model),
            best_guess: ctx.points[best].clone(),
            best_guess_objective: best_obj,
            safe_set_size: if self.is_safe_algo() { ctx.safe.len() } else { 0 },
            fail_set_size: ctx.fail.len(),
            violations_cum: self.violations,
        };
        self.records.push(record.clone());
        Ok(record)
    }

    /// Runs the whole plan.
    pub fn run(mut self) -> Result<RunOutcome> {
        let plan = self.cfg.plan.clone();
        for (slot, &c) in plan.iter().enumerate() {
            self.episode(slot, c)?;
        }
        Ok(self.finish())
    }

    pub fn finish(mut self) -> RunOutcome {
        let mut contexts = Vec::with_capacity(self.contexts.len());
        for c in 0..self.contexts.len() {
            let best = self.best_guess(c);
            let obj = self.best_guess_objective(c, best).unwrap_or(f64::NAN);
            let ctx = &self.contexts[c];
            contexts.push(ContextSummary {
                id: ctx.spec.id.clone(),
                best_guess: ctx.points[best].clone(),
                best_guess_objective: obj,
                terminated_at: ctx.terminated_at,
                safe_set_size: if self.is_safe_algo() { ctx.safe.len() } else { 0 },
                evaluations: ctx.evaluations,
            });
        }
        RunOutcome {
            algorithm: self.cfg.algorithm,
            seed: self.cfg.seed,
            records: self.records,
            contexts,
            invariants: self.invariants,
            violations: self.violations,
        }
    }
}
