use csbo::baselines::{run_baseline, BaselineKind};
use csbo::config::ExperimentConfig;
use csbo::exploration::{Algorithm, Engine, Phase};
use csbo::metrics::RunMetrics;
use csbo::presets;
use proptest::prelude::*;

const SMALL: &str = r#"
schema_version = 1
[domain]
mode = "grid"
lower = [0.0]
upper = [1.0]
resolution = [101]

[kernel]
noise_sigma = 0.001
theta = { family = "matern_nu_1_5", lengthscales = [0.15] }

[algorithm]
beta = 4.0
epsilon = 0.05
lipschitz_x = 1.0
xi = "auto"
boundary = { mode = "lipschitz" }
schedule = { mode = "convergence" }
episode_cap = 25

[environment]
kind = "benchmark"
observation_noise = 0.0
plant = { benchmark = "smooth_1d" }

[[contexts]]
id = "only"
seeds = [[0.5]]
lipschitz_theta = 2.0
"#;

#[test]
fn config_text_to_metrics_csv() {
    let cfg = ExperimentConfig::from_toml_str(SMALL).unwrap();
    assert_eq!(cfg.algorithm(None), Algorithm::GoSafeOpt);
    let env = cfg.build_environment().unwrap();
    let e = cfg.engine_config(Algorithm::SafeOpt, 3, env.as_dyn()).unwrap();
    let out = run_baseline(BaselineKind::SafeOpt, e, env.as_dyn()).unwrap();
    assert_eq!(out.records.len(), 25);
    assert_eq!(out.violations, 0);
    assert!(out.records.iter().all(|r| r.phase != Phase::Ge && !r.triggered));
    let mut buf = Vec::new();
    RunMetrics::from_outcome(&out).write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 26);
}

#[test]
fn gosafeopt_finds_the_smooth_optimum() {
    let cfg = ExperimentConfig::from_toml_str(SMALL).unwrap();
    let env = cfg.build_environment().unwrap();
    let e = cfg.engine_config(Algorithm::GoSafeOpt, 0, env.as_dyn()).unwrap();
    let out = Engine::new(e, env.as_dyn()).unwrap().run().unwrap();
    assert!(out.invariants.violations() == 0);
    let last = out.records.last().unwrap();
    assert!(last.best_guess_objective > 0.95, "{last:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Every safe-set member is truly safe and no rollout violates, for any
    /// run seed and any seed parameter inside the first island.
    #[test]
    fn safe_sets_only_hold_safe_parameters(run_seed in 0u64..1000, start in 8usize..60, global in any::<bool>()) {
        let mut cfg = presets::load("two_island").unwrap();
        cfg.algorithm.episode_cap = 60;
        let grid = cfg.search_space().unwrap();
        let csbo::exploration::SearchSpace::Grid(domain) = grid else { unreachable!() };
        cfg.contexts[0].seeds = vec![domain.point(start).to_vec()];
        let env = cfg.build_environment().unwrap();
        let algo = if global { Algorithm::GoSafeOpt } else { Algorithm::SafeOpt };
        let e = cfg.engine_config(algo, run_seed, env.as_dyn()).unwrap();
        let plan = e.plan.clone();
        let mut engine = Engine::new(e, env.as_dyn()).unwrap();
        for (slot, &c) in plan.iter().enumerate() {
            let r = engine.episode(slot, c).unwrap();
            prop_assert!(!r.violated, "episode {slot} violated at {:?}", r.theta);
        }
        let ctx = engine.context(0);
        for k in ctx.safe().members() {
            let q = env.as_dyn().rollout_unguarded(&ctx.points()[k], &[]).unwrap().constraints;
            prop_assert!(q.iter().all(|v| *v >= 0.0), "unsafe member {:?}", ctx.points()[k]);
        }
        prop_assert_eq!(engine.invariants().violations(), 0);
    }
}
