use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use csbo::config::ExperimentConfig;
use csbo::env::{Benchmark, BenchmarkId, Environment, SyntheticPlant};
use csbo::exploration::Algorithm;
use csbo::harness::{run_sweep, write_outputs};
use csbo::safe_sets::{reachable_set, CandidateDomain};
use csbo::{presets, Error};

#[derive(Parser)]
#[command(name = "csbo", version, about = "Contextual safe Bayesian optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-seed sweep and write metrics.
    Run(RunArgs),
    /// Ground-truth oracles on the closed-form benchmarks.
    #[command(subcommand)]
    Oracle(Oracle),
    /// Parse and check a config file without running it.
    ValidateConfig { path: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Bundled config instead of a file.
    #[arg(long, value_parser = presets::NAMES)]
    preset: Option<String>,
    /// Comma-separated algorithms; defaults to the config's choice.
    #[arg(long, value_delimiter = ',')]
    algo: Vec<Algorithm>,
    /// Seeds as a list (`0,1,2`) or half-open range (`0..10`); defaults to the config's.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory; defaults to the config's `output_dir`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Oracle {
    /// ε-slacked reachable set of a benchmark's seed on its default grid.
    ReachableSet {
        #[arg(long)]
        benchmark: BenchmarkId,
        #[arg(long)]
        epsilon: f64,
        /// Lipschitz constant; defaults to the bundled preset's.
        #[arg(long)]
        lipschitz: Option<f64>,
        /// Context value, for contextual benchmarks.
        #[arg(long, value_delimiter = ',')]
        z: Vec<f64>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Dimension { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::Config(format!("configuration error in `--seeds`: cannot parse `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return if a < b { Ok((a..b).collect()) } else { Err(bad()) };
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config `{}`: {e}", path.display())))?;
    Ok(ExperimentConfig::from_toml_str(&text)?)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let cfg = match (&args.config, &args.preset) {
        (Some(p), _) => load(p)?,
        (None, Some(name)) => presets::load(name)?,
        (None, None) => unreachable!("clap enforces one of --config/--preset"),
    };
    let algorithms = if args.algo.is_empty() {
        vec![cfg.algorithm(None)]
    } else {
        args.algo.clone()
    };
    let seeds = match &args.seeds {
        Some(s) => parse_seeds(s)?,
        None if !cfg.seeds.is_empty() => cfg.seeds.clone(),
        None => return Err(Failure::Config("configuration error in `seeds`: no seeds given".into())),
    };
    // Surface config problems before spending time on runs.
    let env = cfg.build_environment()?;
    for a in &algorithms {
        let e = cfg.engine_config(*a, seeds[0], env.as_dyn())?;
        csbo::exploration::Engine::new(e, env.as_dyn())?;
    }
    let out = args
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    let sweep = run_sweep(&cfg, &algorithms, &seeds);
    write_outputs(&sweep, &out).map_err(|e| Failure::Runtime(e.to_string()))?;
    for s in &sweep.summaries {
        let best: Vec<String> = s
            .contexts
            .iter()
            .map(|c| format!("{}={:.6}", c.id, c.best_guess_objective))
            .collect();
        println!(
            "{} seed {}: violations {} best {} ({:.2}s)",
            s.algorithm,
            s.seed,
            s.violations,
            best.join(" "),
            s.wall_time_s
        );
    }
    if let Some(f) = sweep.failures.first() {
        return Err(Failure::Runtime(format!(
            "{} seed {} failed after {} episodes: {} (partial logs in {})",
            f.algorithm,
            f.seed,
            f.partial.len(),
            f.error,
            out.display()
        )));
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn oracle(cmd: Oracle) -> Result<(), Failure> {
    let Oracle::ReachableSet {
        benchmark,
        epsilon,
        lipschitz,
        z,
    } = cmd;
    let preset = match benchmark {
        BenchmarkId::TwoIsland => "two_island",
        BenchmarkId::ContextualQuadratic => "contextual_quadratic",
        BenchmarkId::Smooth1d => "smooth_1d",
    };
    let cfg = presets::load(preset)?;
    let bench = Benchmark::new(benchmark);
    if z.len() != bench.context_dim() {
        return Err(Failure::Config(format!(
            "configuration error in `--z`: expected {} values, got {}",
            bench.context_dim(),
            z.len()
        )));
    }
    let (lower, upper, resolution) = bench.default_grid();
    let domain = CandidateDomain::grid(&lower, &upper, &resolution)?;
    let plant = SyntheticPlant::new(benchmark);
    let q: Vec<Vec<f64>> = domain
        .points()
        .iter()
        .map(|t| plant.rollout_unguarded(t, &z).map(|r| r.constraints))
        .collect::<csbo::Result<_>>()?;
    let ctx = &cfg.contexts[0];
    let seeds: Vec<usize> = ctx.seeds.iter().map(|s| domain.nearest(s)).collect();
    let lipschitz = lipschitz.unwrap_or(ctx.lipschitz_theta);
    let reach = reachable_set(domain.points(), &q, &seeds, epsilon, lipschitz);
    let members: Vec<usize> = (0..domain.len()).filter(|&k| reach[k]).collect();
    let report = serde_json::json!({
        "benchmark": benchmark.to_string(),
        "epsilon": epsilon,
        "lipschitz": lipschitz,
        "z": z,
        "seeds": seeds,
        "size": members.len(),
        "indices": members,
        "points": members.iter().map(|&k| domain.point(k)).collect::<Vec<_>>(),
    });
    println!("{report}");
    Ok(())
}

fn validate(path: PathBuf) -> Result<(), Failure> {
    let cfg = load(&path)?;
    let env = cfg.build_environment()?;
    for a in [Algorithm::GoSafeOpt, Algorithm::SafeOpt, Algorithm::GpUcb] {
        let e = cfg.engine_config(a, 0, env.as_dyn())?;
        csbo::exploration::Engine::new(e, env.as_dyn())?;
    }
    println!(
        "ok: {} contexts, {} episodes, Ξ = {}",
        cfg.contexts.len(),
        cfg.plan().len(),
        env.as_dyn().one_step_bound()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Oracle(cmd) => oracle(cmd),
        Command::ValidateConfig { path } => validate(path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
