//! Multi-seed sweeps and output files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::exploration::{
    Algorithm, ContextSummary, Engine, EngineConfig, EpisodeRecord, InvariantReport, RunOutcome,
};
use crate::metrics::{aggregate, normalize_runs, write_aggregate_csv, AggregateRow, RunMetrics};

/// A run that stopped on an error, with the episodes completed before it.
#[derive(Debug)]
pub struct RunFailure {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub error: Error,
    pub partial: Vec<EpisodeRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub wall_time_s: f64,
    pub violations: usize,
    pub contexts: Vec<ContextSummary>,
    pub invariants: InvariantReport,
}

#[derive(Debug, Default)]
pub struct Sweep {
    pub outcomes: Vec<RunOutcome>,
    pub metrics: Vec<RunMetrics>,
    pub summaries: Vec<RunSummary>,
    pub failures: Vec<RunFailure>,
}

impl Sweep {
    pub fn aggregate(&self, algorithm: Algorithm) -> Vec<AggregateRow> {
        let runs: Vec<&RunMetrics> = self.metrics.iter().filter(|m| m.algorithm == algorithm).collect();
        aggregate(&runs)
    }

    pub fn outcome(&self, algorithm: Algorithm, seed: u64) -> Option<&RunOutcome> {
        self.outcomes.iter().find(|o| o.algorithm == algorithm && o.seed == seed)
    }
}

/// Runs one `(algorithm, seed)` pair episode by episode.
pub fn run_single(cfg: &ExperimentConfig, algorithm: Algorithm, seed: u64) -> std::result::Result<(RunOutcome, f64), RunFailure> {
    let fail = |error, partial| RunFailure {
        algorithm,
        seed,
        error,
        partial,
    };
    let start = Instant::now();
    let env = cfg.build_environment().map_err(|e| fail(e, Vec::new()))?;
    let ecfg = cfg.engine_config(algorithm, seed, env.as_dyn()).map_err(|e| fail(e, Vec::new()))?;
    let out = run_engine(ecfg, env.as_dyn()).map_err(|(e, partial)| fail(e, partial))?;
    Ok((out, start.elapsed().as_secs_f64()))
}

/// Like [`Engine::run`], but hands back the completed episodes on failure.
pub fn run_engine(
    cfg: EngineConfig,
    env: &dyn Environment,
) -> std::result::Result<RunOutcome, (Error, Vec<EpisodeRecord>)> {
    let plan = cfg.plan.clone();
    let mut engine = Engine::new(cfg, env).map_err(|e| (e, Vec::new()))?;
    for (slot, &c) in plan.iter().enumerate() {
        if let Err(e) = engine.episode(slot, c) {
            return Err((e, engine.records().to_vec()));
        }
    }
    Ok(engine.finish())
}

/// Runs every `(algorithm, seed)` pair concurrently, then normalizes the
/// best-guess curves over the whole sweep.
pub fn run_sweep(cfg: &ExperimentConfig, algorithms: &[Algorithm], seeds: &[u64]) -> Sweep {
    let jobs: Vec<(Algorithm, u64)> = algorithms
        .iter()
        .flat_map(|a| seeds.iter().map(move |s| (*a, *s)))
        .collect();
    let results: Vec<_> = jobs.par_iter().map(|&(a, s)| run_single(cfg, a, s)).collect();
    let mut sweep = Sweep::default();
    for r in results {
        match r {
            Ok((out, wall)) => {
                sweep.summaries.push(RunSummary {
                    algorithm: out.algorithm,
                    seed: out.seed,
                    wall_time_s: wall,
                    violations: out.violations,
                    contexts: out.contexts.clone(),
                    invariants: out.invariants.clone(),
                });
                sweep.metrics.push(RunMetrics::from_outcome(&out));
                sweep.outcomes.push(out);
            }
            Err(f) => sweep.failures.push(f),
        }
    }
    normalize_runs(&mut sweep.metrics);
    sweep
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_jsonl(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes per-run CSV and JSONL logs, one aggregate CSV per algorithm and
/// `summary.json`. Partial logs of failed runs are kept as `*.partial.jsonl`.
pub fn write_outputs(sweep: &Sweep, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (m, out) in sweep.metrics.iter().zip(&sweep.outcomes) {
        let stem = format!("{}_seed{}", m.algorithm, m.seed);
        let mut w = create(&dir.join(format!("{stem}.csv")))?;
        m.write_csv(&mut w)?;
        w.flush()?;
        write_jsonl(&dir.join(format!("{stem}.jsonl")), &out.records)?;
    }
    for f in &sweep.failures {
        write_jsonl(&dir.join(format!("{}_seed{}.partial.jsonl", f.algorithm, f.seed)), &f.partial)?;
    }
    let mut algorithms: Vec<Algorithm> = sweep.metrics.iter().map(|m| m.algorithm).collect();
    algorithms.dedup();
    for a in algorithms {
        let mut w = create(&dir.join(format!("{a}_aggregate.csv")))?;
        write_aggregate_csv(&sweep.aggregate(a), &mut w)?;
        w.flush()?;
    }
    #[derive(Serialize)]
    struct Failure {
        algorithm: Algorithm,
        seed: u64,
        error: String,
        completed_episodes: usize,
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        runs: &'a [RunSummary],
        failures: Vec<Failure>,
    }
    let summary = Summary {
        runs: &sweep.summaries,
        failures: sweep
            .failures
            .iter()
            .map(|f| Failure {
                algorithm: f.algorithm,
                seed: f.seed,
                error: f.error.to_string(),
                completed_episodes: f.partial.len(),
            })
            .collect(),
    };
    let mut w = create(&dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
