//! Per-episode metrics, sweep-wide normalization and seed aggregation.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exploration::{Algorithm, RunOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub context_id: String,
    pub phase: String,
    pub best_guess_objective: f64,
    pub normalized_objective: f64,
    pub violations_cum: usize,
    pub safe_set_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
}

impl RunMetrics {
    /// Rows with `normalized_objective` left at 0 until [`normalize_runs`].
    pub fn from_outcome(out: &RunOutcome) -> Self {
        Self {
            algorithm: out.algorithm,
            seed: out.seed,
            rows: out
                .records
                .iter()
                .map(|r| MetricsRow {
                    episode: r.episode,
                    context_id: r.context_id.clone(),
                    phase: r.phase.as_str().to_string(),
                    best_guess_objective: r.best_guess_objective,
                    normalized_objective: 0.0,
                    violations_cum: r.violations_cum,
                    safe_set_size: r.safe_set_size,
                })
                .collect(),
        }
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wr.serialize(row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Affine map onto `[0, 1]` by min and max; a flat input maps to all zeros.
pub fn normalize_curves(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = min_max(values.iter().copied());
    values.iter().map(|v| affine(*v, lo, hi)).collect()
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn affine(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

/// Normalizes best-guess objectives with the min and max over every run in
/// the sweep, separately per context since reward scales differ.
pub fn normalize_runs(runs: &mut [RunMetrics]) {
    let mut ranges: HashMap<String, (f64, f64)> = HashMap::new();
    for row in runs.iter().flat_map(|r| &r.rows) {
        let e = ranges
            .entry(row.context_id.clone())
            .or_insert((f64::INFINITY, f64::NEG_INFINITY));
        e.0 = e.0.min(row.best_guess_objective);
        e.1 = e.1.max(row.best_guess_objective);
    }
    for row in runs.iter_mut().flat_map(|r| &mut r.rows) {
        let (lo, hi) = ranges[&row.context_id];
        row.normalized_objective = affine(row.best_guess_objective, lo, hi);
    }
}

/// Sample mean and standard error `s/√n`; the error is 0 for a single value.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub episode: usize,
    pub context_id: String,
    pub runs: usize,
    pub best_guess_objective_mean: f64,
    pub best_guess_objective_stderr: f64,
    pub normalized_objective_mean: f64,
    pub normalized_objective_stderr: f64,
    pub violations_cum_mean: f64,
    pub violations_cum_stderr: f64,
    pub safe_set_size_mean: f64,
    pub safe_set_size_stderr: f64,
}

/// One row per episode index over runs of the same algorithm.
pub fn aggregate(runs: &[&RunMetrics]) -> Vec<AggregateRow> {
    let len = runs.iter().map(|r| r.rows.len()).max().unwrap_or(0);
    (0..len)
        .map(|k| {
            let rows: Vec<&MetricsRow> = runs.iter().filter_map(|r| r.rows.get(k)).collect();
            let col = |f: &dyn Fn(&MetricsRow) -> f64| mean_stderr(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (bm, bs) = col(&|r| r.best_guess_objective);
            let (nm, ns) = col(&|r| r.normalized_objective);
            let (vm, vs) = col(&|r| r.violations_cum as f64);
            let (sm, ss) = col(&|r| r.safe_set_size as f64);
            AggregateRow {
                episode: rows[0].episode,
                context_id: rows[0].context_id.clone(),
                runs: rows.len(),
                best_guess_objective_mean: bm,
                best_guess_objective_stderr: bs,
                normalized_objective_mean: nm,
                normalized_objective_stderr: ns,
                violations_cum_mean: vm,
                violations_cum_stderr: vs,
                safe_set_size_mean: sm,
                safe_set_size_stderr: ss,
            }
        })
        .collect()
}

pub fn write_aggregate_csv(rows: &[AggregateRow], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for row in rows {
        wr.serialize(row)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn affine_examples() {
        assert_eq!(normalize_curves(&[-10.0, -5.0, 0.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_curves(&[3.0, 3.0, 3.0]), vec![0.0; 3]);
    }

    #[test]
    fn stderr_of_ten_values() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        let (m, s) = mean_stderr(&xs);
        assert_eq!(m, 5.5);
        // sample std of 1..=10 is sqrt(55/6)
        assert!((s - (55.0f64 / 6.0).sqrt() / 10f64.sqrt()).abs() < 1e-14);
    }

    fn run(seed: u64, values: &[f64]) -> RunMetrics {
        RunMetrics {
            algorithm: Algorithm::SafeOpt,
            seed,
            rows: values
                .iter()
                .enumerate()
                .map(|(k, v)| MetricsRow {
                    episode: k,
                    context_id: "a".into(),
                    phase: "lse".into(),
                    best_guess_objective: *v,
                    normalized_objective: 0.0,
                    violations_cum: 0,
                    safe_set_size: k,
                })
                .collect(),
        }
    }

    #[test]
    fn sweep_normalization_and_aggregation() {
        let mut runs = vec![run(0, &[0.0, 2.0]), run(1, &[1.0, 4.0])];
        normalize_runs(&mut runs);
        assert_eq!(runs[0].rows[1].normalized_objective, 0.5);
        assert_eq!(runs[1].rows[1].normalized_objective, 1.0);
        let agg = aggregate(&runs.iter().collect::<Vec<_>>());
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[1].best_guess_objective_mean, 3.0);
        assert!((agg[1].best_guess_objective_stderr - 1.0).abs() < 1e-15);
        let mut buf = Vec::new();
        runs[0].write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "episode,context_id,phase,best_guess_objective,normalized_objective,violations_cum,safe_set_size\n"
        ));
    }

    proptest! {
        #[test]
        fn normalization_is_monotone_and_bounded(xs in prop::collection::vec(-1e6f64..1e6, 1..40)) {
            let n = normalize_curves(&xs);
            for (i, a) in xs.iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(&n[i]));
                for (j, b) in xs.iter().enumerate() {
                    if a < b { prop_assert!(n[i] <= n[j]); }
                }
            }
        }
    }
}
