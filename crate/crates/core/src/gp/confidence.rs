//! Running confidence intervals `C_n(θ, z, i)`, intersected across episodes.

use super::{InputPoint, SurrogateModel};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };
    /// Start interval for constraints of initial safe seeds.
    pub const NON_NEGATIVE: Interval = Interval {
        lower: 0.0,
        upper: f64::INFINITY,
    };

    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, other: &Interval) -> bool {
        self.lower <= other.lower && other.upper <= self.upper
    }

    /// Intersection; on an empty result collapses to the midpoint and reports
    /// the crossing.
    pub fn intersect(&self, other: &Interval) -> (Interval, bool) {
        let lower = self.lower.max(other.lower);
        let upper = self.upper.min(other.upper);
        if lower > upper {
            let mid = 0.5 * (lower + upper);
            (Interval::new(mid, mid), true)
        } else {
            (Interval::new(lower, upper), false)
        }
    }
}

/// Intervals for every tracked candidate of one context, candidate-major.
#[derive(Clone, Debug)]
pub struct ContextIntervals {
    num_outputs: usize,
    intervals: Vec<Interval>,
    seeded: Vec<bool>,
}

impl ContextIntervals {
    pub fn new(num_outputs: usize) -> Self {
        Self {
            num_outputs,
            intervals: Vec::new(),
            seeded: Vec::new(),
        }
    }

    /// Builds a context directly from per-candidate intervals (test fixtures,
    /// offline analysis).
    pub fn from_intervals(num_outputs: usize, per_candidate: Vec<Vec<Interval>>) -> Self {
        let mut ctx = Self::new(num_outputs);
        for iv in per_candidate {
            assert_eq!(iv.len(), num_outputs, "one interval per output");
            ctx.intervals.extend(iv);
            ctx.seeded.push(false);
        }
        ctx
    }

    pub fn num_outputs(&self) -> usize {
        self.num_outputs
    }

    pub fn num_constraints(&self) -> usize {
        self.num_outputs - 1
    }

    pub fn len(&self) -> usize {
        self.seeded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeded.is_empty()
    }

    /// Starts tracking a new candidate and returns its index.
    pub fn track(&mut self, seeded: bool) -> usize {
        self.intervals.push(Interval::UNBOUNDED);
        for _ in 1..self.num_outputs {
            self.intervals.push(if seeded {
                Interval::NON_NEGATIVE
            } else {
                Interval::UNBOUNDED
            });
        }
        self.seeded.push(seeded);
        self.seeded.len() - 1
    }

    /// Marks an already tracked candidate as an initial safe seed.
    pub fn mark_seed(&mut self, cand: usize) {
        self.seeded[cand] = true;
        self.restrict_constraints_non_negative(cand);
    }

    pub fn is_seed(&self, cand: usize) -> bool {
        self.seeded[cand]
    }

    #[inline]
    pub fn interval(&self, cand: usize, output: usize) -> Interval {
        self.intervals[cand * self.num_outputs + output]
    }

    #[inline]
    pub fn lower(&self, cand: usize, output: usize) -> f64 {
        self.intervals[cand * self.num_outputs + output].lower
    }

    #[inline]
    pub fn upper(&self, cand: usize, output: usize) -> f64 {
        self.intervals[cand * self.num_outputs + output].upper
    }

    #[inline]
    pub fn width(&self, cand: usize, output: usize) -> f64 {
        self.intervals[cand * self.num_outputs + output].width()
    }

    /// `max_i w(θ, i)` over all outputs.
    pub fn max_width(&self, cand: usize) -> f64 {
        (0..self.num_outputs)
            .map(|i| self.width(cand, i))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest constraint lower bound, `+∞` without constraints.
    pub fn min_constraint_lower(&self, cand: usize) -> f64 {
        (1..self.num_outputs)
            .map(|i| self.lower(cand, i))
            .fold(f64::INFINITY, f64::min)
    }

    /// `C(θ, i) ∩ [0, ∞]` for every constraint, applied after a successful
    /// global-exploration rollout.
    pub fn restrict_constraints_non_negative(&mut self, cand: usize) -> usize {
        let mut crossings = 0;
        for i in 1..self.num_outputs {
            let slot = &mut self.intervals[cand * self.num_outputs + i];
            let (next, crossed) = slot.intersect(&Interval::NON_NEGATIVE);
            *slot = next;
            crossings += usize::from(crossed);
        }
        crossings
    }

    fn intersect_slot(&mut self, cand: usize, output: usize, band: Interval) -> (bool, bool) {
        let slot = &mut self.intervals[cand * self.num_outputs + output];
        let old = *slot;
        let (next, crossed) = old.intersect(&band);
        *slot = next;
        (crossed, !old.contains(&next))
    }
}

/// Outcome counters of one confidence update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpdateReport {
    pub updated: usize,
    /// Intersections that came out empty and were collapsed to the midpoint.
    pub crossings: usize,
    /// Intervals that were not a subset of their predecessor afterwards.
    pub nesting_violations: usize,
}

impl std::ops::AddAssign for UpdateReport {
    fn add_assign(&mut self, rhs: Self) {
        self.updated += rhs.updated;
        self.crossings += rhs.crossings;
        self.nesting_violations += rhs.nesting_violations;
    }
}

/// Confidence intervals for all contexts with band multiplier `beta`.
#[derive(Clone, Debug)]
pub struct ConfidenceState {
    beta: f64,
    num_outputs: usize,
    contexts: Vec<ContextIntervals>,
    crossings: usize,
}

impl ConfidenceState {
    pub fn new(beta: f64, num_outputs: usize, num_contexts: usize) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::config("algorithm.beta", "beta must be positive"));
        }
        Ok(Self {
            beta,
            num_outputs,
            contexts: (0..num_contexts)
                .map(|_| ContextIntervals::new(num_outputs))
                .collect(),
            crossings: 0,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn num_outputs(&self) -> usize {
        self.num_outputs
    }

    /// Total crossings seen so far (calibration warnings).
    pub fn crossings(&self) -> usize {
        self.crossings
    }

    pub fn context(&self, ctx: usize) -> &ContextIntervals {
        &self.contexts[ctx]
    }

    pub fn context_mut(&mut self, ctx: usize) -> &mut ContextIntervals {
        &mut self.contexts[ctx]
    }

    /// `[μ − βσ, μ + βσ]`.
    pub fn band(&self, mean: f64, variance: f64) -> Interval {
        let half = self.beta * variance.max(0.0).sqrt();
        Interval::new(mean - half, mean + half)
    }

    /// `(l, u, w)` for a tracked candidate.
    pub fn bounds(&self, ctx: usize, cand: usize, output: usize) -> Result<(f64, f64, f64)> {
        let c = self
            .contexts
            .get(ctx)
            .filter(|c| cand < c.len() && output < self.num_outputs)
            .ok_or(Error::Lookup {
                context: ctx,
                candidate: cand,
            })?;
        let iv = c.interval(cand, output);
        Ok((iv.lower, iv.upper, iv.width()))
    }

    /// Intersects every tracked candidate of `ctx` with the current posterior
    /// band; `points[j]` is the parameter vector of candidate `j`.
    pub fn update(
        &mut self,
        model: &SurrogateModel,
        ctx: usize,
        z: &[f64],
        points: &[Vec<f64>],
    ) -> UpdateReport {
        let tracked = self.contexts[ctx].len();
        debug_assert!(points.len() >= tracked);
        let queries: Vec<InputPoint> = points[..tracked]
            .iter()
            .map(|t| InputPoint::new(t.clone(), z.to_vec()))
            .collect();
        let pred = model.predict(&queries);
        let mut report = UpdateReport::default();
        for cand in 0..tracked {
            for i in 0..self.num_outputs {
                let band = self.band(pred.mean[(cand, i)], pred.variance[(cand, i)]);
                let (crossed, broke_nesting) = self.contexts[ctx].intersect_slot(cand, i, band);
                report.updated += 1;
                report.crossings += usize::from(crossed);
                report.nesting_violations += usize::from(broke_nesting);
            }
        }
        if report.crossings > 0 {
            log::warn!(
                "{} confidence intervals crossed in context {ctx}; beta may be too small",
                report.crossings
            );
        }
        self.crossings += report.crossings;
        report
    }

    /// Applies the non-negativity restriction after a successful global step.
    pub fn restrict_constraints_non_negative(&mut self, ctx: usize, cand: usize) {
        let crossed = self.contexts[ctx].restrict_constraints_non_negative(cand);
        self.crossings += crossed;
    }
}
