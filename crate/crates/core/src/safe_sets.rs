//! Lipschitz safe sets, expanders and maximizers over a finite candidate list.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::ContextIntervals;

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The discretized parameter domain `Θ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateDomain {
    points: Vec<Vec<f64>>,
}

impl CandidateDomain {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::config("domain.points", "domain must be non-empty"));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::config("domain.points", "points need at least one coordinate"));
        }
        for (k, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::config(
                    "domain.points",
                    format!("point {k} has {} coordinates, expected {dim}", p.len()),
                ));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("domain.points", format!("point {k} is not finite")));
            }
        }
        let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("domain.points", "points must be pairwise distinct"));
        }
        Ok(Self { points })
    }

    /// Regular grid, first coordinate varying slowest.
    pub fn grid(lower: &[f64], upper: &[f64], resolution: &[usize]) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != resolution.len() || lower.is_empty() {
            return Err(Error::config(
                "domain",
                "lower, upper and resolution must have the same non-zero length",
            ));
        }
        for d in 0..lower.len() {
            if !(lower[d] < upper[d]) || resolution[d] == 0 {
                return Err(Error::config(
                    "domain",
                    format!("coordinate {d} needs lower < upper and resolution >= 1"),
                ));
            }
        }
        let axes: Vec<Vec<f64>> = (0..lower.len())
            .map(|d| {
                let r = resolution[d];
                if r == 1 {
                    vec![0.5 * (lower[d] + upper[d])]
                } else {
                    (0..r)
                        .map(|k| lower[d] + (upper[d] - lower[d]) * k as f64 / (r - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let mut points = vec![Vec::new()];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        Self::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Index of the closest point, lowest index on ties.
    pub fn nearest(&self, theta: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (k, p) in self.points.iter().enumerate() {
            let d = distance(p, theta);
            if d < best.0 {
                best = (d, k);
            }
        }
        best.1
    }
}

/// Why a candidate is in the safe set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Certificate {
    Seed,
    /// Validated by a clean global-exploration rollout.
    Experiment,
    /// One anchor per constraint, `anchors[i - 1]` for constraint `i`.
    Lipschitz { anchors: Vec<usize> },
}

/// `S_n(z)` over a growable candidate list, with certificates and region labels.
#[derive(Clone, Debug)]
pub struct SafeSet {
    member: Vec<bool>,
    order: Vec<usize>,
    certificates: Vec<Option<Certificate>>,
    regions: Vec<Option<usize>>,
    num_regions: usize,
}

impl SafeSet {
    /// Seeds form region 0.
    pub fn from_seeds(num_candidates: usize, seeds: &[usize]) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::config(
                "contexts.seeds",
                "initial safe set is empty; at least one known safe parameter is required",
            ));
        }
        let mut s = Self {
            member: vec![false; num_candidates],
            order: Vec::new(),
            certificates: vec![None; num_candidates],
            regions: vec![None; num_candidates],
            num_regions: 1,
        };
        for &k in seeds {
            if k >= num_candidates {
                return Err(Error::config("contexts.seeds", format!("seed index {k} out of range")));
            }
            s.insert(k, Certificate::Seed, 0);
        }
        Ok(s)
    }

    /// Registers new untracked candidates (continuous domains).
    pub fn grow(&mut self, num_candidates: usize) {
        self.member.resize(num_candidates, false);
        self.certificates.resize(num_candidates, None);
        self.regions.resize(num_candidates, None);
    }

    fn insert(&mut self, k: usize, cert: Certificate, region: usize) {
        if !self.member[k] {
            self.member[k] = true;
            self.order.push(k);
            self.certificates[k] = Some(cert);
            self.regions[k] = Some(region);
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn num_candidates(&self) -> usize {
        self.member.len()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.member.get(k).copied().unwrap_or(false)
    }

    /// Members in ascending index order.
    pub fn members(&self) -> Vec<usize> {
        let mut m = self.order.clone();
        m.sort_unstable();
        m
    }

    pub fn certificate(&self, k: usize) -> Option<&Certificate> {
        self.certificates[k].as_ref()
    }

    pub fn region(&self, k: usize) -> Option<usize> {
        self.regions[k]
    }

    pub fn num_regions(&self) -> usize {
        self.num_regions
    }

    /// Adds a parameter validated by experiment; it opens a new region.
    pub fn add_experiment(&mut self, k: usize) -> usize {
        let region = self.num_regions;
        if !self.member[k] {
            self.num_regions += 1;
            self.insert(k, Certificate::Experiment, region);
        }
        self.regions[k].expect("member has a region")
    }

    /// One recursion of the safe-set definition: every candidate covered for
    /// each constraint by some current member is added. Returns the additions
    /// in ascending order.
    pub fn update(&mut self, points: &[Vec<f64>], ci: &ContextIntervals, lipschitz: f64) -> Vec<usize> {
        let c = ci.num_constraints();
        let members = self.order.clone();
        let found: Vec<(usize, Vec<usize>)> = (0..points.len())
            .into_par_iter()
            .filter(|&k| !self.member[k])
            .filter_map(|k| {
                let mut anchors = Vec::with_capacity(c);
                for i in 1..=c {
                    let mut best: Option<(f64, usize)> = None;
                    for &a in &members {
                        let margin = ci.lower(a, i) - lipschitz * distance(&points[a], &points[k]);
                        if margin >= 0.0 && best.is_none_or(|(m, b)| margin > m || (margin == m && a < b)) {
                            best = Some((margin, a));
                        }
                    }
                    anchors.push(best?.1);
                }
                Some((k, anchors))
            })
            .collect();
        let mut added = Vec::with_capacity(found.len());
        for (k, anchors) in found {
            let region = self.regions[anchors[0]].expect("anchor is a member");
            self.insert(k, Certificate::Lipschitz { anchors }, region);
            added.push(k);
        }
        added
    }

    /// Members not yet certified by their recorded anchors (should be empty).
    pub fn uncertified(&self, points: &[Vec<f64>], ci: &ContextIntervals, lipschitz: f64) -> Vec<usize> {
        self.order
            .iter()
            .copied()
            .filter(|&k| match &self.certificates[k] {
                Some(Certificate::Lipschitz { anchors }) => anchors.iter().enumerate().any(|(j, &a)| {
                    !self.member[a] || ci.lower(a, j + 1) - lipschitz * distance(&points[a], &points[k]) < 0.0
                }),
                _ => false,
            })
            .collect()
    }

    /// `G_n`: members whose optimistic bound could certify a non-member.
    pub fn expanders(&self, points: &[Vec<f64>], ci: &ContextIntervals, lipschitz: f64) -> Vec<usize> {
        let outside: Vec<usize> = (0..points.len()).filter(|&k| !self.member[k]).collect();
        if outside.is_empty() {
            return Vec::new();
        }
        let c = ci.num_constraints();
        self.members()
            .into_par_iter()
            .filter(|&k| {
                let reach = (1..=c).map(|i| ci.upper(k, i)).fold(f64::NEG_INFINITY, f64::max);
                outside
                    .iter()
                    .any(|&o| reach - lipschitz * distance(&points[k], &points[o]) >= 0.0)
            })
            .collect()
    }

    /// `M_n`: members whose objective upper bound reaches the best lower bound.
    pub fn maximizers(&self, ci: &ContextIntervals) -> Vec<usize> {
        let best = self.order.iter().map(|&k| ci.lower(k, 0)).fold(f64::NEG_INFINITY, f64::max);
        self.members().into_iter().filter(|&k| ci.upper(k, 0) >= best).collect()
    }

    /// `argmax_S l(·, 0)`, lowest index on ties.
    pub fn best_guess(&self, ci: &ContextIntervals) -> usize {
        let mut best: Option<(f64, usize)> = None;
        for k in self.members() {
            let l = ci.lower(k, 0);
            if best.is_none_or(|(b, _)| l > b) {
                best = Some((l, k));
            }
        }
        best.expect("safe set is non-empty").1
    }
}

/// Fixed point of the ε-slacked reachability operator on a finite domain.
/// `q[k][i]` is the true value of constraint `i` at candidate `k`.
pub fn reachable_set(points: &[Vec<f64>], q: &[Vec<f64>], seed: &[usize], epsilon: f64, lipschitz: f64) -> Vec<bool> {
    let mut inside = vec![false; points.len()];
    for &s in seed {
        inside[s] = true;
    }
    loop {
        let current: Vec<usize> = (0..points.len()).filter(|&k| inside[k]).collect();
        let next: Vec<usize> = (0..points.len())
            .into_par_iter()
            .filter(|&k| !inside[k])
            .filter(|&k| {
                current.iter().any(|&a| {
                    q[a].iter()
                        .all(|qi| qi - epsilon - lipschitz * distance(&points[a], &points[k]) >= 0.0)
                })
            })
            .collect();
        if next.is_empty() {
            return inside;
        }
        for k in next {
            inside[k] = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::Interval;

    fn grid_1d(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|k| vec![k as f64 / (n - 1) as f64]).collect()
    }

    fn intervals(bounds: &[Vec<(f64, f64)>]) -> ContextIntervals {
        let per = bounds
            .iter()
            .map(|b| b.iter().map(|(l, u)| Interval::new(*l, *u)).collect())
            .collect();
        ContextIntervals::from_intervals(bounds[0].len(), per)
    }

    /// Literal `∩_i ∪_θ' {θ : l(θ', i) − L‖θ − θ'‖ ≥ 0}` over the previous set.
    fn brute_safe(points: &[Vec<f64>], ci: &ContextIntervals, prev: &[bool], l: f64) -> Vec<bool> {
        let n = points.len();
        let mut out = vec![true; n];
        for i in 1..ci.num_outputs() {
            let mut union = vec![false; n];
            for a in 0..n {
                if !prev[a] {
                    continue;
                }
                for k in 0..n {
                    if ci.lower(a, i) - l * distance(&points[a], &points[k]) >= 0.0 {
                        union[k] = true;
                    }
                }
            }
            for k in 0..n {
                out[k] &= union[k];
            }
        }
        (0..n).map(|k| out[k] || prev[k]).collect()
    }

    #[test]
    fn grid_builder_orders_first_axis_slowest() {
        let d = CandidateDomain::grid(&[0.0, 0.0], &[1.0, 2.0], &[2, 3]).unwrap();
        assert_eq!(d.len(), 6);
        assert_eq!(d.point(1), &[0.0, 1.0]);
        assert_eq!(d.point(3), &[1.0, 0.0]);
        assert!(CandidateDomain::new(vec![vec![0.0], vec![0.0]]).is_err());
        assert!(CandidateDomain::new(vec![]).is_err());
    }

    #[test]
    fn single_anchor_certifies_a_ball() {
        let pts = grid_1d(11);
        let mut b = vec![(-1.0, 1.0), (0.0, 0.0)];
        let mut rows = vec![b.clone(); 11];
        b[1] = (0.3, 0.5);
        rows[5] = b;
        let ci = intervals(&rows);
        let mut s = SafeSet::from_seeds(11, &[5]).unwrap();
        let added = s.update(&pts, &ci, 1.0);
        // 0.2 and 0.8 sit at distance 0.3 up to rounding of k/10.
        let expected: Vec<usize> = (0..11)
            .filter(|&k| k != 5 && 0.3 - (pts[k][0] - 0.5f64).abs() >= 0.0)
            .collect();
        assert_eq!(added, expected);
        assert!(added.contains(&3) && added.contains(&7));
        assert!(!added.contains(&1) && !added.contains(&9));
        assert!(s.uncertified(&pts, &ci, 1.0).is_empty());
    }

    #[test]
    fn zero_lower_bound_certifies_only_itself() {
        let pts = grid_1d(11);
        let ci = intervals(&vec![vec![(-1.0, 1.0), (0.0, 1.0)]; 11]);
        let mut s = SafeSet::from_seeds(11, &[4]).unwrap();
        assert!(s.update(&pts, &ci, 1.0).is_empty());
        assert_eq!(s.members(), vec![4]);
    }

    #[test]
    fn every_constraint_must_be_covered() {
        let pts = grid_1d(11);
        let mut rows = vec![vec![(0.0, 1.0), (-1.0, 0.0), (-1.0, 0.0)]; 11];
        rows[2] = vec![(0.0, 1.0), (0.5, 0.6), (0.0, 0.1)];
        rows[8] = vec![(0.0, 1.0), (0.0, 0.1), (0.5, 0.6)];
        let ci = intervals(&rows);
        let mut s = SafeSet::from_seeds(11, &[2, 8]).unwrap();
        s.update(&pts, &ci, 1.0);
        let prev: Vec<bool> = (0..11).map(|k| k == 2 || k == 8).collect();
        let oracle = brute_safe(&pts, &ci, &prev, 1.0);
        let got: Vec<bool> = (0..11).map(|k| s.contains(k)).collect();
        assert_eq!(got, oracle);
        // 0.5 is covered for constraint 1 by 0.2 and for constraint 2 by 0.8.
        assert!(s.contains(5));
        assert_eq!(s.certificate(5), Some(&Certificate::Lipschitz { anchors: vec![2, 8] }));
        assert!(!s.contains(0) && !s.contains(10));
    }

    #[test]
    fn expanders_follow_optimistic_reach() {
        let pts = grid_1d(11);
        let mut rows = vec![vec![(0.0, 1.0), (-1.0, 0.05)]; 11];
        rows[5] = vec![(0.0, 1.0), (0.0, 0.11)];
        rows[4] = vec![(0.0, 1.0), (0.0, 0.5)];
        let ci = intervals(&rows);
        let s = SafeSet::from_seeds(11, &[3, 4, 5]).unwrap();
        let g = s.expanders(&pts, &ci, 1.0);
        // 5 reaches 6 (0.11 ≥ 0.1), 4 reaches 0..=9, 3 reaches nothing (u = 0.05 < 0.1).
        assert_eq!(g, vec![4, 5]);

        let all = SafeSet::from_seeds(11, &(0..11).collect::<Vec<_>>()).unwrap();
        assert!(all.expanders(&pts, &ci, 1.0).is_empty());
    }

    #[test]
    fn maximizers_and_best_guess() {
        let ci = intervals(&[
            vec![(0.0, 1.0), (0.0, 1.0)],
            vec![(2.0, 3.0), (0.0, 1.0)],
            vec![(0.3, 2.0), (0.0, 1.0)],
        ]);
        let s = SafeSet::from_seeds(3, &[0, 1]).unwrap();
        assert_eq!(s.maximizers(&ci), vec![1]);
        assert_eq!(s.best_guess(&ci), 1);
        let one = SafeSet::from_seeds(3, &[2]).unwrap();
        assert_eq!(one.maximizers(&ci), vec![2]);

        let flat = intervals(&vec![vec![(0.5, 1.0), (0.0, 1.0)]; 3]);
        let s3 = SafeSet::from_seeds(3, &[2, 0, 1]).unwrap();
        assert_eq!(s3.maximizers(&flat), vec![0, 1, 2]);
        assert_eq!(s3.best_guess(&flat), 0);

        let ci3 = intervals(&[
            vec![(0.1, 1.0), (0.0, 1.0)],
            vec![(0.5, 1.0), (0.0, 1.0)],
            vec![(0.3, 1.0), (0.0, 1.0)],
        ]);
        assert_eq!(s3.best_guess(&ci3), 1);
    }

    #[test]
    fn empty_seed_is_rejected() {
        assert!(matches!(SafeSet::from_seeds(4, &[]), Err(Error::Config { .. })));
    }

    #[test]
    fn experiment_members_open_regions_and_lipschitz_members_inherit() {
        let pts = grid_1d(11);
        let mut rows = vec![vec![(0.0, 1.0), (-1.0, 0.0)]; 11];
        rows[9] = vec![(0.0, 1.0), (0.1, 0.2)];
        let ci = intervals(&rows);
        let mut s = SafeSet::from_seeds(11, &[0]).unwrap();
        assert_eq!(s.add_experiment(9), 1);
        s.update(&pts, &ci, 1.0);
        assert_eq!(s.region(10), Some(1));
        assert_eq!(s.region(8), Some(1));
        assert_eq!(s.region(0), Some(0));
    }

    #[test]
    fn reachability_respects_slack_and_islands() {
        let pts = grid_1d(21);
        let q: Vec<Vec<f64>> = pts.iter().map(|p| vec![(3.0 * std::f64::consts::PI * p[0]).sin()]).collect();
        let r = reachable_set(&pts, &q, &[3], 2.0, 1.0);
        assert_eq!(r.iter().filter(|v| **v).count(), 1);

        let r0 = reachable_set(&pts, &q, &[3], 0.0, 0.0);
        // With zero slope a single certifier reaches the whole domain.
        let got: Vec<usize> = (0..21).filter(|&k| r0[k]).collect();
        assert_eq!(got, (0..21).collect::<Vec<_>>());

        let r1 = reachable_set(&pts, &q, &[3], 0.05, 9.5);
        assert!(r1[3] && !r1[15]);
        let again = {
            let seed: Vec<usize> = (0..21).filter(|&k| r1[k]).collect();
            reachable_set(&pts, &q, &seed, 0.05, 9.5)
        };
        assert_eq!(again, r1);
    }
}
