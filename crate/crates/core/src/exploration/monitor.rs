use serde::{Deserialize, Serialize};

/// Counters for invariants checked inline during a run. All violation fields
/// stay at zero in a healthy run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub interval_updates: usize,
    pub nesting_violations: usize,
    pub interval_crossings: usize,
    pub safe_set_checks: usize,
    pub safe_set_shrinks: usize,
    pub certification_failures: usize,
    pub exclusion_violations: usize,
    /// LSE proposals outside the safe set at selection time.
    pub unsafe_selections: usize,
    /// GE steps that grew neither the safe set nor the fail set.
    pub stalled_global_steps: usize,
    pub empty_backup_checks: usize,
}

impl InvariantReport {
    pub fn violations(&self) -> usize {
        self.nesting_violations
            + self.safe_set_shrinks
            + self.certification_failures
            + self.exclusion_violations
            + self.unsafe_selections
            + self.stalled_global_steps
            + self.empty_backup_checks
    }

    pub fn merge(&mut self, o: &InvariantReport) {
        self.interval_updates += o.interval_updates;
        self.nesting_violations += o.nesting_violations;
        self.interval_crossings += o.interval_crossings;
        self.safe_set_checks += o.safe_set_checks;
        self.safe_set_shrinks += o.safe_set_shrinks;
        self.certification_failures += o.certification_failures;
        self.exclusion_violations += o.exclusion_violations;
        self.unsafe_selections += o.unsafe_selections;
        self.stalled_global_steps += o.stalled_global_steps;
        self.empty_backup_checks += o.empty_backup_checks;
    }
}
