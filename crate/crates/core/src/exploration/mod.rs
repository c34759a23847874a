//! Local and global safe exploration.

pub mod boundary;
pub mod engine;
pub mod monitor;

pub use boundary::{
    boundary_condition, update_fail_sets, Backup, BackupSet, BoundaryDecision, BoundaryMode, BoundaryParams,
    FailEntry, FailState, GaussianBoundary,
};
pub use engine::{
    Algorithm, ContextSpec, ContextState, ContextSummary, Engine, EngineConfig, EpisodeOutcome, EpisodeRecord,
    FixedSchedule, Phase, RunOutcome, Schedule, SearchSpace,
};
pub use monitor::InvariantReport;
