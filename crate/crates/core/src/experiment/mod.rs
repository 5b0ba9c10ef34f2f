//! Run orchestration: seeded training runs, the evaluation protocol,
//! metric aggregation, trace persistence, sweeps and diagnostics.

mod config;
mod diagnose;
mod evaluation;
mod summary;
mod sweep;
mod traces;
mod trainer;

pub use config::{
    EnsembleSettings, GuidanceSettings, Method, PomdpSettings, RunConfig, SacSettings,
    ScheduleSettings,
};
pub use diagnose::{diagnose_run, DiagnoseReport};
pub use evaluation::{evaluate, EvalRecord, PolicyCheckpoint};
pub use summary::{aggregate_seeds, DisagreementSummary, RunSummary, SeedAggregate};
pub use sweep::{aggregate_campaign, run_sweep, CampaignSummary, SweepMatrix};
pub use traces::{read_eval_csv, read_train_csv, EvalCsvRow, StepRow};
pub use trainer::{train_run, RunArtifacts, Trainer};
