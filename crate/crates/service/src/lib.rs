//! Job orchestration, review decisions, export, and the HTTP API around the
//! `mapsmith` library.

pub mod backend;
pub mod cli;
pub mod error;
pub mod executor;
pub mod export;
pub mod http;
pub mod jobs;
pub mod store;

pub use backend::{BackendKind, BackendSpec};
pub use error::ServiceError;
pub use executor::{run_job, Executor};
pub use export::{export_alignment, AlignmentExport, SkeletonRule};
pub use jobs::{execute, JobConfig, JobInputs, JobKind, JobResult};
pub use store::{Decision, DecisionInput, Job, JobState, JobStore, Verdict};
