//! Metrics for schema matching and for executed mappings, plus the
//! rules-per-prompt experiment.

pub mod chunk;
pub mod instance_gen;
pub mod method_table;
pub mod metrics;
pub mod mrpp;
pub mod overlap;

use thiserror::Error;

pub use chunk::{plan_chunks, plan_chunks_overlap_aware, ChunkGroup, ChunkPlan};
pub use instance_gen::generate_eval_instance;
pub use method_table::{method_table, MethodRow, MethodTable, SchemaPairCase, TableError};
pub use metrics::{accuracy_at_1, macro_metrics_at_k, metrics_at_k, top_k, Prf, K};
pub use mrpp::{gold_echo_backend, run_mrpp_experiment, Estimate, MrppConfig, MrppReport, MrppSummary};
pub use overlap::{join_overlap, join_queries, row_set_metrics, table_overlap, JoinQuery, OverlapScore, QueryScore};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("gold standard is empty")]
    EmptyGold,
    #[error("invalid k: {0}")]
    InvalidK(String),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("rules per prompt must be at least 1")]
    InvalidMrpp,
    #[error(transparent)]
    Prompt(#[from] crate::prompt::PromptError),
}
