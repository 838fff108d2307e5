use std::sync::Arc;

use mapsmith::gateway::Gateway;
use tokio::sync::Semaphore;

use crate::backend::BackendSpec;
use crate::error::ServiceError;
use crate::jobs::{execute, JobConfig, JobInputs};
use crate::store::{Job, JobStore, TRANSCRIPT};

/// Runs one queued job to Done or Failed on the calling thread.
pub fn run_job(store: &JobStore, backend: &BackendSpec, id: &str, inputs: &JobInputs) -> Result<Job, ServiceError> {
    store.mark_running(id)?;
    let outcome = backend.build(inputs).and_then(|b| {
        let gateway = Gateway::new(b).with_transcript_file(store.job_dir(id).join(TRANSCRIPT))?;
        execute(inputs, &gateway)
    });
    match outcome {
        Ok(result) => store.complete(id, &result),
        Err(e) => {
            tracing::warn!(job = id, error = %e, "job failed");
            store.fail(id, &e.to_string())
        }
    }
}

/// Submits jobs and runs them in the background, at most `limit` at a time.
#[derive(Clone)]
pub struct Executor {
    pub store: Arc<JobStore>,
    pub backend: Arc<BackendSpec>,
    slots: Arc<Semaphore>,
}

impl Executor {
    pub fn new(store: Arc<JobStore>, backend: BackendSpec, limit: usize) -> Self {
        Self {
            store,
            backend: Arc::new(backend),
            slots: Arc::new(Semaphore::new(limit.max(1))),
        }
    }

    /// Persists the job and schedules it. A repeated request key returns the
    /// original job without running anything.
    pub fn submit(&self, config: JobConfig, request_key: Option<String>) -> Result<(Job, bool), ServiceError> {
        let (job, inputs) = self.store.submit(config, request_key)?;
        let Some(inputs) = inputs else {
            return Ok((job, false));
        };
        let this = self.clone();
        let id = job.id.clone();
        tokio::spawn(async move {
            let Ok(_permit) = this.slots.clone().acquire_owned().await else {
                return;
            };
            let store = this.store.clone();
            let backend = this.backend.clone();
            let res = tokio::task::spawn_blocking(move || run_job(&store, &backend, &id, &inputs)).await;
            if let Err(e) = res {
                tracing::error!(error = %e, "job task panicked");
            }
        });
        Ok((job, true))
    }
}
