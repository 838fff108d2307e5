//! Choosing and building the model backend for a job.

use std::path::PathBuf;
use std::sync::Arc;

use mapsmith::eval::gold_echo_backend;
use mapsmith::gateway::{LlmBackend, MockBackend, OpenAiBackend, OpenAiConfig, Oracle, RecordingBackend};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::jobs::JobInputs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Replays recorded fixtures; unknown prompts fail.
    Mock,
    /// An OpenAI-compatible endpoint configured through the environment.
    Openai,
    /// Answers from the job's own gold files. Useful for trying the tool out.
    Demo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub kind: BackendKind,
    /// Fixture directory for `mock`.
    pub fixtures: Option<PathBuf>,
    /// Save every response here as a fixture.
    pub record: Option<PathBuf>,
}

impl BackendSpec {
    pub fn new(kind: BackendKind) -> Self {
        Self {
            kind,
            fixtures: None,
            record: None,
        }
    }

    pub fn build(&self, inputs: &JobInputs) -> Result<Arc<dyn LlmBackend>, ServiceError> {
        let fail = |e: &dyn std::fmt::Display| ServiceError::InvalidConfig(format!("backend: {e}"));
        let inner: Box<dyn LlmBackend> = match self.kind {
            BackendKind::Mock => {
                let dir = self
                    .fixtures
                    .as_ref()
                    .ok_or_else(|| ServiceError::InvalidConfig("the mock backend needs a fixture directory".into()))?;
                Box::new(MockBackend::from_dir(dir).map_err(|e| fail(&format!("{}: {e}", dir.display())))?)
            }
            BackendKind::Openai => Box::new(
                OpenAiConfig::from_env()
                    .and_then(OpenAiBackend::new)
                    .map_err(|e| fail(&e))?,
            ),
            BackendKind::Demo => Box::new(demo_backend(inputs)),
        };
        Ok(match &self.record {
            Some(dir) => Arc::new(RecordingBackend::new(inner, dir).map_err(|e| fail(&e))?),
            None => Arc::from(inner),
        })
    }
}

/// Match and rank prompts are answered from the gold alignment, mapping
/// prompts by echoing the gold mapping.
fn demo_backend(inputs: &JobInputs) -> MockBackend {
    let oracle = Oracle::exact(inputs.gold.clone().unwrap_or_default());
    let echo = inputs.gold_mapping.as_ref().map(gold_echo_backend);
    MockBackend::new().with_responder(move |req| {
        oracle
            .respond(req)
            .or_else(|| echo.as_ref().and_then(|e| e.complete(req).ok()))
    })
}
