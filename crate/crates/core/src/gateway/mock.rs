use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, CompletionResponse, GatewayError, LlmBackend};
use crate::seed::sha256_hex;

/// Collapses whitespace runs so whitespace-only template edits keep fixtures valid.
pub fn normalize_prompt(prompt: &str) -> String {
    prompt.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn prompt_digest(prompt: &str) -> String {
    sha256_hex(normalize_prompt(prompt).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub digest: String,
    /// Kept for humans reading the fixture; not used for lookup.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub response: CompletionResponse,
}

impl FixtureRecord {
    pub fn new(prompt: &str, response: CompletionResponse) -> Self {
        Self {
            digest: prompt_digest(prompt),
            prompt: Some(prompt.to_string()),
            response,
        }
    }
}

type Responder = Box<dyn Fn(&CompletionRequest) -> Option<CompletionResponse> + Send + Sync>;

/// Replays canned responses keyed by prompt digest. An optional responder
/// handles prompts without a fixture; otherwise they fail as unfixtured.
#[derive(Default)]
pub struct MockBackend {
    fixtures: BTreeMap<String, CompletionResponse>,
    responder: Option<Responder>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every `*.json` (one record or an array) and `*.jsonl` file in `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> io::Result<Self> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        paths.sort();
        let mut mock = Self::new();
        let bad = |p: &Path, e: serde_json::Error| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", p.display()));
        for p in paths {
            match p.extension().and_then(|e| e.to_str()) {
                Some("json") => {
                    let text = fs::read_to_string(&p)?;
                    let records: Vec<FixtureRecord> = if text.trim_start().starts_with('[') {
                        serde_json::from_str(&text).map_err(|e| bad(&p, e))?
                    } else {
                        vec![serde_json::from_str(&text).map_err(|e| bad(&p, e))?]
                    };
                    records.into_iter().for_each(|r| mock.insert(r));
                }
                Some("jsonl") => {
                    for line in fs::read_to_string(&p)?.lines().filter(|l| !l.trim().is_empty()) {
                        mock.insert(serde_json::from_str(line).map_err(|e| bad(&p, e))?);
                    }
                }
                _ => {}
            }
        }
        Ok(mock)
    }

    pub fn insert(&mut self, record: FixtureRecord) {
        self.fixtures.insert(record.digest, record.response);
    }

    pub fn with_fixture(mut self, prompt: &str, response: CompletionResponse) -> Self {
        self.insert(FixtureRecord::new(prompt, response));
        self
    }

    pub fn with_responder(
        mut self,
        f: impl Fn(&CompletionRequest) -> Option<CompletionResponse> + Send + Sync + 'static,
    ) -> Self {
        self.responder = Some(Box::new(f));
        self
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

impl LlmBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let digest = prompt_digest(&request.prompt);
        if let Some(r) = self.fixtures.get(&digest) {
            return Ok(r.clone());
        }
        self.responder
            .as_ref()
            .and_then(|f| f(request))
            .ok_or(GatewayError::Unfixtured { digest })
    }
}

/// Forwards to another backend and saves each response as a fixture file.
pub struct RecordingBackend<B> {
    inner: B,
    dir: PathBuf,
}

impl<B: LlmBackend> RecordingBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { inner, dir })
    }
}

impl<B: LlmBackend> LlmBackend for RecordingBackend<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let response = self.inner.complete(request)?;
        let record = FixtureRecord::new(&request.prompt, response.clone());
        let path = self.dir.join(format!("{}.json", record.digest));
        let text = serde_json::to_string_pretty(&record).expect("fixtures serialize");
        if let Err(e) = fs::write(&path, text) {
            tracing::error!(path = %path.display(), error = %e, "could not save fixture");
        }
        Ok(response)
    }
}
