//! Job persistence. Each job lives in its own directory:
//!
//! ```text
//! <root>/<id>/log.jsonl        state changes and decisions, one per line
//! <root>/<id>/config.json      submitted configuration
//! <root>/<id>/source.json      schema snapshots taken at submission
//! <root>/<id>/target.json
//! <root>/<id>/result.json      written once, before the Done record
//! <root>/<id>/transcript.jsonl model exchanges
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use mapsmith::gateway::{read_transcript, TranscriptEntry};
use mapsmith::matching::MatchResult;
use mapsmith::schema::{Correspondence, SchemaDef};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::export::{export_alignment, latest_verdicts, AlignmentExport};
use crate::jobs::{JobConfig, JobInputs, JobKind, JobResult};

const LOG: &str = "log.jsonl";
const RESULT: &str = "result.json";
pub const TRANSCRIPT: &str = "transcript.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    pub state: JobState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_key: Option<String>,
    pub config: JobConfig,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// File name of the result, present iff Done.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<String>,
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
    Edited { replacement: Correspondence },
}

/// A decision as submitted by a reviewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionInput {
    pub pair: Correspondence,
    #[serde(flatten)]
    pub verdict: Verdict,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub job_id: String,
    pub seq: u64,
    pub pair: Correspondence,
    #[serde(flatten)]
    pub verdict: Verdict,
    #[serde(default)]
    pub note: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogRecord {
    Created {
        at: DateTime<Utc>,
        id: String,
        request_key: Option<String>,
        config: JobConfig,
    },
    Running {
        at: DateTime<Utc>,
    },
    Done {
        at: DateTime<Utc>,
        result: String,
    },
    Failed {
        at: DateTime<Utc>,
        error: String,
    },
    Decision(Decision),
}

struct JobEntry {
    job: Job,
    decisions: Vec<Decision>,
    log: File,
}

impl JobEntry {
    fn append(&mut self, record: &LogRecord) -> Result<(), ServiceError> {
        let mut line = serde_json::to_string(record).expect("log records serialize");
        line.push('\n');
        self.log.write_all(line.as_bytes())?;
        self.log.sync_data()?;
        Ok(())
    }
}

/// All jobs under one directory. Writes to a job's log go through its own lock.
pub struct JobStore {
    root: PathBuf,
    jobs: Mutex<BTreeMap<String, Arc<Mutex<JobEntry>>>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn replay(dir: &Path) -> Result<(Job, Vec<Decision>), ServiceError> {
    let bad = |line: usize, e: &dyn std::fmt::Display| {
        ServiceError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{}:{line}: {e}", dir.join(LOG).display()),
        ))
    };
    let reader = BufReader::new(File::open(dir.join(LOG))?);
    let mut job: Option<Job> = None;
    let mut decisions = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            // A torn final line from a crash mid-write.
            Err(e) if e.is_eof() => break,
            Err(e) => return Err(bad(i + 1, &e)),
        };
        match (record, job.as_mut()) {
            (
                LogRecord::Created {
                    at,
                    id,
                    request_key,
                    config,
                },
                None,
            ) => {
                job = Some(Job {
                    id,
                    kind: config.kind(),
                    state: JobState::Queued,
                    request_key,
                    config,
                    created_at: at,
                    started_at: None,
                    finished_at: None,
                    error: None,
                    result: None,
                    transcript: TRANSCRIPT.into(),
                })
            }
            (LogRecord::Running { at }, Some(j)) => {
                j.state = JobState::Running;
                j.started_at = Some(at);
            }
            (LogRecord::Done { at, result }, Some(j)) => {
                j.state = JobState::Done;
                j.finished_at = Some(at);
                j.result = Some(result);
            }
            (LogRecord::Failed { at, error }, Some(j)) => {
                j.state = JobState::Failed;
                j.finished_at = Some(at);
                j.error = Some(error);
            }
            (LogRecord::Decision(d), Some(_)) => decisions.push(d),
            (_, _) => return Err(bad(i + 1, &"log does not start with a creation record")),
        }
    }
    let job = job.ok_or_else(|| bad(0, &"empty log"))?;
    Ok((job, decisions))
}

impl JobStore {
    /// Opens (or creates) a store. Jobs that were queued or running when the
    /// previous process stopped are marked failed; their transcripts stay.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mut jobs = BTreeMap::new();
        let mut dirs: Vec<PathBuf> = fs::read_dir(&root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(LOG).is_file())
            .collect();
        dirs.sort();
        for dir in dirs {
            let (job, decisions) = replay(&dir)?;
            let log = OpenOptions::new().append(true).open(dir.join(LOG))?;
            let mut entry = JobEntry { job, decisions, log };
            if matches!(entry.job.state, JobState::Queued | JobState::Running) {
                let error = format!("interrupted while {}", state_name(entry.job.state));
                tracing::warn!(job = %entry.job.id, %error, "marking interrupted job failed");
                let at = Utc::now();
                entry.append(&LogRecord::Failed {
                    at,
                    error: error.clone(),
                })?;
                entry.job.state = JobState::Failed;
                entry.job.finished_at = Some(at);
                entry.job.error = Some(error);
            }
            jobs.insert(entry.job.id.clone(), Arc::new(Mutex::new(entry)));
        }
        Ok(Self {
            root,
            jobs: Mutex::new(jobs),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn job_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    fn entry(&self, id: &str) -> Result<Arc<Mutex<JobEntry>>, ServiceError> {
        lock(&self.jobs)
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownJob(id.to_string()))
    }

    /// Validates and persists a job as Queued. With a request key already
    /// used, returns the existing job and `false` instead.
    pub fn submit(&self, config: JobConfig, request_key: Option<String>) -> Result<(Job, Option<JobInputs>), ServiceError> {
        let mut jobs = lock(&self.jobs);
        if let Some(key) = &request_key {
            if let Some(existing) = jobs.values().find(|e| lock(e).job.request_key.as_ref() == Some(key)) {
                return Ok((lock(existing).job.clone(), None));
            }
        }
        let inputs = config.load()?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.job_dir(&id);
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("config.json"), &config)?;
        fs::write(dir.join("source.json"), inputs.source.to_json_string())?;
        fs::write(dir.join("target.json"), inputs.target.to_json_string())?;
        let at = Utc::now();
        let log = OpenOptions::new().create_new(true).append(true).open(dir.join(LOG))?;
        let mut entry = JobEntry {
            job: Job {
                id: id.clone(),
                kind: config.kind(),
                state: JobState::Queued,
                request_key: request_key.clone(),
                config: config.clone(),
                created_at: at,
                started_at: None,
                finished_at: None,
                error: None,
                result: None,
                transcript: TRANSCRIPT.into(),
            },
            decisions: Vec::new(),
            log,
        };
        entry.append(&LogRecord::Created {
            at,
            id: id.clone(),
            request_key,
            config,
        })?;
        let job = entry.job.clone();
        jobs.insert(id, Arc::new(Mutex::new(entry)));
        Ok((job, Some(inputs)))
    }

    pub fn get(&self, id: &str) -> Result<Job, ServiceError> {
        let entry = self.entry(id)?;
        let job = lock(&entry).job.clone();
        Ok(job)
    }

    /// Every job, oldest first.
    pub fn list(&self) -> Vec<Job> {
        let entries: Vec<_> = lock(&self.jobs).values().cloned().collect();
        let mut jobs: Vec<Job> = entries.iter().map(|e| lock(e).job.clone()).collect();
        jobs.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        jobs
    }

    fn transition(&self, id: &str, from: JobState, record: LogRecord) -> Result<Job, ServiceError> {
        let entry = self.entry(id)?;
        let mut e = lock(&entry);
        let allowed = match (&record, e.job.state) {
            (LogRecord::Running { .. }, JobState::Queued) => true,
            (LogRecord::Done { .. } | LogRecord::Failed { .. }, s) => s == from,
            _ => false,
        };
        if !allowed {
            return Err(ServiceError::Conflict(format!(
                "job {id} is {}",
                state_name(e.job.state)
            )));
        }
        e.append(&record)?;
        match record {
            LogRecord::Running { at } => {
                e.job.state = JobState::Running;
                e.job.started_at = Some(at);
            }
            LogRecord::Done { at, result } => {
                e.job.state = JobState::Done;
                e.job.finished_at = Some(at);
                e.job.result = Some(result);
            }
            LogRecord::Failed { at, error } => {
                e.job.state = JobState::Failed;
                e.job.finished_at = Some(at);
                e.job.error = Some(error);
            }
            _ => unreachable!(),
        }
        Ok(e.job.clone())
    }

    pub fn mark_running(&self, id: &str) -> Result<Job, ServiceError> {
        self.transition(id, JobState::Queued, LogRecord::Running { at: Utc::now() })
    }

    /// Writes the result, then records Done.
    pub fn complete(&self, id: &str, result: &JobResult) -> Result<Job, ServiceError> {
        if self.get(id)?.state != JobState::Running {
            return Err(ServiceError::Conflict(format!("job {id} is not running")));
        }
        let dir = self.job_dir(id);
        let tmp = dir.join("result.json.tmp");
        write_json(&tmp, result)?;
        fs::rename(&tmp, dir.join(RESULT))?;
        self.transition(
            id,
            JobState::Running,
            LogRecord::Done {
                at: Utc::now(),
                result: RESULT.into(),
            },
        )
    }

    pub fn fail(&self, id: &str, error: &str) -> Result<Job, ServiceError> {
        let from = self.get(id)?.state;
        if !matches!(from, JobState::Queued | JobState::Running) {
            return Err(ServiceError::Conflict(format!("job {id} already finished")));
        }
        self.transition(
            id,
            from,
            LogRecord::Failed {
                at: Utc::now(),
                error: error.into(),
            },
        )
    }

    pub fn result(&self, id: &str) -> Result<JobResult, ServiceError> {
        let job = self.get(id)?;
        let name = job
            .result
            .ok_or_else(|| ServiceError::Conflict(format!("job {id} has no result (state {})", state_name(job.state))))?;
        let text = fs::read_to_string(self.job_dir(id).join(name))?;
        serde_json::from_str(&text).map_err(|e| ServiceError::Execution(format!("stored result unreadable: {e}")))
    }

    /// Transcript entries logged so far; empty if nothing was sent.
    pub fn transcript(&self, id: &str) -> Result<Vec<TranscriptEntry>, ServiceError> {
        let job = self.get(id)?;
        let path = self.job_dir(id).join(&job.transcript);
        if !path.exists() {
            return Ok(Vec::new());
        }
        Ok(read_transcript(path)?)
    }

    pub fn schemas(&self, id: &str) -> Result<(SchemaDef, SchemaDef), ServiceError> {
        self.get(id)?;
        let dir = self.job_dir(id);
        let load = |name: &str| {
            SchemaDef::load(dir.join(name)).map_err(|e| ServiceError::Execution(format!("schema snapshot {name}: {e}")))
        };
        Ok((load("source.json")?, load("target.json")?))
    }

    /// Ranked candidates of a finished match job.
    pub fn candidates(&self, id: &str) -> Result<Vec<MatchResult>, ServiceError> {
        let job = self.get(id)?;
        if job.kind != JobKind::Match {
            return Err(ServiceError::BadRequest(format!("job {id} is not a match job")));
        }
        match self.result(id)? {
            JobResult::Match { results } => Ok(results),
            _ => Err(ServiceError::Execution(format!("job {id} holds a non-match result"))),
        }
    }

    pub fn decisions(&self, id: &str) -> Result<Vec<Decision>, ServiceError> {
        let entry = self.entry(id)?;
        let decisions = lock(&entry).decisions.clone();
        Ok(decisions)
    }

    /// Appends a decision. The pair must be one of the job's candidates; an
    /// edit's replacement must resolve against the job's schemas.
    pub fn record_decision(&self, id: &str, input: DecisionInput) -> Result<Decision, ServiceError> {
        let results = self.candidates(id)?;
        if !results.iter().flat_map(|r| r.candidates()).any(|c| c.pair == input.pair) {
            return Err(ServiceError::NotFound(format!(
                "{} is not a candidate of job {id}; use an edited verdict",
                input.pair
            )));
        }
        if let Verdict::Edited { replacement } = &input.verdict {
            let (source, target) = self.schemas(id)?;
            if !replacement.resolves(&source, &target) {
                return Err(ServiceError::BadRequest(format!("{replacement} does not resolve against the job's schemas")));
            }
        }
        let entry = self.entry(id)?;
        let mut e = lock(&entry);
        let decision = Decision {
            job_id: id.to_string(),
            seq: e.decisions.last().map_or(1, |d| d.seq + 1),
            pair: input.pair,
            verdict: input.verdict,
            note: input.note,
            at: Utc::now(),
        };
        e.append(&LogRecord::Decision(decision.clone()))?;
        e.decisions.push(decision.clone());
        Ok(decision)
    }

    /// Current verdict per candidate pair.
    pub fn verdicts(&self, id: &str) -> Result<BTreeMap<Correspondence, Verdict>, ServiceError> {
        let decisions = self.decisions(id)?;
        Ok(latest_verdicts(&decisions)
            .into_iter()
            .map(|(p, d)| (p, d.verdict.clone()))
            .collect())
    }

    pub fn export(&self, id: &str) -> Result<AlignmentExport, ServiceError> {
        let job = self.get(id)?;
        if job.state != JobState::Done {
            return Err(ServiceError::Conflict(format!("job {id} is {}", state_name(job.state))));
        }
        let (source, target) = self.schemas(id)?;
        Ok(export_alignment(id, &self.decisions(id)?, &source, &target))
    }
}

pub fn state_name(s: JobState) -> &'static str {
    match s {
        JobState::Queued => "queued",
        JobState::Running => "running",
        JobState::Done => "done",
        JobState::Failed => "failed",
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), ServiceError> {
    fs::write(path, serde_json::to_string_pretty(value).expect("values serialize"))?;
    Ok(())
}
