//! Job kinds, their configuration, and how each one runs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use mapsmith::eval::{
    generate_eval_instance, method_table, run_mrpp_experiment, MethodTable, MrppConfig, MrppReport, SchemaPairCase,
};
use mapsmith::gateway::{CompletionRequest, Gateway};
use mapsmith::mapping::{extract_script, parse_rule_script, render_mapping_sql, Diagnostic, Mapping, Rule};
use mapsmith::matching::{run_match, MatchConfig, MatchResult};
use mapsmith::prompt::{build_mapgen_prompt, TransformOptions};
use mapsmith::schema::{Correspondence, RelationDef, SchemaDef};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Match,
    MapGen,
    Eval,
    MrppSweep,
}

/// Synthetic source data for a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceSpec {
    pub rows_per_table: usize,
    pub null_prob: f64,
    pub orphan_prob: f64,
    pub seed: u64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            rows_per_table: 100,
            null_prob: 0.1,
            orphan_prob: 0.1,
            seed: 0,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_stable_rounds() -> usize {
    2
}

fn default_average_k() -> usize {
    3
}

/// What to run. Paths are read when the job is submitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobConfig {
    Match {
        source: PathBuf,
        target: PathBuf,
        /// Restrict to one relation pair; otherwise every pair is matched.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source_relation: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_relation: Option<String>,
        /// Alignment used by the demo backend.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gold: Option<PathBuf>,
        #[serde(default)]
        config: MatchConfig,
    },
    MapGen {
        source: PathBuf,
        target: PathBuf,
        /// Mapping echoed by the demo backend.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gold_mapping: Option<PathBuf>,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        transform: TransformOptions,
    },
    Eval {
        source: PathBuf,
        target: PathBuf,
        gold: PathBuf,
        #[serde(default = "default_seeds")]
        seeds: Vec<u64>,
        #[serde(default)]
        config: MatchConfig,
        #[serde(default = "default_stable_rounds")]
        stable_rounds: usize,
        #[serde(default = "default_average_k")]
        average_k: usize,
    },
    MrppSweep {
        source: PathBuf,
        target: PathBuf,
        gold_mapping: PathBuf,
        #[serde(default)]
        instance: InstanceSpec,
        #[serde(default)]
        config: MrppConfig,
    },
}

impl JobConfig {
    pub fn kind(&self) -> JobKind {
        match self {
            JobConfig::Match { .. } => JobKind::Match,
            JobConfig::MapGen { .. } => JobKind::MapGen,
            JobConfig::Eval { .. } => JobKind::Eval,
            JobConfig::MrppSweep { .. } => JobKind::MrppSweep,
        }
    }

    /// Overrides every seed in the configuration.
    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            JobConfig::Match { config, .. } => config.seed = seed,
            JobConfig::MapGen { seed: s, .. } => *s = seed,
            JobConfig::Eval { seeds, .. } => *seeds = vec![seed],
            JobConfig::MrppSweep { instance, .. } => instance.seed = seed,
        }
        self
    }

    /// Resolves relative paths against `base`.
    pub fn rebased(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self {
            JobConfig::Match {
                source, target, gold, ..
            } => {
                fix(source);
                fix(target);
                gold.as_mut().map(fix);
            }
            JobConfig::MapGen {
                source,
                target,
                gold_mapping,
                ..
            } => {
                fix(source);
                fix(target);
                gold_mapping.as_mut().map(fix);
            }
            JobConfig::Eval {
                source, target, gold, ..
            } => {
                fix(source);
                fix(target);
                fix(gold);
            }
            JobConfig::MrppSweep {
                source,
                target,
                gold_mapping,
                ..
            } => {
                fix(source);
                fix(target);
                fix(gold_mapping);
            }
        }
        self
    }

    /// Reads and checks every referenced file.
    pub fn load(&self) -> Result<JobInputs, ServiceError> {
        let schema = |p: &Path| {
            SchemaDef::load(p)
                .map(Arc::new)
                .map_err(|e| ServiceError::InvalidConfig(format!("{}: {e}", p.display())))
        };
        let (source, target) = match self {
            JobConfig::Match { source, target, .. }
            | JobConfig::MapGen { source, target, .. }
            | JobConfig::Eval { source, target, .. }
            | JobConfig::MrppSweep { source, target, .. } => (schema(source)?, schema(target)?),
        };
        let mut inputs = JobInputs {
            config: self.clone(),
            source,
            target,
            gold: None,
            gold_mapping: None,
        };
        match self {
            JobConfig::Match {
                gold,
                config,
                source_relation,
                target_relation,
                ..
            } => {
                config.validate().map_err(ServiceError::invalid)?;
                for (name, schema) in [(source_relation, &inputs.source), (target_relation, &inputs.target)] {
                    if let Some(n) = name {
                        if schema.relation(n).is_none() {
                            return Err(ServiceError::InvalidConfig(format!("no relation {n} in {}", schema.name)));
                        }
                    }
                }
                if let Some(g) = gold {
                    inputs.gold = Some(load_alignment(g, &inputs.source, &inputs.target)?);
                }
            }
            JobConfig::MapGen { gold_mapping, .. } => {
                if let Some(g) = gold_mapping {
                    inputs.gold_mapping = Some(load_mapping(g, &inputs.source, &inputs.target)?);
                }
            }
            JobConfig::Eval {
                gold, seeds, config, ..
            } => {
                config.validate().map_err(ServiceError::invalid)?;
                if seeds.is_empty() {
                    return Err(ServiceError::InvalidConfig("eval needs at least one seed".into()));
                }
                inputs.gold = Some(load_alignment(gold, &inputs.source, &inputs.target)?);
            }
            JobConfig::MrppSweep {
                gold_mapping,
                config,
                instance,
                ..
            } => {
                if config.mrpp.is_empty() || config.mrpp.contains(&0) || config.seeds.is_empty() {
                    return Err(ServiceError::InvalidConfig(
                        "sweep needs MRPP values >= 1 and at least one seed".into(),
                    ));
                }
                for p in [instance.null_prob, instance.orphan_prob] {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(ServiceError::InvalidConfig(format!("probability {p} outside [0, 1]")));
                    }
                }
                inputs.gold_mapping = Some(load_mapping(gold_mapping, &inputs.source, &inputs.target)?);
            }
        }
        Ok(inputs)
    }
}

pub fn load_alignment(path: &Path, source: &SchemaDef, target: &SchemaDef) -> Result<Vec<Correspondence>, ServiceError> {
    let text = std::fs::read_to_string(path).map_err(|e| ServiceError::InvalidConfig(format!("{}: {e}", path.display())))?;
    let pairs: Vec<Correspondence> =
        serde_json::from_str(&text).map_err(|e| ServiceError::InvalidConfig(format!("{}: {e}", path.display())))?;
    if let Some(bad) = pairs.iter().find(|c| !c.resolves(source, target)) {
        return Err(ServiceError::InvalidConfig(format!(
            "{}: {} -> {} does not resolve",
            path.display(),
            bad.source,
            bad.target
        )));
    }
    Ok(pairs)
}

/// A mapping as a SQL script (`.sql`) or a JSON rule list.
pub fn load_mapping(path: &Path, source: &Arc<SchemaDef>, target: &Arc<SchemaDef>) -> Result<Mapping, ServiceError> {
    let text = std::fs::read_to_string(path).map_err(|e| ServiceError::InvalidConfig(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        return Mapping::from_rules_json(&text, source.clone(), target.clone())
            .map_err(|e| ServiceError::InvalidConfig(format!("{}: {e}", path.display())));
    }
    let parsed = parse_rule_script(&text, source.clone(), target.clone());
    if let Some(d) = parsed.diagnostics.first() {
        return Err(ServiceError::InvalidConfig(format!(
            "{}: statement {}: {}",
            path.display(),
            d.statement,
            d.message
        )));
    }
    Ok(parsed.mapping)
}

/// A configuration with its files read and validated.
#[derive(Debug, Clone)]
pub struct JobInputs {
    pub config: JobConfig,
    pub source: Arc<SchemaDef>,
    pub target: Arc<SchemaDef>,
    pub gold: Option<Vec<Correspondence>>,
    pub gold_mapping: Option<Mapping>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapGenResult {
    pub prompt_seed: u64,
    pub response: String,
    pub rules: Vec<Rule>,
    pub diagnostics: Vec<Diagnostic>,
    pub sql: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobResult {
    Match { results: Vec<MatchResult> },
    MapGen(MapGenResult),
    Eval { table: MethodTable },
    MrppSweep { report: MrppReport },
}

/// Runs a job to completion on the calling thread.
pub fn execute(inputs: &JobInputs, gateway: &Gateway) -> Result<JobResult, ServiceError> {
    let fail = |e: &dyn std::fmt::Display| ServiceError::Execution(e.to_string());
    match &inputs.config {
        JobConfig::Match {
            source_relation,
            target_relation,
            config,
            ..
        } => {
            let pick = |schema: &SchemaDef, name: &Option<String>| -> Vec<RelationDef> {
                schema
                    .relations
                    .iter()
                    .filter(|r| name.as_ref().is_none_or(|n| *n == r.name))
                    .cloned()
                    .collect()
            };
            let mut results = Vec::new();
            let sources = pick(&inputs.source, source_relation);
            let targets = pick(&inputs.target, target_relation);
            for (i, s) in sources.iter().enumerate() {
                for (j, t) in targets.iter().enumerate() {
                    let cfg = MatchConfig {
                        seed: mapsmith::seed::derive_seed(config.seed, &[i as u64, j as u64]),
                        ..config.clone()
                    };
                    results.push(run_match(gateway, s, t, &cfg).map_err(|e| fail(&e))?);
                }
            }
            Ok(JobResult::Match { results })
        }
        JobConfig::MapGen { seed, transform, .. } => {
            let chunk = (
                inputs.source.relations.iter().collect::<Vec<_>>(),
                inputs.target.relations.iter().collect::<Vec<_>>(),
            );
            let spec = build_mapgen_prompt(&[chunk], *seed, transform).map_err(|e| fail(&e))?;
            let response = gateway
                .complete(&CompletionRequest::new(&spec.body).with_seed(spec.seed))
                .map_err(|e| fail(&e))?;
            let parsed = parse_rule_script(&extract_script(&response.text), inputs.source.clone(), inputs.target.clone());
            Ok(JobResult::MapGen(MapGenResult {
                prompt_seed: spec.seed,
                sql: render_mapping_sql(&parsed.mapping),
                response: response.text,
                rules: parsed.mapping.rules,
                diagnostics: parsed.diagnostics,
            }))
        }
        JobConfig::Eval {
            seeds,
            config,
            stable_rounds,
            average_k,
            ..
        } => {
            let gold = inputs.gold.as_deref().unwrap_or_default();
            let cases = SchemaPairCase::from_schemas(&inputs.source, &inputs.target, gold);
            if cases.is_empty() {
                return Err(ServiceError::Execution("gold alignment is empty".into()));
            }
            let table = method_table(gateway, &cases, seeds, config, *stable_rounds, *average_k).map_err(|e| fail(&e))?;
            Ok(JobResult::Eval { table })
        }
        JobConfig::MrppSweep { instance, config, .. } => {
            let gold = inputs.gold_mapping.as_ref().expect("sweeps load their gold mapping");
            let data = generate_eval_instance(
                &inputs.source,
                instance.rows_per_table,
                instance.null_prob,
                instance.orphan_prob,
                instance.seed,
            )
            .map_err(|e| fail(&e))?;
            let report = run_mrpp_experiment(gateway, gold, &data, config).map_err(|e| fail(&e))?;
            Ok(JobResult::MrppSweep { report })
        }
    }
}
