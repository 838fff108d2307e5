//! Bidirectional schema matching: sampled N-1 prompts, aggregation,
//! rank-prompt confidences and fusion of both directions.

mod aggregate;
mod confidence;
mod fuse;
mod sample;
mod stable;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aggregate::{aggregate, Aggregation, CandidateSet};
pub use confidence::{confidence_score, early_stop, softmax_logprobs, ConfidenceOutcome, RankTask, ScoreSource};
pub use fuse::{fuse, rank, Fusion, ScoredCandidate};
pub use sample::{build_match_prompts, prefilter, sample_candidates, MatchPrompt, SampleOutcome};
pub use stable::{gale_shapley, stable_match};

use crate::gateway::{Gateway, GatewayError, Usage};
use crate::prompt::{Direction, PromptError, TransformOptions};
use crate::schema::{AttrRef, Correspondence, RelationDef, SchemaDef};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("no candidate sets to aggregate")]
    NoSamples,
    #[error("invalid match configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Samples per direction.
    pub n: usize,
    pub seed: u64,
    pub aggregation: Aggregation,
    pub fusion: Fusion,
    pub prefilter: bool,
    /// Also match with the tables swapped. Without it the forward
    /// confidences are the final scores.
    pub bidirectional: bool,
    /// Score candidates with rank prompts; otherwise support / n.
    pub confidence: bool,
    pub confidence_rounds: usize,
    /// Stop further confidence rounds once the leader is this far ahead.
    pub early_stop_gap: Option<f64>,
    pub transform: TransformOptions,
    pub top_logprobs: u32,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            n: 3,
            seed: 0,
            aggregation: Aggregation::Majority,
            fusion: Fusion::Multiply,
            prefilter: false,
            bidirectional: true,
            confidence: true,
            confidence_rounds: 1,
            early_stop_gap: None,
            transform: TransformOptions::sampling(),
            top_logprobs: 10,
        }
    }
}

impl MatchConfig {
    /// One unmodified prompt per attribute, forward only, no scoring.
    pub fn single_prompt_baseline() -> Self {
        Self {
            n: 1,
            aggregation: Aggregation::Union,
            bidirectional: false,
            confidence: false,
            transform: TransformOptions::default(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        let bad = |m: &str| Err(MatchError::InvalidConfig(m.into()));
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if self.confidence_rounds == 0 {
            return bad("confidence_rounds must be at least 1");
        }
        if let Some(g) = self.early_stop_gap {
            if !(0.0..=1.0).contains(&g) {
                return bad("early_stop_gap must lie in [0, 1]");
            }
        }
        if let Fusion::Stable { k: 0 } = self.fusion {
            return bad("stable matching needs k >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub direction: Direction,
    pub attribute: AttrRef,
    pub rounds_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fallback {
    pub direction: Direction,
    pub attribute: AttrRef,
    pub reason: String,
}

/// Everything one direction produced before fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionEvidence {
    pub direction: Direction,
    pub sets: Vec<CandidateSet>,
    /// Support over all samples, before thresholding.
    pub support: BTreeMap<Correspondence, usize>,
    pub aggregated: BTreeMap<Correspondence, usize>,
    pub confidences: BTreeMap<Correspondence, f64>,
    pub format_errors: usize,
    pub fallbacks: Vec<Fallback>,
    pub early_stops: Vec<EarlyStop>,
    pub truncated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    pub source_relation: RelationDef,
    pub target_relation: RelationDef,
    pub config: MatchConfig,
    pub backend: String,
    pub forward: DirectionEvidence,
    pub swapped: Option<DirectionEvidence>,
    pub prompts: usize,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSummary {
    pub candidate_sets: Vec<Vec<Correspondence>>,
    pub aggregated: usize,
    pub format_errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    pub backend: String,
    pub config: MatchConfig,
    /// Fusion tag, or the single direction used.
    pub scoring: String,
    /// Proposing side in stable matching.
    pub proposer: String,
    pub forward: DirectionSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swapped: Option<DirectionSummary>,
    pub fallbacks: Vec<Fallback>,
    pub early_stops: Vec<EarlyStop>,
    pub truncated_candidates: usize,
    pub prompts: usize,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub source_relation: String,
    pub target_relation: String,
    /// Per target attribute, candidates by descending final confidence.
    pub ranked: BTreeMap<String, Vec<ScoredCandidate>>,
    pub provenance: RunProvenance,
}

impl MatchResult {
    /// Pretty JSON report; identical inputs give identical bytes.
    pub fn to_report(&self) -> String {
        serde_json::to_string_pretty(self).expect("match results serialize")
    }

    pub fn from_report(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Ranked pairs per target attribute.
    pub fn ranked_pairs(&self) -> BTreeMap<AttrRef, Vec<Correspondence>> {
        self.ranked
            .iter()
            .map(|(attr, list)| {
                (
                    AttrRef::new(&self.target_relation, attr),
                    list.iter().map(|c| c.pair.clone()).collect(),
                )
            })
            .collect()
    }

    /// Longest ranked list: the largest k the pipeline can report.
    pub fn pipeline_k(&self) -> usize {
        self.ranked.values().map(Vec::len).max().unwrap_or(0)
    }

    pub fn candidates(&self) -> impl Iterator<Item = &ScoredCandidate> {
        self.ranked.values().flatten()
    }
}

/// Ranked lists per target attribute across several relation-pair results.
pub fn merge_ranked(results: &[MatchResult]) -> BTreeMap<AttrRef, Vec<Correspondence>> {
    let mut lists: BTreeMap<AttrRef, Vec<ScoredCandidate>> = BTreeMap::new();
    for r in results {
        for (attr, list) in &r.ranked {
            lists
                .entry(AttrRef::new(&r.target_relation, attr))
                .or_default()
                .extend(list.iter().cloned());
        }
    }
    lists
        .into_iter()
        .map(|(k, mut v)| {
            rank(&mut v);
            (k, v.into_iter().map(|c| c.pair).collect())
        })
        .collect()
}

/// Runs every stage and fuses with `config.fusion`.
pub fn run_match(
    gateway: &Gateway,
    source: &RelationDef,
    target: &RelationDef,
    config: &MatchConfig,
) -> Result<MatchResult, MatchError> {
    let evidence = collect_evidence(gateway, source, target, config)?;
    Ok(if config.bidirectional {
        evidence.fused(config.fusion)
    } else {
        evidence.one_direction(Direction::Forward)
    })
}

/// Matches every (source relation, target relation) pair of two schemata.
pub fn run_schema_match(
    gateway: &Gateway,
    source: &SchemaDef,
    target: &SchemaDef,
    config: &MatchConfig,
) -> Result<Vec<MatchResult>, MatchError> {
    let mut out = Vec::new();
    for (i, s) in source.relations.iter().enumerate() {
        for (j, t) in target.relations.iter().enumerate() {
            let cfg = MatchConfig {
                seed: derive_seed(config.seed, &[i as u64, j as u64]),
                ..config.clone()
            };
            out.push(run_match(gateway, s, t, &cfg)?);
        }
    }
    Ok(out)
}

/// Sampling, aggregation and confidence scoring for both directions.
pub fn collect_evidence(
    gateway: &Gateway,
    source: &RelationDef,
    target: &RelationDef,
    config: &MatchConfig,
) -> Result<Evidence, MatchError> {
    config.validate()?;
    let mut prompts = 0;
    let mut usage = Usage::default();
    let forward = direction_evidence(gateway, source, target, config, Direction::Forward, &mut prompts, &mut usage)?;
    let swapped = if config.bidirectional {
        Some(direction_evidence(gateway, source, target, config, Direction::Swapped, &mut prompts, &mut usage)?)
    } else {
        None
    };
    Ok(Evidence {
        source_relation: source.clone(),
        target_relation: target.clone(),
        config: config.clone(),
        backend: gateway.backend_name().to_string(),
        forward,
        swapped,
        prompts,
        usage,
    })
}

fn direction_evidence(
    gateway: &Gateway,
    source: &RelationDef,
    target: &RelationDef,
    config: &MatchConfig,
    direction: Direction,
    prompts: &mut usize,
    usage: &mut Usage,
) -> Result<DirectionEvidence, MatchError> {
    let sampled = sample_candidates(
        gateway,
        source,
        target,
        config.n,
        config.seed,
        &config.transform,
        direction,
        config.prefilter,
    )?;
    *prompts += sampled.prompts;
    usage.add(&sampled.usage);
    let support = aggregate(&sampled.sets, Aggregation::Union)?;
    let aggregated = aggregate(&sampled.sets, config.aggregation)?;

    let (many, one) = match direction {
        Direction::Forward => (source, target),
        Direction::Swapped => (target, source),
    };
    let tasks: Vec<(usize, RankTask)> = one
        .attributes
        .iter()
        .enumerate()
        .filter_map(|(j, attr)| {
            let one_ref = AttrRef::new(&one.name, &attr.name);
            let candidates: Vec<_> = aggregated
                .iter()
                .filter(|(p, _)| match direction {
                    Direction::Forward => p.target == one_ref,
                    Direction::Swapped => p.source == one_ref,
                })
                .map(|(p, &s)| {
                    let name = match direction {
                        Direction::Forward => &p.source.attribute,
                        Direction::Swapped => &p.target.attribute,
                    };
                    (many.attribute(name).expect("answers are resolved against the relation"), s)
                })
                .collect();
            (!candidates.is_empty()).then_some({
                (
                    j,
                    RankTask {
                        one: (one, attr),
                        other: many,
                        candidates,
                        n: config.n,
                        direction,
                    },
                )
            })
        })
        .collect();

    let scored: Vec<ScoredTask> = tasks
        .par_iter()
        .map(|(j, task)| score_task(gateway, task, *j, config))
        .collect::<Result<_, _>>()?;

    let mut confidences = BTreeMap::new();
    let mut fallbacks = Vec::new();
    let mut early_stops = Vec::new();
    let mut truncated = 0;
    for s in scored {
        confidences.extend(s.scores);
        fallbacks.extend(s.fallback);
        early_stops.extend(s.early_stop);
        truncated += s.truncated;
        *prompts += s.prompts;
        usage.add(&s.usage);
    }
    Ok(DirectionEvidence {
        direction,
        sets: sampled.sets,
        support,
        aggregated,
        confidences,
        format_errors: sampled.format_errors,
        fallbacks,
        early_stops,
        truncated,
    })
}

struct ScoredTask {
    scores: BTreeMap<Correspondence, f64>,
    fallback: Option<Fallback>,
    early_stop: Option<EarlyStop>,
    truncated: usize,
    prompts: usize,
    usage: Usage,
}

fn score_task(gateway: &Gateway, task: &RankTask, j: usize, config: &MatchConfig) -> Result<ScoredTask, MatchError> {
    let attribute = AttrRef::new(&task.one.0.name, &task.one.1.name);
    if !config.confidence {
        return Ok(ScoredTask {
            scores: task.support_scores(),
            fallback: None,
            early_stop: None,
            truncated: 0,
            prompts: 0,
            usage: Usage::default(),
        });
    }
    let dir = sample::direction_code(task.direction);
    let mut sums: BTreeMap<Correspondence, f64> = BTreeMap::new();
    let mut out = ScoredTask {
        scores: BTreeMap::new(),
        fallback: None,
        early_stop: None,
        truncated: 0,
        prompts: 0,
        usage: Usage::default(),
    };
    let mut rounds = 0;
    for r in 0..config.confidence_rounds {
        let seed = derive_seed(config.seed, &[dir, 1, j as u64, r as u64]);
        let outcome = confidence_score(gateway, task, seed, config.top_logprobs)?;
        rounds += 1;
        out.prompts += 1;
        out.usage.add(&outcome.usage);
        out.truncated = outcome.truncated;
        if let ScoreSource::Support { reason } = outcome.source {
            // Support scores do not change between rounds.
            out.scores = outcome.scores;
            out.fallback = Some(Fallback {
                direction: task.direction,
                attribute,
                reason,
            });
            return Ok(out);
        }
        for (p, s) in outcome.scores {
            *sums.entry(p).or_default() += s;
        }
        let means = sums.values().map(|s| s / rounds as f64);
        if let Some(gap) = config.early_stop_gap {
            if r + 1 < config.confidence_rounds && early_stop(means, gap) {
                out.early_stop = Some(EarlyStop {
                    direction: task.direction,
                    attribute: attribute.clone(),
                    rounds_used: rounds,
                });
                break;
            }
        }
    }
    out.scores = sums.into_iter().map(|(p, s)| (p, s / rounds as f64)).collect();
    Ok(out)
}

impl DirectionEvidence {
    fn summary(&self) -> DirectionSummary {
        DirectionSummary {
            candidate_sets: self.sets.iter().map(|s| s.pairs.iter().cloned().collect()).collect(),
            aggregated: self.aggregated.len(),
            format_errors: self.format_errors,
        }
    }
}

impl Evidence {
    /// Final result from both directions' confidences.
    pub fn fused(&self, fusion: Fusion) -> MatchResult {
        let empty = BTreeMap::new();
        let swapped = self.swapped.as_ref().map_or(&empty, |s| &s.confidences);
        self.assemble(fuse(&self.forward.confidences, swapped, fusion), fusion.tag())
    }

    /// Final result from one direction alone (the aggregation-only view).
    pub fn one_direction(&self, direction: Direction) -> MatchResult {
        let ev = match direction {
            Direction::Forward => Some(&self.forward),
            Direction::Swapped => self.swapped.as_ref(),
        };
        let tag = match direction {
            Direction::Forward => "forward",
            Direction::Swapped => "swapped",
        };
        let mut list: Vec<ScoredCandidate> = ev
            .map(|e| {
                e.confidences
                    .iter()
                    .map(|(p, &c)| ScoredCandidate {
                        pair: p.clone(),
                        support_forward: 0,
                        support_swapped: 0,
                        conf_forward: (direction == Direction::Forward).then_some(c),
                        conf_swapped: (direction == Direction::Swapped).then_some(c),
                        conf_final: c,
                        method: tag.into(),
                        round: None,
                    })
                    .collect()
            })
            .unwrap_or_default();
        rank(&mut list);
        self.assemble(list, tag.into())
    }

    fn assemble(&self, mut scored: Vec<ScoredCandidate>, scoring: String) -> MatchResult {
        let support_of = |ev: Option<&DirectionEvidence>, p: &Correspondence| {
            ev.and_then(|e| e.support.get(p).copied()).unwrap_or(0)
        };
        let mut ranked: BTreeMap<String, Vec<ScoredCandidate>> = self
            .target_relation
            .attributes
            .iter()
            .map(|a| (a.name.clone(), Vec::new()))
            .collect();
        for c in scored.iter_mut() {
            c.support_forward = support_of(Some(&self.forward), &c.pair);
            c.support_swapped = support_of(self.swapped.as_ref(), &c.pair);
        }
        for c in scored {
            ranked.entry(c.pair.target.attribute.clone()).or_default().push(c);
        }
        for list in ranked.values_mut() {
            rank(list);
        }
        let mut fallbacks = self.forward.fallbacks.clone();
        let mut early_stops = self.forward.early_stops.clone();
        let mut truncated = self.forward.truncated;
        if let Some(s) = &self.swapped {
            fallbacks.extend(s.fallbacks.iter().cloned());
            early_stops.extend(s.early_stops.iter().cloned());
            truncated += s.truncated;
        }
        let order = |a: &AttrRef, b: &AttrRef| a.cmp(b);
        fallbacks.sort_by(|x, y| x.direction.cmp(&y.direction).then_with(|| order(&x.attribute, &y.attribute)));
        early_stops.sort_by(|x, y| x.direction.cmp(&y.direction).then_with(|| order(&x.attribute, &y.attribute)));
        MatchResult {
            source_relation: self.source_relation.name.clone(),
            target_relation: self.target_relation.name.clone(),
            ranked,
            provenance: RunProvenance {
                backend: self.backend.clone(),
                config: self.config.clone(),
                scoring,
                proposer: "source".into(),
                forward: self.forward.summary(),
                swapped: self.swapped.as_ref().map(DirectionEvidence::summary),
                fallbacks,
                early_stops,
                truncated_candidates: truncated,
                prompts: self.prompts,
                usage: self.usage,
            },
        }
    }
}

/// Every pair ranked in any of the results.
pub fn candidate_pairs(results: &[MatchResult]) -> BTreeSet<Correspondence> {
    results.iter().flat_map(|r| r.candidates().map(|c| c.pair.clone())).collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fixtures::{source_schema, target_schema};
    use crate::gateway::Oracle;

    fn pair(s: (&str, &str), t: (&str, &str)) -> Correspondence {
        Correspondence::new(AttrRef::new(s.0, s.1), AttrRef::new(t.0, t.1))
    }

    fn gateway(oracle: Oracle) -> Gateway {
        Gateway::new(Arc::new(oracle.into_backend()))
    }

    fn drugs_oracle() -> Oracle {
        Oracle::new([
            (pair(("meds", "generic_name"), ("Drugs", "brand_name")), 0.9),
            (pair(("meds", "m_id"), ("Drugs", "brand_name")), 0.1),
            (pair(("meds", "m_id"), ("Drugs", "id")), 0.8),
        ])
    }

    #[test]
    fn correct_pair_heads_the_ranking() {
        let (s, t) = (source_schema(), target_schema());
        let (meds, drugs) = (s.relation("meds").unwrap(), t.relation("Drugs").unwrap());
        let r = run_match(&gateway(drugs_oracle()), meds, drugs, &MatchConfig::default()).unwrap();
        let brand = &r.ranked["brand_name"];
        assert_eq!(brand.len(), 2);
        assert_eq!(brand[0].pair, pair(("meds", "generic_name"), ("Drugs", "brand_name")));
        // swapped: brand_name is the only candidate for generic_name
        assert!((brand[0].conf_final - 0.9).abs() < 1e-12);
        assert_eq!((brand[0].support_forward, brand[0].support_swapped), (3, 3));
        assert!(r.ranked["class"].is_empty());
        assert!(r.provenance.fallbacks.is_empty());
    }

    #[test]
    fn multiply_drops_one_direction_pairs() {
        let (s, t) = (source_schema(), target_schema());
        let (trial, ct) = (s.relation("trial").unwrap(), t.relation("Clinical_Trials").unwrap());
        let stray = pair(("trial", "year"), ("Clinical_Trials", "funder"));
        let oracle = Oracle::new([(pair(("trial", "funder"), ("Clinical_Trials", "funder")), 1.0)])
            .with_one_way(stray.clone(), 0.5);
        let gw = gateway(oracle);
        let ev = collect_evidence(&gw, trial, ct, &MatchConfig::default()).unwrap();
        assert!(ev.forward.confidences.contains_key(&stray));
        assert!(!ev.swapped.as_ref().unwrap().confidences.contains_key(&stray));
        let multiplied = ev.fused(Fusion::Multiply);
        assert!(multiplied.candidates().all(|c| c.pair != stray));
        let averaged = ev.fused(Fusion::Average);
        let kept = averaged.candidates().find(|c| c.pair == stray).unwrap();
        assert_eq!(kept.conf_swapped, None);
    }

    #[test]
    fn baseline_is_one_prompt_per_attribute() {
        let (s, t) = (source_schema(), target_schema());
        let (meds, drugs) = (s.relation("meds").unwrap(), t.relation("Drugs").unwrap());
        let gw = gateway(drugs_oracle());
        let r = run_match(&gw, meds, drugs, &MatchConfig::single_prompt_baseline()).unwrap();
        assert_eq!(r.provenance.prompts, drugs.attributes.len());
        assert!(r.provenance.swapped.is_none());
        assert_eq!(r.ranked["id"][0].conf_final, 1.0);
    }

    #[test]
    fn reports_are_reproducible() {
        let (s, t) = (source_schema(), target_schema());
        let run = || {
            let gw = gateway(drugs_oracle());
            run_schema_match(&gw, &s, &t, &MatchConfig::default())
                .unwrap()
                .iter()
                .map(MatchResult::to_report)
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        let back = MatchResult::from_report(&a[0]).unwrap();
        assert_eq!(back.to_report(), a[0]);
    }

    #[test]
    fn stable_reports_rounds() {
        let (s, t) = (source_schema(), target_schema());
        let (meds, drugs) = (s.relation("meds").unwrap(), t.relation("Drugs").unwrap());
        let cfg = MatchConfig {
            fusion: Fusion::Stable { k: 2 },
            ..MatchConfig::default()
        };
        let r = run_match(&gateway(drugs_oracle()), meds, drugs, &cfg).unwrap();
        let rounds: Vec<_> = r.candidates().map(|c| (c.pair.clone(), c.round)).collect();
        assert!(rounds.contains(&(pair(("meds", "generic_name"), ("Drugs", "brand_name")), Some(1))));
        assert!(rounds.contains(&(pair(("meds", "m_id"), ("Drugs", "id")), Some(1))));
        assert_eq!(r.pipeline_k(), 2);
    }

    #[test]
    fn early_stop_saves_rounds() {
        let (s, t) = (source_schema(), target_schema());
        let (meds, drugs) = (s.relation("meds").unwrap(), t.relation("Drugs").unwrap());
        let cfg = MatchConfig {
            confidence_rounds: 3,
            early_stop_gap: Some(0.5),
            ..MatchConfig::default()
        };
        let gw = gateway(drugs_oracle());
        let r = run_match(&gw, meds, drugs, &cfg).unwrap();
        assert!(r.provenance.early_stops.iter().all(|e| e.rounds_used == 1));
        assert!(!r.provenance.early_stops.is_empty());
    }

    #[test]
    fn config_validation() {
        let bad = MatchConfig {
            n: 0,
            ..MatchConfig::default()
        };
        assert!(matches!(bad.validate(), Err(MatchError::InvalidConfig(_))));
        let bad = MatchConfig {
            fusion: Fusion::Stable { k: 0 },
            ..MatchConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
