use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MatchError;
use crate::gateway::{option_logprobs, CompletionRequest, Gateway, GatewayError, Usage};
use crate::prompt::{build_rank_prompt, Direction, OutputContract, OPTION_LABELS};
use crate::schema::{AttrRef, AttributeDef, Correspondence, RelationDef};

/// Normalizes log-probabilities into probabilities. Negative infinity maps to
/// 0. Returns `None` when no entry is finite.
pub fn softmax_logprobs(logprobs: &[f64]) -> Option<Vec<f64>> {
    let max = logprobs.iter().copied().filter(|l| l.is_finite()).reduce(f64::max)?;
    let exps: Vec<f64> = logprobs
        .iter()
        .map(|&l| if l.is_finite() { (l - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = exps.iter().sum();
    Some(exps.into_iter().map(|e| e / sum).collect())
}

/// True when the best score leads the runner-up (0 if absent) by at least `gap`.
pub fn early_stop(scores: impl IntoIterator<Item = f64>, gap: f64) -> bool {
    let mut v: Vec<f64> = scores.into_iter().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    let top1 = v.first().copied().unwrap_or(0.0);
    let top2 = v.get(1).copied().unwrap_or(0.0);
    top1 - top2 >= gap
}

/// One attribute and the candidates aggregated for it from the other relation.
#[derive(Debug, Clone)]
pub struct RankTask<'a> {
    pub one: (&'a RelationDef, &'a AttributeDef),
    pub other: &'a RelationDef,
    /// Candidate attributes of `other` with their support counts.
    pub candidates: Vec<(&'a AttributeDef, usize)>,
    /// Samples drawn, for the support fallback.
    pub n: usize,
    pub direction: Direction,
}

impl RankTask<'_> {
    /// Normalized (source, target) key for a candidate.
    pub fn pair(&self, candidate: &AttributeDef) -> Correspondence {
        let one = AttrRef::new(&self.one.0.name, &self.one.1.name);
        let other = AttrRef::new(&self.other.name, &candidate.name);
        match self.direction {
            Direction::Forward => Correspondence::new(other, one),
            Direction::Swapped => Correspondence::new(one, other),
        }
    }

    /// Confidence = support / n, used when log-probabilities are unavailable.
    pub fn support_scores(&self) -> BTreeMap<Correspondence, f64> {
        self.candidates
            .iter()
            .map(|(a, s)| (self.pair(a), *s as f64 / self.n.max(1) as f64))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum ScoreSource {
    Logprobs,
    /// Support-count fallback, with the reason.
    Support { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceOutcome {
    pub scores: BTreeMap<Correspondence, f64>,
    pub source: ScoreSource,
    pub usage: Usage,
    /// Candidates beyond the label alphabet, scored 0.
    pub truncated: usize,
}

/// Issues a rank prompt over the candidates and turns the option
/// log-probabilities into a distribution over them.
pub fn confidence_score(
    gateway: &Gateway,
    task: &RankTask<'_>,
    seed: u64,
    top_logprobs: u32,
) -> Result<ConfidenceOutcome, MatchError> {
    let mut ordered = task.candidates.clone();
    ordered.sort_by(|x, y| y.1.cmp(&x.1).then_with(|| x.0.name.cmp(&y.0.name)));
    let truncated = ordered.len().saturating_sub(OPTION_LABELS.len());
    let dropped: Vec<_> = ordered.split_off(ordered.len() - truncated);
    ordered.sort_by(|x, y| x.0.name.cmp(&y.0.name));

    let cands: Vec<(&RelationDef, &AttributeDef)> = ordered.iter().map(|(a, _)| (task.other, *a)).collect();
    let prompt = build_rank_prompt(task.one, &cands, seed, task.direction)?;
    let OutputContract::OptionLabel { options } = &prompt.expected_output else {
        unreachable!("rank prompts carry an option-label contract")
    };
    let request = CompletionRequest::new(&prompt.body)
        .with_seed(seed)
        .with_logprobs(top_logprobs.max(ordered.len() as u32).min(20));
    let response = gateway.complete(&request)?;

    let labels: Vec<&str> = options.keys().map(String::as_str).collect();
    let fallback = |reason: String| {
        tracing::info!(attribute = %task.one.1.name, %reason, "confidence falls back to support");
        let mut scores = task.support_scores();
        for (a, _) in &dropped {
            scores.insert(task.pair(a), 0.0);
        }
        ConfidenceOutcome {
            scores,
            source: ScoreSource::Support { reason },
            usage: response.usage,
            truncated,
        }
    };
    let lps = match option_logprobs(&response, &labels) {
        Ok(l) => l,
        Err(GatewayError::Capability(reason)) => return Ok(fallback(reason)),
        Err(e) => return Err(e.into()),
    };
    let values: Vec<f64> = labels.iter().map(|l| lps[*l]).collect();
    let Some(probs) = softmax_logprobs(&values) else {
        return Ok(fallback("no option label among the reported alternatives".into()));
    };
    let mut scores = BTreeMap::new();
    for (label, p) in labels.iter().zip(probs) {
        let chosen = &options[*label];
        let attr = ordered
            .iter()
            .find(|(a, _)| a.name == chosen.attribute)
            .expect("labels map to candidates")
            .0;
        scores.insert(task.pair(attr), p);
    }
    for (a, _) in &dropped {
        scores.insert(task.pair(a), 0.0);
    }
    Ok(ConfidenceOutcome {
        scores,
        source: ScoreSource::Logprobs,
        usage: response.usage,
        truncated,
    })
}
