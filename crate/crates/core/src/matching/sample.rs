use std::collections::BTreeSet;

use rayon::prelude::*;

use super::aggregate::CandidateSet;
use super::MatchError;
use crate::gateway::{parse_structured, CompletionRequest, Gateway, StructuredAnswer, Usage};
use crate::prompt::{build_match_prompt, Direction, PromptSpec, TransformOptions};
use crate::schema::{AttrRef, AttributeDef, BroadType, Correspondence, RelationDef};
use crate::seed::derive_seed;

pub(super) fn direction_code(d: Direction) -> u64 {
    match d {
        Direction::Forward => 0,
        Direction::Swapped => 1,
    }
}

/// Source attributes sharing the target's broad type. A target of type
/// `Other` keeps everything.
pub fn prefilter<'a>(target: &AttributeDef, sources: &'a [AttributeDef]) -> Vec<&'a AttributeDef> {
    if target.broad_type == BroadType::Other {
        return sources.iter().collect();
    }
    sources.iter().filter(|a| a.broad_type == target.broad_type).collect()
}

/// A match prompt together with what it asks about.
#[derive(Debug, Clone)]
pub struct MatchPrompt {
    /// Index of the single-side attribute within its relation.
    pub attribute: usize,
    pub sample: usize,
    pub spec: PromptSpec,
}

/// Relations in (N-side, 1-side) roles for a direction.
fn roles<'a>(source: &'a RelationDef, target: &'a RelationDef, d: Direction) -> (&'a RelationDef, &'a RelationDef) {
    match d {
        Direction::Forward => (source, target),
        Direction::Swapped => (target, source),
    }
}

/// Every match prompt of one direction: for each attribute on the single side
/// and each sample index, a prompt with seed derived from (base, direction,
/// attribute, sample). Attributes whose prefiltered list is empty get none.
pub fn build_match_prompts(
    source: &RelationDef,
    target: &RelationDef,
    n: usize,
    base_seed: u64,
    opts: &TransformOptions,
    direction: Direction,
    prefilter_on: bool,
) -> Vec<MatchPrompt> {
    let (many, one) = roles(source, target, direction);
    let opts = TransformOptions {
        swap_tables: direction == Direction::Swapped,
        ..*opts
    };
    let mut out = Vec::new();
    for (j, attr) in one.attributes.iter().enumerate() {
        let shown = if prefilter_on {
            many.with_attributes(prefilter(attr, &many.attributes).into_iter().cloned().collect())
        } else {
            many.clone()
        };
        for i in 0..n {
            let seed = derive_seed(base_seed, &[direction_code(direction), 0, j as u64, i as u64]);
            if let Some(spec) = build_match_prompt(&shown, (one, attr), seed, &opts) {
                out.push(MatchPrompt {
                    attribute: j,
                    sample: i,
                    spec,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub sets: Vec<CandidateSet>,
    pub format_errors: usize,
    pub prompts: usize,
    pub usage: Usage,
}

/// Draws `n` candidate sets in one direction. Pairs are keyed (source,
/// target) whichever side was prompted. Unparseable answers count as empty.
#[allow(clippy::too_many_arguments)]
pub fn sample_candidates(
    gateway: &Gateway,
    source: &RelationDef,
    target: &RelationDef,
    n: usize,
    base_seed: u64,
    opts: &TransformOptions,
    direction: Direction,
    prefilter_on: bool,
) -> Result<SampleOutcome, MatchError> {
    if n == 0 {
        return Err(MatchError::InvalidConfig("n must be at least 1".into()));
    }
    let prompts = build_match_prompts(source, target, n, base_seed, opts, direction, prefilter_on);
    let (many, one) = roles(source, target, direction);

    let answers: Vec<(usize, Vec<Correspondence>, bool, Usage)> = prompts
        .par_iter()
        .map(|p| {
            let request = CompletionRequest::new(&p.spec.body).with_seed(p.spec.seed);
            let response = gateway.complete(&request)?;
            let one_ref = AttrRef::new(&one.name, &one.attributes[p.attribute].name);
            let (names, bad) = match parse_structured(&response.text, &p.spec.expected_output) {
                Ok(StructuredAnswer::Matches(names)) => (names, false),
                Ok(_) => unreachable!("match prompts carry a matches contract"),
                Err(e) => {
                    tracing::debug!(reason = %e, "unparseable match answer counted as empty");
                    (Vec::new(), true)
                }
            };
            let pairs = names
                .into_iter()
                .map(|name| {
                    let other = AttrRef::new(&many.name, name);
                    match direction {
                        Direction::Forward => Correspondence::new(other, one_ref.clone()),
                        Direction::Swapped => Correspondence::new(one_ref.clone(), other),
                    }
                })
                .collect();
            Ok((p.sample, pairs, bad, response.usage))
        })
        .collect::<Result<_, MatchError>>()?;

    let mut sets: Vec<CandidateSet> = (0..n)
        .map(|i| CandidateSet {
            direction,
            sample: i,
            pairs: BTreeSet::new(),
        })
        .collect();
    let mut usage = Usage::default();
    let mut format_errors = 0;
    for (i, pairs, bad, u) in answers {
        sets[i].pairs.extend(pairs);
        usage.add(&u);
        format_errors += bad as usize;
    }
    Ok(SampleOutcome {
        sets,
        format_errors,
        prompts: prompts.len(),
        usage,
    })
}
