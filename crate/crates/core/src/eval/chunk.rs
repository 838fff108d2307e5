//! Grouping rules into prompts.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::mapping::{relations_of_rule, Rule};
use crate::seed::rng;

/// Rules sharing one prompt, with the relations it has to show.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkGroup {
    pub rules: Vec<String>,
    pub source_relations: Vec<String>,
    pub target_relations: Vec<String>,
    /// Relation serializations saved by sharing: per-rule relation counts
    /// minus the deduplicated count.
    pub shared: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub mrpp: usize,
    pub groups: Vec<ChunkGroup>,
}

impl ChunkPlan {
    /// Relations serialized across all prompts.
    pub fn relations_shown(&self) -> usize {
        self.groups
            .iter()
            .map(|g| g.source_relations.len() + g.target_relations.len())
            .sum()
    }

    /// Relation serializations this plan saves over `other`, e.g. a random
    /// grouping of the same rules.
    pub fn savings_vs(&self, other: &ChunkPlan) -> isize {
        other.relations_shown() as isize - self.relations_shown() as isize
    }
}

fn group(members: &[&Rule]) -> ChunkGroup {
    let mut sources = BTreeSet::new();
    let mut targets = BTreeSet::new();
    let mut mentions = 0;
    for r in members {
        let (s, t) = relations_of_rule(r);
        mentions += s.len() + t.len();
        sources.extend(s);
        targets.extend(t);
    }
    ChunkGroup {
        rules: members.iter().map(|r| r.id.clone()).collect(),
        shared: mentions - sources.len() - targets.len(),
        source_relations: sources.into_iter().collect(),
        target_relations: targets.into_iter().collect(),
    }
}

/// Shuffles the rules with `seed` and cuts the order into groups of at most
/// `mrpp`.
pub fn plan_chunks(rules: &[Rule], mrpp: usize, seed: u64) -> Result<ChunkPlan, EvalError> {
    if mrpp == 0 {
        return Err(EvalError::InvalidMrpp);
    }
    let mut order: Vec<&Rule> = rules.iter().collect();
    order.shuffle(&mut rng(seed));
    Ok(ChunkPlan {
        mrpp,
        groups: order.chunks(mrpp).map(group).collect(),
    })
}

/// Relation keys of a rule; source and target names kept apart.
fn relation_keys(rule: &Rule) -> BTreeSet<String> {
    let (s, t) = relations_of_rule(rule);
    s.into_iter()
        .map(|r| format!("s:{r}"))
        .chain(t.into_iter().map(|r| format!("t:{r}")))
        .collect()
}

/// Greedy packing: each group starts from the unassigned rule with the most
/// relations, then repeatedly takes the rule sharing the most relations with
/// the group so far. Ties go to the smaller rule id.
pub fn plan_chunks_overlap_aware(rules: &[Rule], mrpp: usize) -> Result<ChunkPlan, EvalError> {
    if mrpp == 0 {
        return Err(EvalError::InvalidMrpp);
    }
    let mut left: Vec<(&Rule, BTreeSet<String>)> = rules.iter().map(|r| (r, relation_keys(r))).collect();
    left.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    let mut groups = Vec::new();
    while !left.is_empty() {
        let first = (0..left.len())
            .max_by(|&a, &b| left[a].1.len().cmp(&left[b].1.len()).then_with(|| left[b].0.id.cmp(&left[a].0.id)))
            .expect("rules remain");
        let (rule, mut seen) = left.remove(first);
        let mut members = vec![rule];
        while members.len() < mrpp && !left.is_empty() {
            let shared = |i: usize| left[i].1.intersection(&seen).count();
            let best = (0..left.len())
                .max_by(|&a, &b| shared(a).cmp(&shared(b)).then_with(|| left[b].0.id.cmp(&left[a].0.id)))
                .expect("rules remain");
            let (rule, rels) = left.remove(best);
            seen.extend(rels);
            members.push(rule);
        }
        groups.push(group(&members));
    }
    Ok(ChunkPlan { mrpp, groups })
}
