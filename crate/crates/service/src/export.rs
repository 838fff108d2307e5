//! Turning review decisions into an alignment and draft rules.

use std::collections::{BTreeMap, BTreeSet};

use mapsmith::mapping::{render_sql, Atom, Rule, Term};
use mapsmith::schema::{Correspondence, SchemaDef};
use serde::{Deserialize, Serialize};

use crate::store::{Decision, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonRule {
    /// Always true: skeletons are starting points for a human to finish.
    pub draft: bool,
    pub rule: Rule,
    pub sql: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentExport {
    pub job_id: String,
    pub alignment: Vec<Correspondence>,
    pub skeletons: Vec<SkeletonRule>,
}

impl AlignmentExport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("exports serialize")
    }
}

/// Final verdict per pair: the decision with the highest sequence number wins.
pub fn latest_verdicts(decisions: &[Decision]) -> BTreeMap<Correspondence, &Decision> {
    let mut out: BTreeMap<Correspondence, &Decision> = BTreeMap::new();
    for d in decisions {
        match out.get(&d.pair) {
            Some(prev) if prev.seq > d.seq => {}
            _ => {
                out.insert(d.pair.clone(), d);
            }
        }
    }
    out
}

/// The accepted pairs; an edited pair contributes its replacement.
pub fn accepted_pairs(decisions: &[Decision]) -> BTreeSet<Correspondence> {
    latest_verdicts(decisions)
        .into_values()
        .filter_map(|d| match &d.verdict {
            Verdict::Accepted => Some(d.pair.clone()),
            Verdict::Edited { replacement } => Some(replacement.clone()),
            Verdict::Rejected => None,
        })
        .collect()
}

fn var(prefix: &str, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    format!("{prefix}_{clean}")
}

/// One single-atom rule per (source relation, target relation) with accepted
/// pairs. Every source column is bound; matched target columns take the
/// source variable, the rest are existential. When several source columns
/// map to one target column, the first in source order is used.
pub fn skeleton_rules(pairs: &BTreeSet<Correspondence>, source: &SchemaDef, target: &SchemaDef) -> Vec<Rule> {
    let mut groups: BTreeMap<(&str, &str), Vec<&Correspondence>> = BTreeMap::new();
    for p in pairs {
        groups
            .entry((p.source.relation.as_str(), p.target.relation.as_str()))
            .or_default()
            .push(p);
    }
    let mut rules = Vec::new();
    for ((s, t), group) in groups {
        let (Some(srel), Some(trel)) = (source.relation(s), target.relation(t)) else {
            continue;
        };
        let universals: Vec<String> = srel.attributes.iter().map(|a| var("v", &a.name)).collect();
        let mut existentials = Vec::new();
        let target_terms: Vec<Term> = trel
            .attributes
            .iter()
            .map(|ta| {
                let from = srel
                    .attributes
                    .iter()
                    .find(|sa| group.iter().any(|p| p.source.attribute == sa.name && p.target.attribute == ta.name));
                match from {
                    Some(sa) => Term::var(var("v", &sa.name)),
                    None => {
                        let e = var("e", &ta.name);
                        existentials.push(e.clone());
                        Term::var(e)
                    }
                }
            })
            .collect();
        rules.push(Rule {
            id: format!("draft_{s}_{t}"),
            source_atoms: vec![Atom::new(s, universals.iter().map(Term::var).collect())],
            universals,
            filters: Vec::new(),
            existentials,
            target_atoms: vec![Atom::new(t, target_terms)],
        });
    }
    rules
}

/// Depends only on its arguments, so replaying a decision log reproduces
/// the export exactly.
pub fn export_alignment(job_id: &str, decisions: &[Decision], source: &SchemaDef, target: &SchemaDef) -> AlignmentExport {
    let pairs = accepted_pairs(decisions);
    let skeletons = skeleton_rules(&pairs, source, target)
        .into_iter()
        .map(|rule| SkeletonRule {
            draft: true,
            sql: render_sql(&rule, source, target),
            rule,
        })
        .collect();
    AlignmentExport {
        job_id: job_id.to_string(),
        alignment: pairs.into_iter().collect(),
        skeletons,
    }
}
