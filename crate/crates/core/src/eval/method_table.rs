//! Matching results by method and k, averaged over seeds: one row per
//! (method, experiment, k) as in a results table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{metrics_at_k, Prf, K};
use super::EvalError;
use crate::gateway::Gateway;
use crate::matching::{collect_evidence, Fusion, MatchConfig, MatchError, MatchResult};
use crate::prompt::Direction;
use crate::schema::{Correspondence, RelationDef, SchemaDef};
use crate::seed::derive_seed;

/// One relation pair of a benchmark with its gold correspondences.
#[derive(Debug, Clone)]
pub struct SchemaPairCase {
    pub source: RelationDef,
    pub target: RelationDef,
    pub gold: BTreeSet<Correspondence>,
}

impl SchemaPairCase {
    /// Every relation pair of two schemata that has at least one gold
    /// correspondence.
    pub fn from_schemas(source: &SchemaDef, target: &SchemaDef, gold: &[Correspondence]) -> Vec<Self> {
        let mut out = Vec::new();
        for s in &source.relations {
            for t in &target.relations {
                let pairs: BTreeSet<Correspondence> = gold
                    .iter()
                    .filter(|c| c.source.relation == s.name && c.target.relation == t.name)
                    .cloned()
                    .collect();
                if !pairs.is_empty() {
                    out.push(Self {
                        source: s.clone(),
                        target: t.clone(),
                        gold: pairs,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub experiment: String,
    pub k: String,
    pub metrics: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTable {
    pub rows: Vec<MethodRow>,
    /// Largest k any Stable or Multiply result can fill.
    pub stable_k: usize,
    pub multiply_k: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Evidence is collected once per (seed, case) and reused by every method.
/// Unranked views report at k = max; Stable and Multiply stop at the longest
/// list they produce; Average runs to `average_k`.
pub fn method_table(
    gateway: &Gateway,
    cases: &[SchemaPairCase],
    seeds: &[u64],
    base: &MatchConfig,
    stable_rounds: usize,
    average_k: usize,
) -> Result<MethodTable, TableError> {
    let views: [(&str, &str, View); 5] = [
        ("Aggregation", "Original tables", View::One(Direction::Forward)),
        ("Aggregation", "Swapped tables", View::One(Direction::Swapped)),
        ("Bidirectional", "Stable Matching", View::Fused(Fusion::Stable { k: stable_rounds.max(1) })),
        ("Bidirectional", "Average", View::Fused(Fusion::Average)),
        ("Bidirectional", "Multiply", View::Fused(Fusion::Multiply)),
    ];
    // results[view][seed][case]
    let mut results: Vec<Vec<Vec<(MatchResult, &BTreeSet<Correspondence>)>>> = vec![Vec::new(); views.len()];
    for &seed in seeds {
        let mut per_view: Vec<Vec<_>> = vec![Vec::new(); views.len()];
        for (c, case) in cases.iter().enumerate() {
            let config = MatchConfig {
                seed: derive_seed(seed, &[c as u64]),
                bidirectional: true,
                ..base.clone()
            };
            let ev = collect_evidence(gateway, &case.source, &case.target, &config)?;
            for (v, (_, _, view)) in views.iter().enumerate() {
                let r = match view {
                    View::One(d) => ev.one_direction(*d),
                    View::Fused(f) => ev.fused(*f),
                };
                per_view[v].push((r, &case.gold));
            }
        }
        for (v, r) in per_view.into_iter().enumerate() {
            results[v].push(r);
        }
    }
    let longest = |v: usize| {
        results[v]
            .iter()
            .flatten()
            .map(|(r, _)| r.pipeline_k())
            .max()
            .unwrap_or(0)
    };
    let (stable_k, multiply_k) = (longest(2), longest(4));
    let mut rows = Vec::new();
    for (v, (method, experiment, view)) in views.iter().enumerate() {
        let ks: Vec<K> = match view {
            View::One(_) => vec![K::Max],
            View::Fused(Fusion::Average) => (1..=average_k.max(1)).map(K::At).collect(),
            View::Fused(_) => (1..=longest(v).max(1)).map(K::At).collect(),
        };
        for k in ks {
            let per_seed = results[v]
                .iter()
                .map(|cases| {
                    let scores = cases
                        .iter()
                        .filter(|(_, gold)| !gold.is_empty())
                        .map(|(r, gold)| metrics_at_k(&r.ranked_pairs(), gold, k))
                        .collect::<Result<Vec<_>, _>>()?;
                    Prf::mean(&scores).ok_or(EvalError::EmptyGold)
                })
                .collect::<Result<Vec<_>, EvalError>>()?;
            rows.push(MethodRow {
                method: method.to_string(),
                experiment: experiment.to_string(),
                k: k.to_string(),
                metrics: Prf::mean(&per_seed).ok_or(EvalError::EmptyGold)?,
            });
        }
    }
    Ok(MethodTable {
        rows,
        stable_k,
        multiply_k,
    })
}

#[derive(Debug, Clone, Copy)]
enum View {
    One(Direction),
    Fused(Fusion),
}

impl MethodTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,experiment,k,precision,recall,f1\n");
        for r in &self.rows {
            let m = r.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6}",
                r.method, r.experiment, r.k, m.precision, m.recall, m.f1
            );
        }
        out
    }

    pub fn render_text(&self) -> String {
        let mut out = format!("{:<14} {:<16} {:>4} {:>6} {:>6} {:>6}\n", "Method", "Experiment", "k", "P@k", "R@k", "F1@k");
        for r in &self.rows {
            let m = r.metrics;
            let _ = writeln!(
                out,
                "{:<14} {:<16} {:>4} {:>6.2} {:>6.2} {:>6.2}",
                r.method, r.experiment, r.k, m.precision, m.recall, m.f1
            );
        }
        out
    }

    /// The k values reported per (method, experiment).
    pub fn ks(&self) -> BTreeMap<(String, String), Vec<String>> {
        let mut out: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
        for r in &self.rows {
            out.entry((r.method.clone(), r.experiment.clone())).or_default().push(r.k.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fixtures::{drugs_gold_alignment, source_schema, target_schema};
    use crate::gateway::Oracle;
    use crate::schema::AttrRef;

    fn cases() -> Vec<SchemaPairCase> {
        let (s, t) = (source_schema(), target_schema());
        let gold: BTreeSet<Correspondence> = drugs_gold_alignment().into_iter().collect();
        let mut out = Vec::new();
        for sr in &s.relations {
            for tr in &t.relations {
                out.push(SchemaPairCase {
                    source: sr.clone(),
                    target: tr.clone(),
                    gold: gold
                        .iter()
                        .filter(|c| c.source.relation == sr.name && c.target.relation == tr.name)
                        .cloned()
                        .collect(),
                });
            }
        }
        out
    }

    #[test]
    fn rows_stop_at_pipeline_k() {
        let mut weights: Vec<(Correspondence, f64)> = drugs_gold_alignment().into_iter().map(|c| (c, 0.8)).collect();
        weights.push((
            Correspondence::new(AttrRef::new("trial", "month"), AttrRef::new("Clinical_Trials", "funder")),
            0.1,
        ));
        let gw = Gateway::new(Arc::new(Oracle::new(weights).into_backend()));
        let t = method_table(&gw, &cases(), &[1, 2], &MatchConfig::default(), 2, 3).unwrap();
        let ks = t.ks();
        let key = |a: &str, b: &str| ks[&(a.to_string(), b.to_string())].clone();
        assert_eq!(key("Aggregation", "Original tables"), ["max"]);
        assert_eq!(key("Bidirectional", "Average"), ["1", "2", "3"]);
        assert_eq!(key("Bidirectional", "Multiply").len(), t.multiply_k);
        assert_eq!(key("Bidirectional", "Stable Matching").len(), t.stable_k);
        assert!(t.stable_k <= 2);
        // date has three true sources, so multiply can fill k = 3
        assert_eq!(t.multiply_k, 3);
        let csv = t.to_csv();
        assert_eq!(csv, method_table(&gw, &cases(), &[1, 2], &MatchConfig::default(), 2, 3).unwrap().to_csv());
    }
}
