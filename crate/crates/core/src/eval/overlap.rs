//! Execution-based comparison of a predicted and a gold target instance.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::metrics::Prf;
use crate::mapping::{evaluate_conjunctive, Mapping, QueryAtom, Rule, Slot, Term};
use crate::schema::{Instance, Row, SchemaDef};

/// Counts and scores of one test query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query: String,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tp: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapScore {
    pub queries: Vec<QueryScore>,
    /// Mean over the queries; absent when every query was dropped.
    pub mean: Option<Prf>,
}

impl OverlapScore {
    fn from_queries(queries: Vec<QueryScore>) -> Self {
        let scores: Vec<Prf> = queries
            .iter()
            .map(|q| Prf {
                precision: q.precision,
                recall: q.recall,
                f1: q.f1,
            })
            .collect();
        Self {
            mean: Prf::mean(&scores),
            queries,
        }
    }
}

/// Set arithmetic between predicted and gold rows. Precision is 0 when
/// nothing was predicted, recall is 0 when nothing was expected.
pub fn row_set_metrics(predicted: &BTreeSet<Row>, gold: &BTreeSet<Row>) -> (usize, usize, usize, Prf) {
    let tp = predicted.intersection(gold).count();
    let fp = predicted.len() - tp;
    let fn_ = gold.len() - tp;
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    (fp, fn_, tp, Prf::new(ratio(tp, fp), ratio(tp, fn_)))
}

fn score(query: String, predicted: &BTreeSet<Row>, gold: &BTreeSet<Row>) -> QueryScore {
    let (fp, fn_, tp, prf) = row_set_metrics(predicted, gold);
    QueryScore {
        query,
        fp,
        fn_,
        tp,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
    }
}

/// Rows of `relation` projected onto its non-key columns.
fn projected(instance: &Instance, schema: &SchemaDef, relation: &str) -> BTreeSet<Row> {
    let positions = schema.relation(relation).map(|r| r.non_key_positions()).unwrap_or_default();
    instance
        .rows_of(relation)
        .map(|row| positions.iter().map(|&p| row[p].clone()).collect())
        .collect()
}

/// One query per target relation over its non-key columns. Relations empty
/// in both instances are left out.
pub fn table_overlap(predicted: &Instance, gold: &Instance, schema: &SchemaDef) -> OverlapScore {
    let queries = schema
        .relations
        .iter()
        .filter_map(|rel| {
            let p = projected(predicted, schema, &rel.name);
            let g = projected(gold, schema, &rel.name);
            (!(p.is_empty() && g.is_empty())).then(|| score(rel.name.clone(), &p, &g))
        })
        .collect();
    OverlapScore::from_queries(queries)
}

/// The join query of a gold rule: its target atoms joined on variables that
/// occur at key columns of more than one atom, projected onto every non-key
/// column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinQuery {
    pub rules: Vec<String>,
    atoms: Vec<(String, Vec<Slot>)>,
    projection: Vec<usize>,
    var_count: usize,
}

impl JoinQuery {
    /// `None` when the rule touches a single target relation.
    pub fn from_rule(rule: &Rule, target: &SchemaDef) -> Option<Self> {
        let relations: BTreeSet<&str> = rule.target_atoms.iter().map(|a| a.relation.as_str()).collect();
        if relations.len() < 2 {
            return None;
        }
        let mut atoms: Vec<_> = rule.target_atoms.iter().collect();
        atoms.sort_by(|a, b| a.relation.cmp(&b.relation).then_with(|| a.terms.cmp(&b.terms)));

        // Variables at key positions, with the atoms they appear in.
        let mut key_vars: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
        for (i, atom) in atoms.iter().enumerate() {
            let rel = target.relation(&atom.relation)?;
            let keys = rel.key_columns();
            for (term, attr) in atom.terms.iter().zip(&rel.attributes) {
                if let (Term::Var(v), true) = (term, keys.contains(attr.name.as_str())) {
                    key_vars.entry(v).or_default().insert(i);
                }
            }
        }
        let mut var_of: BTreeMap<&str, usize> = BTreeMap::new();
        let mut next = 0;
        let mut projection = Vec::new();
        let mut out_atoms = Vec::new();
        for atom in &atoms {
            let rel = target.relation(&atom.relation)?;
            let keys = rel.key_columns();
            let mut slots = Vec::new();
            for (term, attr) in atom.terms.iter().zip(&rel.attributes) {
                let is_key = keys.contains(attr.name.as_str());
                let join_var = match term {
                    Term::Var(v) if is_key && key_vars.get(v.as_str()).is_some_and(|s| s.len() > 1) => Some(v.as_str()),
                    _ => None,
                };
                let slot = match join_var {
                    Some(v) => Slot::Var(*var_of.entry(v).or_insert_with(|| {
                        next += 1;
                        next - 1
                    })),
                    None if is_key => Slot::Ignore,
                    None => {
                        next += 1;
                        projection.push(next - 1);
                        Slot::Var(next - 1)
                    }
                };
                slots.push(slot);
            }
            out_atoms.push((atom.relation.clone(), slots));
        }
        Some(Self {
            rules: vec![rule.id.clone()],
            atoms: out_atoms,
            projection,
            var_count: next,
        })
    }

    pub fn name(&self) -> String {
        self.rules.join("+")
    }

    pub fn evaluate(&self, instance: &Instance) -> BTreeSet<Row> {
        let atoms: Vec<QueryAtom> = self
            .atoms
            .iter()
            .map(|(relation, slots)| QueryAtom {
                relation: relation.clone(),
                slots: slots.clone(),
            })
            .collect();
        evaluate_conjunctive(&atoms, self.var_count, instance)
            .into_iter()
            .map(|b| {
                self.projection
                    .iter()
                    .map(|&v| b[v].clone().expect("projected variables are bound"))
                    .collect()
            })
            .collect()
    }
}

/// Distinct join queries of a gold mapping, in rule order. Rules yielding an
/// identical query are merged into the first.
pub fn join_queries(gold_mapping: &Mapping) -> Vec<JoinQuery> {
    let mut out: Vec<JoinQuery> = Vec::new();
    for rule in &gold_mapping.rules {
        let Some(q) = JoinQuery::from_rule(rule, &gold_mapping.target) else {
            continue;
        };
        match out.iter_mut().find(|o| o.atoms == q.atoms) {
            Some(existing) => existing.rules.extend(q.rules),
            None => out.push(q),
        }
    }
    out
}

pub fn join_overlap(gold_mapping: &Mapping, predicted: &Instance, gold: &Instance) -> OverlapScore {
    let queries = join_queries(gold_mapping)
        .iter()
        .filter_map(|q| {
            let p = q.evaluate(predicted);
            let g = q.evaluate(gold);
            (!(p.is_empty() && g.is_empty())).then(|| score(q.name(), &p, &g))
        })
        .collect();
    OverlapScore::from_queries(queries)
}
