//! Independent oracles shared by the integration tests. Nothing here calls
//! the library code it is used to check.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mapsmith::mapping::{Mapping, Term};
use mapsmith::schema::{Instance, Row, SchemaDef, Value};
use mapsmith::seed::rng;
use rand::seq::SliceRandom;
use rand::Rng;

pub type Prefs = BTreeMap<u8, Vec<u8>>;

/// Random, possibly incomplete, preference lists: `na` proposers numbered
/// from 0, `nb` receivers numbered from 100.
pub fn random_prefs(seed: u64, max_side: u8) -> (Prefs, Prefs) {
    let mut r = rng(seed);
    let na = r.gen_range(1..=max_side);
    let nb = r.gen_range(1..=max_side);
    let a_ids: Vec<u8> = (0..na).collect();
    let b_ids: Vec<u8> = (100..100 + nb).collect();
    let list = |from: &[u8], r: &mut rand_chacha::ChaCha8Rng| {
        let mut v: Vec<u8> = from.iter().copied().filter(|_| r.gen_bool(0.8)).collect();
        v.shuffle(r);
        v
    };
    let pa = a_ids.iter().map(|&a| (a, list(&b_ids, &mut r))).collect();
    let pb = b_ids.iter().map(|&b| (b, list(&a_ids, &mut r))).collect();
    (pa, pb)
}

fn rank_of(list: &[u8], x: u8) -> Option<usize> {
    list.iter().position(|&y| y == x)
}

/// Every pair (a, b), each listing the other, where both are unmatched or
/// prefer the other to their partner. Found by enumerating all pairs.
pub fn blocking_pairs(pa: &Prefs, pb: &Prefs, matching: &[(u8, u8)]) -> Vec<(u8, u8)> {
    let partner_a = |a: u8| matching.iter().find(|m| m.0 == a).map(|m| m.1);
    let partner_b = |b: u8| matching.iter().find(|m| m.1 == b).map(|m| m.0);
    let mut out = Vec::new();
    for (&a, la) in pa {
        for (&b, lb) in pb {
            let (Some(ra), Some(rb)) = (rank_of(la, b), rank_of(lb, a)) else { continue };
            if partner_a(a) == Some(b) {
                continue;
            }
            let a_wants = partner_a(a).is_none_or(|p| ra < rank_of(la, p).unwrap());
            let b_wants = partner_b(b).is_none_or(|p| rb < rank_of(lb, p).unwrap());
            if a_wants && b_wants {
                out.push((a, b));
            }
        }
    }
    out
}

/// Counts of (FP, FN, TP) by nested loops over deduplicated row lists.
pub fn naive_counts(pred: &[Row], gold: &[Row]) -> (usize, usize, usize) {
    let dedup = |rows: &[Row]| {
        let mut out: Vec<Row> = Vec::new();
        for r in rows {
            if !out.iter().any(|o| o == r) {
                out.push(r.clone());
            }
        }
        out
    };
    let (p, g) = (dedup(pred), dedup(gold));
    let tp = p.iter().filter(|r| g.iter().any(|x| x == *r)).count();
    (p.len() - tp, g.len() - tp, tp)
}

fn key_positions(schema: &SchemaDef, rel: &str) -> Vec<usize> {
    let r = schema.relation(rel).unwrap();
    let mut keys: BTreeSet<&str> = r.primary_key.iter().map(String::as_str).collect();
    for fk in &r.foreign_keys {
        keys.extend(fk.columns.iter().map(String::as_str));
    }
    r.attributes
        .iter()
        .enumerate()
        .filter(|(_, a)| keys.contains(a.name.as_str()))
        .map(|(i, _)| i)
        .collect()
}

fn non_key(schema: &SchemaDef, rel: &str, row: &Row) -> Row {
    let keys = key_positions(schema, rel);
    row.iter()
        .enumerate()
        .filter(|(i, _)| !keys.contains(i))
        .map(|(_, v)| v.clone())
        .collect()
}

/// Per relation name: (FP, FN, TP) of the non-key projections, skipping
/// relations empty on both sides.
pub fn naive_table_counts(pred: &Instance, gold: &Instance, schema: &SchemaDef) -> BTreeMap<String, (usize, usize, usize)> {
    let mut out = BTreeMap::new();
    for rel in &schema.relations {
        let p: Vec<Row> = pred.rows_of(&rel.name).map(|r| non_key(schema, &rel.name, r)).collect();
        let g: Vec<Row> = gold.rows_of(&rel.name).map(|r| non_key(schema, &rel.name, r)).collect();
        if p.is_empty() && g.is_empty() {
            continue;
        }
        out.insert(rel.name.clone(), naive_counts(&p, &g));
    }
    out
}

/// One naive join query: atoms in relation order plus groups of (atom,
/// position) cells that must hold one equal, non-NULL value.
#[derive(Debug, Clone, PartialEq)]
struct NaiveQuery {
    name: Vec<String>,
    relations: Vec<String>,
    equal: Vec<Vec<(usize, usize)>>,
}

fn naive_queries(gold: &Mapping) -> Vec<NaiveQuery> {
    let mut out: Vec<NaiveQuery> = Vec::new();
    for rule in &gold.rules {
        let distinct: BTreeSet<&str> = rule.target_atoms.iter().map(|a| a.relation.as_str()).collect();
        if distinct.len() < 2 {
            continue;
        }
        let mut atoms = rule.target_atoms.clone();
        atoms.sort_by(|a, b| a.relation.cmp(&b.relation).then_with(|| a.terms.cmp(&b.terms)));
        let mut cells: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
        for (i, atom) in atoms.iter().enumerate() {
            let keys = key_positions(&gold.target, &atom.relation);
            for (p, t) in atom.terms.iter().enumerate() {
                if let Term::Var(v) = t {
                    if keys.contains(&p) {
                        cells.entry(v.as_str()).or_default().push((i, p));
                    }
                }
            }
        }
        let mut equal: Vec<Vec<(usize, usize)>> = cells
            .into_values()
            .filter(|c| c.iter().map(|x| x.0).collect::<BTreeSet<_>>().len() > 1)
            .collect();
        equal.sort();
        let q = NaiveQuery {
            name: vec![rule.id.clone()],
            relations: atoms.iter().map(|a| a.relation.clone()).collect(),
            equal,
        };
        match out.iter_mut().find(|o| o.relations == q.relations && o.equal == q.equal) {
            Some(o) => o.name.push(rule.id.clone()),
            None => out.push(q),
        }
    }
    out
}

fn naive_eval(q: &NaiveQuery, inst: &Instance, schema: &SchemaDef) -> Vec<Row> {
    let tables: Vec<Vec<&Row>> = q.relations.iter().map(|r| inst.rows_of(r).collect()).collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; tables.len()];
    if tables.iter().any(|t| t.is_empty()) {
        return out;
    }
    loop {
        let rows: Vec<&Row> = idx.iter().zip(&tables).map(|(&i, t)| t[i]).collect();
        let ok = q.equal.iter().all(|cells| {
            let first = &rows[cells[0].0][cells[0].1];
            !first.is_null() && cells.iter().all(|&(a, p)| &rows[a][p] == first)
        });
        if ok {
            let mut projected = Vec::new();
            for (rel, row) in q.relations.iter().zip(&rows) {
                projected.extend(non_key(schema, rel, row));
            }
            out.push(projected);
        }
        // odometer over the cartesian product
        let mut k = 0;
        loop {
            if k == idx.len() {
                return out;
            }
            idx[k] += 1;
            if idx[k] < tables[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Per join query name ("r6+r7" style): (FP, FN, TP), skipping queries empty
/// on both sides.
pub fn naive_join_counts(gold_mapping: &Mapping, pred: &Instance, gold: &Instance) -> BTreeMap<String, (usize, usize, usize)> {
    let mut out = BTreeMap::new();
    for q in naive_queries(gold_mapping) {
        let p = naive_eval(&q, pred, &gold_mapping.target);
        let g = naive_eval(&q, gold, &gold_mapping.target);
        if p.is_empty() && g.is_empty() {
            continue;
        }
        out.insert(q.name.join("+"), naive_counts(&p, &g));
    }
    out
}

/// A random instance over `schema` with values from tiny domains so that
/// joins and overlaps actually happen; keys may be NULL or labeled.
pub fn random_instance(schema: &SchemaDef, seed: u64, max_rows: usize) -> Instance {
    let mut r = rng(seed);
    let mut inst = Instance::empty_for(schema);
    for rel in &schema.relations {
        let cols: Vec<String> = rel.attributes.iter().map(|a| a.name.clone()).collect();
        let keys = key_positions(schema, &rel.name);
        let n = r.gen_range(0..=max_rows);
        for _ in 0..n {
            let row = (0..cols.len())
                .map(|i| {
                    if keys.contains(&i) {
                        match r.gen_range(0..10) {
                            0 => Value::Null,
                            1..=2 => Value::Labeled(format!("L{}", r.gen_range(0..3))),
                            _ => Value::num(r.gen_range(1..6) as f64),
                        }
                    } else {
                        match r.gen_range(0..8) {
                            0 => Value::Null,
                            1 => Value::Labeled(format!("L{}", r.gen_range(0..3))),
                            _ => Value::str(["x", "y", "z"][r.gen_range(0..3)]),
                        }
                    }
                })
                .collect();
            inst.insert(&rel.name, &cols, row);
        }
    }
    inst
}
