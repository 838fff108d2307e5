use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::schema::{AttributeDef, BroadType, Instance, RelationDef, Row, SchemaDef, Value};
use crate::seed::{derive_seed_str, rng};

/// Attempts at drawing a fresh primary key before a row is dropped.
const KEY_ATTEMPTS: usize = 32;

/// Synthetic rows for every relation of `schema`.
///
/// Keys are unique, foreign keys reference existing parent rows, and values
/// follow the declared types. Each nullable non-key attribute is NULL with
/// probability `null_prob`; each parent row is left without children with
/// probability `orphan_prob`. Relations whose key consists of foreign-key
/// columns may end up with fewer rows when the parent key space runs out.
pub fn generate_eval_instance(
    schema: &SchemaDef,
    rows_per_table: usize,
    null_prob: f64,
    orphan_prob: f64,
    seed: u64,
) -> Result<Instance, EvalError> {
    for p in [null_prob, orphan_prob] {
        if !(0.0..=1.0).contains(&p) {
            return Err(EvalError::InvalidProbability(p));
        }
    }
    let mut inst = Instance::empty_for(schema);
    // Rows of each generated relation, and which of them may have children.
    let mut generated: BTreeMap<&str, (Vec<Row>, Vec<bool>)> = BTreeMap::new();
    for rel in parents_first(schema) {
        let mut rng = rng(derive_seed_str(seed, &rel.name));
        let columns: Vec<String> = rel.attribute_names().map(String::from).collect();
        let pk: Vec<usize> = rel.primary_key.iter().filter_map(|c| rel.position(c)).collect();
        let mut seen_keys = BTreeSet::new();
        let mut rows = Vec::new();
        for i in 0..rows_per_table {
            let mut made = None;
            for _ in 0..KEY_ATTEMPTS {
                let Some(row) = draw_row(schema, rel, i, &generated, null_prob, &mut rng) else {
                    break;
                };
                let key: Vec<Value> = pk.iter().map(|&p| row[p].clone()).collect();
                if pk.is_empty() || seen_keys.insert(key) {
                    made = Some(row);
                    break;
                }
            }
            if let Some(row) = made {
                rows.push(row);
            }
        }
        let parents: Vec<bool> = rows.iter().map(|_| !rng.gen_bool(orphan_prob)).collect();
        for row in &rows {
            inst.insert(&rel.name, &columns, row.clone());
        }
        generated.insert(&rel.name, (rows, parents));
    }
    Ok(inst)
}

/// Relations ordered so that referenced relations come first. Members of a
/// reference cycle keep schema order.
fn parents_first(schema: &SchemaDef) -> Vec<&RelationDef> {
    let mut done: BTreeSet<&str> = BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < schema.relations.len() {
        let ready = schema.relations.iter().find(|r| {
            !done.contains(r.name.as_str())
                && r.foreign_keys
                    .iter()
                    .all(|fk| fk.ref_relation == r.name || done.contains(fk.ref_relation.as_str()))
        });
        let next = ready.unwrap_or_else(|| {
            schema
                .relations
                .iter()
                .find(|r| !done.contains(r.name.as_str()))
                .expect("some relation remains")
        });
        done.insert(&next.name);
        out.push(next);
    }
    out
}

/// One row, or `None` when a required parent has no rows to reference.
fn draw_row(
    schema: &SchemaDef,
    rel: &RelationDef,
    index: usize,
    generated: &BTreeMap<&str, (Vec<Row>, Vec<bool>)>,
    null_prob: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Row> {
    let mut row: Vec<Option<Value>> = vec![None; rel.attributes.len()];
    for fk in &rel.foreign_keys {
        let open: Vec<&Row> = generated
            .get(fk.ref_relation.as_str())
            .map(|(rows, open)| rows.iter().zip(open).filter(|(_, o)| **o).map(|(r, _)| r).collect())
            .unwrap_or_default();
        let parent = (!open.is_empty()).then(|| open[rng.gen_range(0..open.len())]);
        let parent_rel = schema.relation(&fk.ref_relation)?;
        for (col, ref_col) in fk.columns.iter().zip(&fk.ref_columns) {
            let pos = rel.position(col)?;
            row[pos] = Some(match parent {
                Some(prow) => prow[parent_rel.position(ref_col)?].clone(),
                None if rel.attributes[pos].nullable => Value::Null,
                None => return None,
            });
        }
    }
    let pk: BTreeSet<&str> = rel.primary_key.iter().map(String::as_str).collect();
    for (pos, attr) in rel.attributes.iter().enumerate() {
        if row[pos].is_some() {
            continue;
        }
        let value = if pk.contains(attr.name.as_str()) {
            key_value(rel, attr, index)
        } else if attr.nullable && rng.gen_bool(null_prob) {
            Value::Null
        } else {
            random_value(attr, rng)
        };
        row[pos] = Some(value);
    }
    Some(row.into_iter().map(|v| v.expect("every position filled")).collect())
}

fn key_value(rel: &RelationDef, attr: &AttributeDef, index: usize) -> Value {
    match attr.broad_type {
        BroadType::Numeric => Value::num((index + 1) as f64),
        _ => Value::str(format!("{}-{}", rel.name, index + 1)),
    }
}

fn random_value(attr: &AttributeDef, rng: &mut ChaCha8Rng) -> Value {
    let lower = attr.declared_type.to_ascii_lowercase();
    match attr.broad_type {
        BroadType::Numeric => {
            if ["dec", "numeric", "float", "real", "double", "money"].iter().any(|t| lower.starts_with(t)) {
                Value::num((rng.gen_range(0..100_000) as f64) / 100.0)
            } else {
                Value::num(rng.gen_range(1..=9999) as f64)
            }
        }
        BroadType::Text => Value::str(format!("{}_{}", attr.name, rng.gen_range(0..1000))),
        BroadType::DateTime => Value::str(format!(
            "{}-{:02}-{:02}",
            rng.gen_range(1970..=2024),
            rng.gen_range(1..=12),
            rng.gen_range(1..=28)
        )),
        BroadType::Boolean => Value::str(if rng.gen_bool(0.5) { "true" } else { "false" }),
        BroadType::Other => Value::str(format!("{:08x}", rng.gen::<u32>())),
    }
}
