//! Integrity checks of an instance against its schema.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::schema::{BroadType, Instance, RelationDef, Row, SchemaDef, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NotNull,
    TypeMismatch,
    DuplicateKey,
    DanglingForeignKey,
    /// Every non-key attribute is NULL or a labeled null.
    InformationFree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub relation: String,
    pub row: Row,
    pub detail: String,
}

/// Lists every violation in `instance`. Labeled nulls count as present values
/// and are exempt from type checks.
pub fn validate_instance(instance: &Instance, schema: &SchemaDef) -> Vec<Violation> {
    let mut out = Vec::new();
    for rel in &schema.relations {
        let Some(rows) = instance.relation(&rel.name) else { continue };
        let pos: BTreeMap<&str, usize> = rows
            .columns()
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let at = |name: &str| pos.get(name).copied();
        let push = |out: &mut Vec<Violation>, kind, row: &Row, detail: String| {
            out.push(Violation {
                kind,
                relation: rel.name.clone(),
                row: row.clone(),
                detail,
            })
        };

        let non_key: Vec<usize> = rel
            .non_key_positions()
            .into_iter()
            .filter_map(|p| at(&rel.attributes[p].name))
            .collect();
        let pk: Vec<usize> = rel.primary_key.iter().filter_map(|c| at(c)).collect();
        let mut keys_seen: BTreeSet<Vec<&Value>> = BTreeSet::new();

        for row in rows.rows() {
            for attr in &rel.attributes {
                let Some(p) = at(&attr.name) else { continue };
                let v = &row[p];
                if v.is_null() {
                    if !attr.nullable || rel.primary_key.contains(&attr.name) {
                        push(&mut out, ViolationKind::NotNull, row, format!("{} is NULL", attr.name));
                    }
                } else if !type_accepts(attr.broad_type, v) {
                    push(
                        &mut out,
                        ViolationKind::TypeMismatch,
                        row,
                        format!("{} = {v} is not {}", attr.name, attr.broad_type),
                    );
                }
            }
            if !pk.is_empty() {
                let key: Vec<&Value> = pk.iter().map(|&p| &row[p]).collect();
                if !key.iter().any(|v| v.is_null()) && !keys_seen.insert(key) {
                    push(
                        &mut out,
                        ViolationKind::DuplicateKey,
                        row,
                        format!("duplicate key ({})", rel.primary_key.join(", ")),
                    );
                }
            }
            if !non_key.is_empty() && non_key.iter().all(|&p| row[p].is_void()) {
                push(
                    &mut out,
                    ViolationKind::InformationFree,
                    row,
                    "no non-key attribute carries a value".into(),
                );
            }
        }
        dangling_foreign_keys(instance, schema, rel, &pos, &mut out);
    }
    out
}

fn dangling_foreign_keys(
    instance: &Instance,
    schema: &SchemaDef,
    rel: &RelationDef,
    pos: &BTreeMap<&str, usize>,
    out: &mut Vec<Violation>,
) {
    let Some(rows) = instance.relation(&rel.name) else { return };
    for fk in &rel.foreign_keys {
        let Some(cols) = fk.columns.iter().map(|c| pos.get(c.as_str()).copied()).collect::<Option<Vec<_>>>() else {
            continue;
        };
        let referenced: BTreeSet<Vec<&Value>> = match (
            instance.relation(&fk.ref_relation),
            schema.relation(&fk.ref_relation),
        ) {
            (Some(target_rows), Some(_)) => {
                let tpos: Option<Vec<usize>> = fk
                    .ref_columns
                    .iter()
                    .map(|c| target_rows.columns().iter().position(|x| x == c))
                    .collect();
                match tpos {
                    Some(tpos) => target_rows
                        .rows()
                        .map(|r| tpos.iter().map(|&p| &r[p]).collect())
                        .collect(),
                    None => continue,
                }
            }
            _ => BTreeSet::new(),
        };
        for row in rows.rows() {
            let key: Vec<&Value> = cols.iter().map(|&p| &row[p]).collect();
            if key.iter().any(|v| v.is_null()) {
                continue;
            }
            if !referenced.contains(&key) {
                out.push(Violation {
                    kind: ViolationKind::DanglingForeignKey,
                    relation: rel.name.clone(),
                    row: row.clone(),
                    detail: format!(
                        "({}) has no match in {}({})",
                        fk.columns.join(", "),
                        fk.ref_relation,
                        fk.ref_columns.join(", ")
                    ),
                });
            }
        }
    }
}

fn type_accepts(ty: BroadType, v: &Value) -> bool {
    match (ty, v) {
        (_, Value::Null | Value::Labeled(_)) => true,
        (BroadType::Numeric, v) => v.as_f64().is_some(),
        (BroadType::Boolean, Value::Num(n)) => n.0 == 0.0 || n.0 == 1.0,
        (BroadType::Boolean, Value::Str(s)) => matches!(
            s.trim().to_ascii_lowercase().as_str(),
            "true" | "false" | "t" | "f" | "yes" | "no" | "0" | "1"
        ),
        _ => true,
    }
}
