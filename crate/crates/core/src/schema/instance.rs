use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use ordered_float::OrderedFloat;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value as Json};
use thiserror::Error;

use super::SchemaDef;

/// JSON key marking a labeled null in instance files.
pub const LABELED_NULL_KEY: &str = "$null_id";

/// A cell value.
///
/// `Null` means "no information". `Labeled` is a generated surrogate: it
/// compares equal only to a labeled null with the same id and never to a
/// constant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Null,
    Num(OrderedFloat<f64>),
    Str(String),
    Labeled(String),
}

impl Value {
    pub fn num(n: f64) -> Self {
        Value::Num(OrderedFloat(n))
    }

    pub fn str(s: impl Into<String>) -> Self {
        Value::Str(s.into())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Null or labeled null: carries no semantic content.
    pub fn is_void(&self) -> bool {
        matches!(self, Value::Null | Value::Labeled(_))
    }

    /// Numeric reading of the value, parsing strings if needed.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(n) => Some(n.0),
            Value::Str(s) => s.trim().parse::<f64>().ok().filter(|f| f.is_finite()),
            _ => None,
        }
    }

    fn to_json(&self) -> Json {
        match self {
            Value::Null => Json::Null,
            Value::Num(n) => {
                let f = n.0;
                if f.fract() == 0.0 && f.abs() < 9.0e15 {
                    Json::from(f as i64)
                } else {
                    serde_json::Number::from_f64(f).map_or(Json::Null, Json::Number)
                }
            }
            Value::Str(s) => Json::String(s.clone()),
            Value::Labeled(id) => {
                let mut m = Map::new();
                m.insert(LABELED_NULL_KEY.to_string(), Json::String(id.clone()));
                Json::Object(m)
            }
        }
    }

    fn from_json(v: Json) -> Result<Self, String> {
        Ok(match v {
            Json::Null => Value::Null,
            Json::Bool(b) => Value::Str(b.to_string()),
            Json::Number(n) => Value::num(n.as_f64().ok_or("non-finite number")?),
            Json::String(s) => Value::Str(s),
            Json::Object(mut m) => match (m.remove(LABELED_NULL_KEY), m.is_empty()) {
                (Some(Json::String(id)), true) => Value::Labeled(id),
                _ => return Err(format!("object values must be {{\"{LABELED_NULL_KEY}\": \"<id>\"}}")),
            },
            Json::Array(_) => return Err("array is not a cell value".into()),
        })
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Num(n) => {
                if n.0.fract() == 0.0 && n.0.abs() < 9.0e15 {
                    write!(f, "{}", n.0 as i64)
                } else {
                    write!(f, "{}", n.0)
                }
            }
            Value::Str(s) => f.write_str(s),
            Value::Labeled(id) => write!(f, "_:{id}"),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Value::from_json(Json::deserialize(d)?).map_err(D::Error::custom)
    }
}

/// Positional row, ordered like the relation's attributes.
pub type Row = Vec<Value>;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("malformed instance document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("instance does not conform to schema: {0}")]
    Conformance(String),
    #[error("reading instance file: {0}")]
    Io(#[from] std::io::Error),
}

/// Rows of one relation under set semantics.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RelationRows {
    columns: Vec<String>,
    rows: BTreeSet<Row>,
}

impl RelationRows {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: BTreeSet::new(),
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &Row> + Clone {
        self.rows.iter()
    }

    pub fn row_set(&self) -> &BTreeSet<Row> {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Inserts a row; returns false if it was already present.
    ///
    /// # Panics
    /// If the row arity differs from the column count.
    pub fn insert(&mut self, row: Row) -> bool {
        assert_eq!(row.len(), self.columns.len(), "row arity mismatch");
        self.rows.insert(row)
    }
}

/// Relation name to rows. Relations with no rows may be absent.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Instance {
    relations: BTreeMap<String, RelationRows>,
}

impl Instance {
    pub fn new() -> Self {
        Self::default()
    }

    /// An instance with an empty row set for every relation of `schema`.
    pub fn empty_for(schema: &SchemaDef) -> Self {
        let relations = schema
            .relations
            .iter()
            .map(|r| {
                (
                    r.name.clone(),
                    RelationRows::new(r.attribute_names().map(str::to_string).collect()),
                )
            })
            .collect();
        Self { relations }
    }

    pub fn relation(&self, name: &str) -> Option<&RelationRows> {
        self.relations.get(name)
    }

    pub fn relations(&self) -> impl Iterator<Item = (&str, &RelationRows)> {
        self.relations.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn relation_mut(&mut self, name: &str, columns: &[String]) -> &mut RelationRows {
        self.relations
            .entry(name.to_string())
            .or_insert_with(|| RelationRows::new(columns.to_vec()))
    }

    pub fn insert(&mut self, relation: &str, columns: &[String], row: Row) -> bool {
        self.relation_mut(relation, columns).insert(row)
    }

    pub fn total_rows(&self) -> usize {
        self.relations.values().map(RelationRows::len).sum()
    }

    /// Row set of `relation`, or an empty set when it has no rows.
    pub fn rows_of<'a>(&'a self, relation: &str) -> Box<dyn Iterator<Item = &'a Row> + 'a> {
        match self.relations.get(relation) {
            Some(r) => Box::new(r.rows.iter()),
            None => Box::new(std::iter::empty()),
        }
    }

    /// True if every row of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &Instance) -> bool {
        self.relations.iter().all(|(name, rows)| match other.relations.get(name) {
            Some(o) => rows.rows.is_subset(&o.rows),
            None => rows.rows.is_empty(),
        })
    }

    /// Parses an instance document, checking it against `schema`.
    pub fn from_json_str(text: &str, schema: &SchemaDef) -> Result<Self, InstanceError> {
        let doc: BTreeMap<String, Vec<Map<String, Json>>> = serde_json::from_str(text)?;
        let mut inst = Instance::new();
        for (rel_name, rows) in doc {
            let rel = schema.relation(&rel_name).ok_or_else(|| {
                InstanceError::Conformance(format!("unknown relation {rel_name}"))
            })?;
            let columns: Vec<String> = rel.attribute_names().map(str::to_string).collect();
            let target = inst.relation_mut(&rel_name, &columns);
            for (i, mut obj) in rows.into_iter().enumerate() {
                let mut row = Vec::with_capacity(columns.len());
                for c in &columns {
                    let v = obj.remove(c).ok_or_else(|| {
                        InstanceError::Conformance(format!("{rel_name} row {i} lacks attribute {c}"))
                    })?;
                    row.push(Value::from_json(v).map_err(|e| {
                        InstanceError::Conformance(format!("{rel_name} row {i}, {c}: {e}"))
                    })?);
                }
                if let Some(extra) = obj.keys().next() {
                    return Err(InstanceError::Conformance(format!(
                        "{rel_name} row {i} has unknown attribute {extra}"
                    )));
                }
                target.insert(row);
            }
        }
        Ok(inst)
    }

    pub fn load(path: impl AsRef<Path>, schema: &SchemaDef) -> Result<Self, InstanceError> {
        Self::from_json_str(&std::fs::read_to_string(path)?, schema)
    }

    /// Relation name to array of row objects; labeled nulls as `{"$null_id": id}`.
    pub fn to_json_value(&self) -> Json {
        let mut out = Map::new();
        for (name, rel) in &self.relations {
            let rows = rel
                .rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Json> = rel
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(c, v)| (c.clone(), v.to_json()))
                        .collect();
                    Json::Object(obj)
                })
                .collect();
            out.insert(name.clone(), Json::Array(rows));
        }
        Json::Object(out)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("instance serializes")
    }
}
