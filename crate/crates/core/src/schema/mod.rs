//! Relational schemata together with the hints (descriptions, declared types,
//! sample values) that matching and mapping generation consume.

mod broad_type;
mod instance;

pub use broad_type::{classify_broad_type, BroadType};
pub use instance::{Instance, InstanceError, RelationRows, Row, Value};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

/// Longest sample value kept after ingestion, in characters.
pub const MAX_VALUE_CHARS: usize = 100;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("malformed schema document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("schema integrity: {0}")]
    Integrity(String),
    #[error("reading schema file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    pub declared_type: String,
    pub broad_type: BroadType,
    pub nullable: bool,
    pub description: Option<String>,
    pub sample_values: Vec<String>,
}

impl AttributeDef {
    /// Builds an attribute, classifying its type and normalising sample values
    /// (truncated, then deduplicated keeping first occurrence).
    pub fn new(
        name: impl Into<String>,
        declared_type: impl Into<String>,
        nullable: bool,
        description: Option<String>,
        values: impl IntoIterator<Item = String>,
    ) -> Self {
        let declared_type = declared_type.into();
        let mut seen = BTreeSet::new();
        let sample_values = values
            .into_iter()
            .map(|v| truncate_chars(&v, MAX_VALUE_CHARS))
            .filter(|v| seen.insert(v.clone()))
            .collect();
        Self {
            name: name.into(),
            broad_type: classify_broad_type(&declared_type),
            declared_type,
            nullable,
            description,
            sample_values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ForeignKey {
    pub columns: Vec<String>,
    pub ref_relation: String,
    pub ref_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationDef {
    pub name: String,
    pub description: Option<String>,
    pub attributes: Vec<AttributeDef>,
    pub primary_key: Vec<String>,
    pub foreign_keys: Vec<ForeignKey>,
}

impl RelationDef {
    pub fn attribute(&self, name: &str) -> Option<&AttributeDef> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn attribute_names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    /// Primary-key columns plus every foreign-key column.
    pub fn key_columns(&self) -> BTreeSet<&str> {
        self.primary_key
            .iter()
            .map(String::as_str)
            .chain(
                self.foreign_keys
                    .iter()
                    .flat_map(|fk| fk.columns.iter().map(String::as_str)),
            )
            .collect()
    }

    /// Positions of attributes that are neither primary-key nor foreign-key columns.
    pub fn non_key_positions(&self) -> Vec<usize> {
        let keys = self.key_columns();
        self.attributes
            .iter()
            .enumerate()
            .filter(|(_, a)| !keys.contains(a.name.as_str()))
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy of this relation restricted to the given attributes, in the given order.
    pub fn with_attributes(&self, attributes: Vec<AttributeDef>) -> RelationDef {
        RelationDef {
            attributes,
            ..self.clone()
        }
    }

    fn check(&self) -> Result<(), SchemaError> {
        if self.name.is_empty() {
            return Err(SchemaError::Integrity("relation with empty name".into()));
        }
        let mut names = BTreeSet::new();
        for a in &self.attributes {
            if a.name.is_empty() {
                return Err(SchemaError::Integrity(format!(
                    "relation {} has an attribute with an empty name",
                    self.name
                )));
            }
            if !names.insert(a.name.as_str()) {
                return Err(SchemaError::Integrity(format!(
                    "duplicate attribute {}.{}",
                    self.name, a.name
                )));
            }
        }
        for pk in &self.primary_key {
            if !names.contains(pk.as_str()) {
                return Err(SchemaError::Integrity(format!(
                    "primary key column {}.{pk} is not an attribute",
                    self.name
                )));
            }
        }
        for fk in &self.foreign_keys {
            if fk.columns.len() != fk.ref_columns.len() || fk.columns.is_empty() {
                return Err(SchemaError::Integrity(format!(
                    "foreign key {}({}) -> {}({}) has mismatched column lists",
                    self.name,
                    fk.columns.join(","),
                    fk.ref_relation,
                    fk.ref_columns.join(",")
                )));
            }
            if let Some(c) = fk.columns.iter().find(|c| !names.contains(c.as_str())) {
                return Err(SchemaError::Integrity(format!(
                    "foreign key column {}.{c} is not an attribute",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDef {
    pub name: String,
    pub relations: Vec<RelationDef>,
}

impl SchemaDef {
    /// Validates every structural invariant and returns the schema.
    pub fn new(name: impl Into<String>, relations: Vec<RelationDef>) -> Result<Self, SchemaError> {
        let schema = Self {
            name: name.into(),
            relations,
        };
        schema.check()?;
        Ok(schema)
    }

    pub fn relation(&self, name: &str) -> Option<&RelationDef> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn resolves(&self, attr: &AttrRef) -> bool {
        self.relation(&attr.relation)
            .is_some_and(|r| r.attribute(&attr.attribute).is_some())
    }

    fn check(&self) -> Result<(), SchemaError> {
        let mut names = BTreeSet::new();
        for r in &self.relations {
            r.check()?;
            if !names.insert(r.name.as_str()) {
                return Err(SchemaError::Integrity(format!("duplicate relation {}", r.name)));
            }
        }
        for r in &self.relations {
            for fk in &r.foreign_keys {
                let target = self.relation(&fk.ref_relation).ok_or_else(|| {
                    SchemaError::Integrity(format!(
                        "foreign key on {} references missing relation {}",
                        r.name, fk.ref_relation
                    ))
                })?;
                if let Some(c) = fk.ref_columns.iter().find(|c| target.attribute(c).is_none()) {
                    return Err(SchemaError::Integrity(format!(
                        "foreign key on {} references missing column {}.{c}",
                        r.name, fk.ref_relation
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parses and validates a schema document (JSON).
    pub fn from_json_str(text: &str) -> Result<Self, SchemaError> {
        let doc: SchemaDoc = serde_json::from_str(text)?;
        doc.into_schema()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&SchemaDoc::from(self)).expect("schema document serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SchemaError> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    /// Replaces each attribute's sample values with the distinct non-null
    /// values found in `instance` (in row order).
    pub fn with_values_from(&self, instance: &Instance) -> SchemaDef {
        let mut out = self.clone();
        for rel in &mut out.relations {
            let Some(rows) = instance.relation(&rel.name) else {
                continue;
            };
            for (pos, attr) in rel.attributes.iter_mut().enumerate() {
                let values = rows
                    .rows()
                    .filter_map(|row| match &row[pos] {
                        Value::Null | Value::Labeled(_) => None,
                        v => Some(v.to_string()),
                    })
                    .collect::<Vec<_>>();
                *attr = AttributeDef::new(
                    attr.name.clone(),
                    attr.declared_type.clone(),
                    attr.nullable,
                    attr.description.clone(),
                    values,
                );
            }
        }
        out
    }
}

/// A (relation, attribute) reference.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AttrRef {
    pub relation: String,
    pub attribute: String,
}

impl AttrRef {
    pub fn new(relation: impl Into<String>, attribute: impl Into<String>) -> Self {
        Self {
            relation: relation.into(),
            attribute: attribute.into(),
        }
    }
}

impl fmt::Display for AttrRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.relation, self.attribute)
    }
}

/// A source attribute asserted to correspond to a target attribute.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Correspondence {
    pub source: AttrRef,
    pub target: AttrRef,
}

impl Correspondence {
    pub fn new(source: AttrRef, target: AttrRef) -> Self {
        Self { source, target }
    }

    pub fn resolves(&self, source: &SchemaDef, target: &SchemaDef) -> bool {
        source.resolves(&self.source) && target.resolves(&self.target)
    }
}

impl fmt::Display for Correspondence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.source, self.target)
    }
}

/// Draws up to `k` distinct sample values uniformly without replacement.
///
/// Output order is the draw order, so it is a pure function of
/// `(attribute, k, seed)`.
pub fn sample_values(attribute: &AttributeDef, k: usize, seed: u64) -> Vec<String> {
    let pool = &attribute.sample_values;
    let take = k.min(pool.len());
    if take == 0 {
        return Vec::new();
    }
    let mut rng = seed::rng(seed);
    index::sample(&mut rng, pool.len(), take)
        .into_iter()
        .map(|i| truncate_chars(&pool[i], MAX_VALUE_CHARS))
        .collect()
}

pub(crate) fn truncate_chars(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((byte, _)) => s[..byte].to_string(),
        None => s.to_string(),
    }
}

// On-disk document shape.

#[derive(Debug, Serialize, Deserialize)]
struct SchemaDoc {
    name: String,
    #[serde(default)]
    relations: Vec<RelationDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RelationDoc {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    #[serde(default)]
    primary_key: Vec<String>,
    #[serde(default)]
    foreign_keys: Vec<ForeignKey>,
    attributes: Vec<AttributeDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AttributeDoc {
    name: String,
    #[serde(rename = "type")]
    declared_type: String,
    #[serde(default = "default_nullable")]
    nullable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    values: Vec<serde_json::Value>,
}

fn default_nullable() -> bool {
    true
}

impl SchemaDoc {
    fn into_schema(self) -> Result<SchemaDef, SchemaError> {
        let relations = self
            .relations
            .into_iter()
            .map(|r| RelationDef {
                name: r.name,
                description: r.description,
                primary_key: r.primary_key,
                foreign_keys: r.foreign_keys,
                attributes: r
                    .attributes
                    .into_iter()
                    .map(|a| {
                        let values = a.values.into_iter().filter_map(|v| match v {
                            serde_json::Value::Null => None,
                            serde_json::Value::String(s) => Some(s),
                            other => Some(other.to_string()),
                        });
                        AttributeDef::new(a.name, a.declared_type, a.nullable, a.description, values)
                    })
                    .collect(),
            })
            .collect();
        SchemaDef::new(self.name, relations)
    }
}

impl From<&SchemaDef> for SchemaDoc {
    fn from(s: &SchemaDef) -> Self {
        SchemaDoc {
            name: s.name.clone(),
            relations: s
                .relations
                .iter()
                .map(|r| RelationDoc {
                    name: r.name.clone(),
                    description: r.description.clone(),
                    primary_key: r.primary_key.clone(),
                    foreign_keys: r.foreign_keys.clone(),
                    attributes: r
                        .attributes
                        .iter()
                        .map(|a| AttributeDoc {
                            name: a.name.clone(),
                            declared_type: a.declared_type.clone(),
                            nullable: a.nullable,
                            description: a.description.clone(),
                            values: a
                                .sample_values
                                .iter()
                                .cloned()
                                .map(serde_json::Value::String)
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Map from relation name to relation, for quick lookups.
pub fn relation_index(schema: &SchemaDef) -> BTreeMap<&str, &RelationDef> {
    schema.relations.iter().map(|r| (r.name.as_str(), r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const DRUGS_SOURCE_JSON: &str = r#"{
        "name": "local",
        "relations": [
            {"name": "meds", "primary_key": ["m_id"], "foreign_keys": [],
             "attributes": [
                {"name": "m_id", "type": "int", "nullable": false},
                {"name": "generic_name", "type": "varchar(80)", "nullable": true,
                 "description": "Generic drug name", "values": ["aspirin", "ibuprofen", "aspirin"]}
             ]},
            {"name": "trial", "primary_key": [],
             "foreign_keys": [{"columns": ["m_id"], "ref_relation": "meds", "ref_columns": ["m_id"]}],
             "attributes": [
                {"name": "m_id", "type": "int", "nullable": false},
                {"name": "funder", "type": "text", "nullable": true},
                {"name": "month", "type": "smallint", "nullable": true},
                {"name": "day", "type": "smallint", "nullable": true},
                {"name": "year", "type": "integer", "nullable": true}
             ]}
        ]
    }"#;

    #[test]
    fn loads_drugs_source() {
        let s = SchemaDef::from_json_str(DRUGS_SOURCE_JSON).unwrap();
        assert_eq!(s.relations.len(), 2);
        let trial = s.relation("trial").unwrap();
        assert_eq!(
            trial.foreign_keys,
            vec![ForeignKey {
                columns: vec!["m_id".into()],
                ref_relation: "meds".into(),
                ref_columns: vec!["m_id".into()],
            }]
        );
        let gn = s.relation("meds").unwrap().attribute("generic_name").unwrap();
        assert_eq!(gn.sample_values, vec!["aspirin", "ibuprofen"]);
        assert_eq!(gn.broad_type, BroadType::Text);
        // absent hints stay absent
        let funder = trial.attribute("funder").unwrap();
        assert_eq!(funder.description, None);
        assert!(funder.sample_values.is_empty());
    }

    #[test]
    fn empty_relation_list_is_valid() {
        let s = SchemaDef::from_json_str(r#"{"name": "e", "relations": []}"#).unwrap();
        assert!(s.relations.is_empty());
    }

    #[test]
    fn dangling_fk_is_integrity_error() {
        let doc = r#"{"name": "x", "relations": [
            {"name": "trial", "foreign_keys": [{"columns": ["m_id"], "ref_relation": "drgs", "ref_columns": ["id"]}],
             "attributes": [{"name": "m_id", "type": "int"}]}]}"#;
        assert!(matches!(
            SchemaDef::from_json_str(doc),
            Err(SchemaError::Integrity(_))
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        let dup_attr = r#"{"name": "x", "relations": [
            {"name": "r", "attributes": [{"name": "a", "type": "int"}, {"name": "a", "type": "int"}]}]}"#;
        assert!(matches!(SchemaDef::from_json_str(dup_attr), Err(SchemaError::Integrity(_))));
        let dup_rel = r#"{"name": "x", "relations": [
            {"name": "r", "attributes": []}, {"name": "r", "attributes": []}]}"#;
        assert!(matches!(SchemaDef::from_json_str(dup_rel), Err(SchemaError::Integrity(_))));
        let bad_pk = r#"{"name": "x", "relations": [
            {"name": "r", "primary_key": ["zz"], "attributes": [{"name": "a", "type": "int"}]}]}"#;
        assert!(matches!(SchemaDef::from_json_str(bad_pk), Err(SchemaError::Integrity(_))));
    }

    #[test]
    fn malformed_document_is_parse_error() {
        assert!(matches!(
            SchemaDef::from_json_str("{\"name\": "),
            Err(SchemaError::Parse(_))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let s = SchemaDef::from_json_str(DRUGS_SOURCE_JSON).unwrap();
        let again = SchemaDef::from_json_str(&s.to_json_string()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn sampling_contract() {
        let small = AttributeDef::new("a", "text", true, None, ["x", "y", "z"].map(String::from));
        let mut got = sample_values(&small, 10, 3);
        got.sort();
        assert_eq!(got, vec!["x", "y", "z"]);

        let big = AttributeDef::new("b", "int", true, None, (0..100).map(|i| i.to_string()));
        let a = sample_values(&big, 10, 42);
        assert_eq!(a, sample_values(&big, 10, 42));
        assert_eq!(a.len(), 10);
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 10);

        let long = AttributeDef::new("c", "text", true, None, ["é".repeat(180)]);
        let one = sample_values(&long, 1, 0);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].chars().count(), 100);
        assert!(sample_values(&big, 0, 1).is_empty());
    }

    #[test]
    fn ingestion_truncates_then_dedups() {
        let a = "q".repeat(150);
        let b = format!("{}tail", "q".repeat(100));
        let attr = AttributeDef::new("c", "text", true, None, [a, b]);
        assert_eq!(attr.sample_values, vec!["q".repeat(100)]);
    }
}
