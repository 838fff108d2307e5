//! Prompt construction. Bodies are pure functions of (inputs, seed, options).

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{sample_values, AttrRef, AttributeDef, RelationDef};
use crate::seed::{derive_seed_str, rng, sha256_hex};

const MATCH_TEMPLATE: &str = include_str!("../templates/match.txt");
const RANK_TEMPLATE: &str = include_str!("../templates/rank.txt");
const MAPGEN_TEMPLATE: &str = include_str!("../templates/mapgen.txt");

pub const OPTION_LABELS: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("rank prompt needs at least one candidate")]
    NoCandidates,
    #[error("{0} candidates exceed the {max} option labels", max = OPTION_LABELS.len())]
    TooManyCandidates(usize),
    #[error("mapping prompt needs at least one relation")]
    NoRelations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PromptKind {
    Match,
    Rank,
    MapGen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Swapped,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::Forward => Direction::Swapped,
            Direction::Swapped => Direction::Forward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformOptions {
    pub permute_columns: bool,
    pub resample_values: bool,
    pub swap_tables: bool,
    pub values_per_attribute: usize,
}

impl Default for TransformOptions {
    fn default() -> Self {
        Self {
            permute_columns: false,
            resample_values: false,
            swap_tables: false,
            values_per_attribute: 10,
        }
    }
}

impl TransformOptions {
    /// Column permutation and value resampling on; the swap flag is set per direction.
    pub fn sampling() -> Self {
        Self {
            permute_columns: true,
            resample_values: true,
            ..Self::default()
        }
    }
}

/// What the caller should expect back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputContract {
    /// `{"matches": [name, ...]}` with names drawn from `allowed`.
    Matches { allowed: Vec<String> },
    /// A single option label; `options` maps label to candidate.
    OptionLabel { options: BTreeMap<String, AttrRef> },
    /// A SQL mapping script.
    Script,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub template: String,
    pub template_digest: String,
    pub relations: Vec<String>,
    /// Attributes in the order presented.
    pub attributes: Vec<AttrRef>,
    pub options: TransformOptions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub kind: PromptKind,
    pub body: String,
    pub expected_output: OutputContract,
    pub seed: u64,
    pub direction: Direction,
    pub provenance: Provenance,
}

#[derive(Serialize)]
struct AttrDoc<'a> {
    name: &'a str,
    #[serde(rename = "type")]
    declared_type: &'a str,
    nullable: bool,
    description: Option<&'a str>,
    values: Vec<String>,
}

#[derive(Serialize)]
struct ForeignKeyDoc<'a> {
    columns: &'a [String],
    references: String,
}

#[derive(Serialize)]
struct RelationDoc<'a> {
    name: &'a str,
    description: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    primary_key: Option<&'a [String]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    foreign_keys: Option<Vec<ForeignKeyDoc<'a>>>,
    attributes: Vec<AttrDoc<'a>>,
}

#[derive(Serialize)]
struct SingleAttrDoc<'a> {
    relation: &'a str,
    relation_description: Option<&'a str>,
    attribute: AttrDoc<'a>,
}

fn attr_doc<'a>(rel: &RelationDef, attr: &'a AttributeDef, seed: u64, opts: &TransformOptions) -> AttrDoc<'a> {
    let k = opts.values_per_attribute;
    let values = if opts.resample_values {
        let s = derive_seed_str(seed, &format!("values/{}/{}", rel.name, attr.name));
        sample_values(attr, k, s)
    } else {
        attr.sample_values.iter().take(k).cloned().collect()
    };
    AttrDoc {
        name: &attr.name,
        declared_type: &attr.declared_type,
        nullable: attr.nullable,
        description: attr.description.as_deref(),
        values,
    }
}

fn attribute_order<'a>(rel: &'a RelationDef, seed: u64, opts: &TransformOptions) -> Vec<&'a AttributeDef> {
    let mut attrs: Vec<&AttributeDef> = rel.attributes.iter().collect();
    if opts.permute_columns {
        attrs.shuffle(&mut rng(derive_seed_str(seed, &format!("permute/{}", rel.name))));
    }
    attrs
}

fn relation_doc<'a>(
    rel: &'a RelationDef,
    seed: u64,
    opts: &TransformOptions,
    with_keys: bool,
) -> (RelationDoc<'a>, Vec<AttrRef>) {
    let attrs = attribute_order(rel, seed, opts);
    let shown = attrs.iter().map(|a| AttrRef::new(&rel.name, &a.name)).collect();
    let doc = RelationDoc {
        name: &rel.name,
        description: rel.description.as_deref(),
        primary_key: with_keys.then_some(rel.primary_key.as_slice()),
        foreign_keys: with_keys.then(|| {
            rel.foreign_keys
                .iter()
                .map(|fk| ForeignKeyDoc {
                    columns: &fk.columns,
                    references: format!("{}({})", fk.ref_relation, fk.ref_columns.join(", ")),
                })
                .collect()
        }),
        attributes: attrs.into_iter().map(|a| attr_doc(rel, a, seed, opts)).collect(),
    };
    (doc, shown)
}

fn to_json<T: Serialize>(doc: &T) -> String {
    serde_json::to_string_pretty(doc).expect("prompt documents serialize")
}

/// JSON serialization of a relation for matching prompts.
pub fn serialize_relation(relation: &RelationDef, seed: u64, opts: &TransformOptions) -> String {
    to_json(&relation_doc(relation, seed, opts, false).0)
}

/// Substitutes `{{name}}` placeholders in one pass, so inserted text is never rescanned.
fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let key = &after[..end];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => panic!("template placeholder {{{{{key}}}}} has no value"),
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn provenance(template: &str, text: &str, relations: Vec<String>, attributes: Vec<AttrRef>, opts: TransformOptions) -> Provenance {
    Provenance {
        template: template.into(),
        template_digest: sha256_hex(text.as_bytes()),
        relations,
        attributes,
        options: opts,
    }
}

/// N-1 prompt: which attributes of `relation` match `attribute` of `other`?
///
/// With `opts.swap_tables` the caller passes the exchanged roles (a target
/// relation against a source attribute); the body is built the same way and
/// only `direction` records the swap. Returns `None` when `relation` has no
/// attributes, e.g. after prefiltering.
pub fn build_match_prompt(
    relation: &RelationDef,
    target: (&RelationDef, &AttributeDef),
    seed: u64,
    opts: &TransformOptions,
) -> Option<PromptSpec> {
    if relation.attributes.is_empty() {
        return None;
    }
    let (other, attr) = target;
    let (doc, mut shown) = relation_doc(relation, seed, opts, false);
    let single = SingleAttrDoc {
        relation: &other.name,
        relation_description: other.description.as_deref(),
        attribute: attr_doc(other, attr, seed, opts),
    };
    let body = fill(
        MATCH_TEMPLATE,
        &[("relation", &to_json(&doc)), ("attribute", &to_json(&single))],
    );
    let allowed = shown.iter().map(|a| a.attribute.clone()).collect();
    shown.push(AttrRef::new(&other.name, &attr.name));
    Some(PromptSpec {
        kind: PromptKind::Match,
        body,
        expected_output: OutputContract::Matches { allowed },
        seed,
        direction: if opts.swap_tables { Direction::Swapped } else { Direction::Forward },
        provenance: provenance(
            "match.txt",
            MATCH_TEMPLATE,
            vec![relation.name.clone(), other.name.clone()],
            shown,
            *opts,
        ),
    })
}

/// Best-match prompt over `candidates`, labelled with single letters in a
/// seeded order. A single candidate still yields a prompt.
pub fn build_rank_prompt(
    target: (&RelationDef, &AttributeDef),
    candidates: &[(&RelationDef, &AttributeDef)],
    seed: u64,
    direction: Direction,
) -> Result<PromptSpec, PromptError> {
    if candidates.is_empty() {
        return Err(PromptError::NoCandidates);
    }
    if candidates.len() > OPTION_LABELS.len() {
        return Err(PromptError::TooManyCandidates(candidates.len()));
    }
    let opts = TransformOptions::default();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.shuffle(&mut rng(derive_seed_str(seed, "rank-labels")));

    let (trel, tattr) = target;
    let target_doc = SingleAttrDoc {
        relation: &trel.name,
        relation_description: trel.description.as_deref(),
        attribute: attr_doc(trel, tattr, seed, &opts),
    };
    let mut lines = Vec::new();
    let mut options = BTreeMap::new();
    let mut shown = vec![AttrRef::new(&trel.name, &tattr.name)];
    for (label, &i) in OPTION_LABELS.chars().zip(&order) {
        let (rel, attr) = candidates[i];
        let doc = SingleAttrDoc {
            relation: &rel.name,
            relation_description: rel.description.as_deref(),
            attribute: attr_doc(rel, attr, seed, &opts),
        };
        lines.push(format!(
            "{label}. {}",
            serde_json::to_string(&doc).expect("prompt documents serialize")
        ));
        options.insert(label.to_string(), AttrRef::new(&rel.name, &attr.name));
        shown.push(AttrRef::new(&rel.name, &attr.name));
    }
    let body = fill(
        RANK_TEMPLATE,
        &[("target", &to_json(&target_doc)), ("options", &lines.join("\n"))],
    );
    let relations: BTreeSet<String> = shown.iter().map(|a| a.relation.clone()).collect();
    Ok(PromptSpec {
        kind: PromptKind::Rank,
        body,
        expected_output: OutputContract::OptionLabel { options },
        seed,
        direction,
        provenance: provenance("rank.txt", RANK_TEMPLATE, relations.into_iter().collect(), shown, opts),
    })
}

/// Mapping-generation prompt over the relations of several rules. Relations
/// repeated across chunks are serialized once; presentation order is seeded.
pub fn build_mapgen_prompt(
    chunks: &[(Vec<&RelationDef>, Vec<&RelationDef>)],
    seed: u64,
    opts: &TransformOptions,
) -> Result<PromptSpec, PromptError> {
    let dedup = |side: &mut dyn Iterator<Item = &RelationDef>| -> Vec<RelationDef> {
        let mut seen = BTreeSet::new();
        side.filter(|r| seen.insert(r.name.clone())).cloned().collect()
    };
    let mut sources = dedup(&mut chunks.iter().flat_map(|(s, _)| s.iter().copied()));
    let mut targets = dedup(&mut chunks.iter().flat_map(|(_, t)| t.iter().copied()));
    if sources.is_empty() || targets.is_empty() {
        return Err(PromptError::NoRelations);
    }
    // Order is a function of the relation set, not of the chunk order.
    sources.sort_by(|a, b| a.name.cmp(&b.name));
    targets.sort_by(|a, b| a.name.cmp(&b.name));
    sources.shuffle(&mut rng(derive_seed_str(seed, "mapgen/source")));
    targets.shuffle(&mut rng(derive_seed_str(seed, "mapgen/target")));

    let mut shown = Vec::new();
    let mut render = |rels: &[RelationDef]| -> String {
        rels.iter()
            .map(|r| {
                let (doc, attrs) = relation_doc(r, seed, opts, true);
                shown.extend(attrs);
                to_json(&doc)
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let source_text = render(&sources);
    let target_text = render(&targets);
    let body = fill(MAPGEN_TEMPLATE, &[("source", &source_text), ("target", &target_text)]);
    let relations = sources.iter().chain(&targets).map(|r| r.name.clone()).collect();
    Ok(PromptSpec {
        kind: PromptKind::MapGen,
        body,
        expected_output: OutputContract::Script,
        seed,
        direction: Direction::Forward,
        provenance: provenance("mapgen.txt", MAPGEN_TEMPLATE, relations, shown, *opts),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::SchemaDef;

    fn meds() -> RelationDef {
        RelationDef {
            name: "meds".into(),
            description: Some("Medications".into()),
            attributes: vec![
                AttributeDef::new("m_id", "int", false, None, vec!["1".into(), "2".into()]),
                AttributeDef::new(
                    "generic_name",
                    "varchar",
                    true,
                    Some("Generic drug name".into()),
                    (0..30).map(|i| format!("drug{i}")),
                ),
                AttributeDef::new("notes", "text", true, None, vec![]),
            ],
            primary_key: vec!["m_id".into()],
            foreign_keys: vec![],
        }
    }

    fn drugs() -> RelationDef {
        RelationDef {
            name: "Drugs".into(),
            description: None,
            attributes: vec![
                AttributeDef::new("id", "int", false, None, vec![]),
                AttributeDef::new("brand_name", "varchar", true, None, vec!["Aspirin".into()]),
            ],
            primary_key: vec!["id".into()],
            foreign_keys: vec![],
        }
    }

    fn names_in(json: &str) -> Vec<String> {
        let v: serde_json::Value = serde_json::from_str(json).unwrap();
        v["attributes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|a| a["name"].as_str().unwrap().to_string())
            .collect()
    }

    #[test]
    fn identity_serialization_keeps_order_and_caps_values() {
        let json = serialize_relation(&meds(), 7, &TransformOptions::default());
        assert_eq!(names_in(&json), ["m_id", "generic_name", "notes"]);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let values = v["attributes"][1]["values"].as_array().unwrap();
        assert_eq!(values.len(), 10);
        assert_eq!(values[0], "drug0");
        // no values: field present and empty
        assert_eq!(v["attributes"][2]["values"], serde_json::json!([]));
    }

    #[test]
    fn permutation_is_seeded() {
        let opts = TransformOptions { permute_columns: true, ..Default::default() };
        let orders: BTreeSet<Vec<String>> = (0..20)
            .map(|s| names_in(&serialize_relation(&meds(), s, &opts)))
            .collect();
        assert!(orders.len() > 1);
        for o in &orders {
            let mut sorted = o.clone();
            sorted.sort();
            assert_eq!(sorted, ["generic_name", "m_id", "notes"]);
        }
        assert_eq!(serialize_relation(&meds(), 3, &opts), serialize_relation(&meds(), 3, &opts));
    }

    #[test]
    fn match_prompt_shape() {
        let d = drugs();
        let p = build_match_prompt(&meds(), (&d, &d.attributes[1]), 1, &TransformOptions::default()).unwrap();
        assert_eq!(p.kind, PromptKind::Match);
        assert_eq!(p.direction, Direction::Forward);
        assert!(p.body.contains("\"brand_name\""));
        assert!(!p.body.contains("{{"));
        assert_eq!(
            p.expected_output,
            OutputContract::Matches { allowed: vec!["m_id".into(), "generic_name".into(), "notes".into()] }
        );
        assert_eq!(p.provenance.template_digest, sha256_hex(MATCH_TEMPLATE.as_bytes()));

        let m = meds();
        let swap = TransformOptions { swap_tables: true, ..Default::default() };
        let s = build_match_prompt(&d, (&m, &m.attributes[1]), 1, &swap).unwrap();
        assert_eq!(s.direction, Direction::Swapped);
        assert_eq!(s.expected_output, OutputContract::Matches { allowed: vec!["id".into(), "brand_name".into()] });

        let empty = d.with_attributes(vec![]);
        assert!(build_match_prompt(&empty, (&m, &m.attributes[0]), 1, &TransformOptions::default()).is_none());
    }

    #[test]
    fn swapping_twice_restores_the_body() {
        let (m, d) = (meds(), drugs());
        let fwd = TransformOptions::sampling();
        let swp = TransformOptions { swap_tables: true, ..fwd };
        let original = build_match_prompt(&m, (&d, &d.attributes[1]), 9, &fwd).unwrap();
        let once = build_match_prompt(&d, (&m, &m.attributes[1]), 9, &swp).unwrap();
        let twice = build_match_prompt(&m, (&d, &d.attributes[1]), 9, &fwd).unwrap();
        assert_eq!(once.direction, Direction::Swapped);
        assert_eq!(twice.direction, Direction::Forward);
        assert_eq!(original.body, twice.body);
    }

    #[test]
    fn rank_labels() {
        let (m, d) = (meds(), drugs());
        let cands = [(&m, &m.attributes[0]), (&m, &m.attributes[1])];
        let p = build_rank_prompt((&d, &d.attributes[1]), &cands, 0, Direction::Forward).unwrap();
        let OutputContract::OptionLabel { options } = &p.expected_output else { panic!() };
        assert_eq!(options.keys().collect::<Vec<_>>(), ["A", "B"]);
        assert!(p.body.contains("\nA. ") && p.body.contains("\nB. "));

        let assignments: BTreeSet<String> = (0..20)
            .map(|s| {
                let p = build_rank_prompt((&d, &d.attributes[1]), &cands, s, Direction::Forward).unwrap();
                match p.expected_output {
                    OutputContract::OptionLabel { options } => options["A"].to_string(),
                    _ => unreachable!(),
                }
            })
            .collect();
        assert_eq!(assignments.len(), 2);

        let one = build_rank_prompt((&d, &d.attributes[1]), &cands[..1], 0, Direction::Forward).unwrap();
        assert!(one.body.contains("\nA. "));
        assert_eq!(build_rank_prompt((&d, &d.attributes[1]), &[], 0, Direction::Forward), Err(PromptError::NoCandidates));
        let many: Vec<_> = (0..27).map(|_| (&m, &m.attributes[0])).collect();
        assert_eq!(
            build_rank_prompt((&d, &d.attributes[1]), &many, 0, Direction::Forward),
            Err(PromptError::TooManyCandidates(27))
        );
    }

    #[test]
    fn mapgen_dedups_relations() {
        let (m, d) = (meds(), drugs());
        let chunks = vec![(vec![&m], vec![&d]), (vec![&m], vec![&d])];
        let p = build_mapgen_prompt(&chunks, 4, &TransformOptions::default()).unwrap();
        assert_eq!(p.body.matches("\"name\": \"meds\"").count(), 1);
        assert_eq!(p.body.matches("\"name\": \"Drugs\"").count(), 1);
        assert!(p.body.contains("\"primary_key\""));
        assert_eq!(p.provenance.relations, ["meds", "Drugs"]);
        assert_eq!(p.expected_output, OutputContract::Script);
        let _ = SchemaDef::new("s", vec![m]).unwrap();
    }

    #[test]
    fn fill_does_not_rescan() {
        assert_eq!(fill("a {{x}} b", &[("x", "{{x}}")]), "a {{x}} b");
    }
}
