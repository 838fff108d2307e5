//! Bundled example scenarios: the drug / clinical-trial running example and a
//! small bibliography mapping with seven rules.

use std::sync::Arc;

use crate::mapping::{parse_rule_script, Atom, CmpOp, FilterPred, Mapping, Rule, Term};
use crate::schema::{Correspondence, SchemaDef, Value};

pub const DRUGS_SOURCE: &str = include_str!("../data/drugs/source.json");
pub const DRUGS_TARGET: &str = include_str!("../data/drugs/target.json");
pub const DRUGS_GOLD: &str = include_str!("../data/drugs/gold_alignment.json");
pub const BIBLIO_SOURCE: &str = include_str!("../data/bibliography/source.json");
pub const BIBLIO_TARGET: &str = include_str!("../data/bibliography/target.json");
pub const BIBLIO_GOLD: &str = include_str!("../data/bibliography/gold_mapping.sql");

/// `meds` and `trial`.
pub fn source_schema() -> SchemaDef {
    SchemaDef::from_json_str(DRUGS_SOURCE).expect("bundled schema")
}

/// `Drugs` and `Clinical_Trials`.
pub fn target_schema() -> SchemaDef {
    SchemaDef::from_json_str(DRUGS_TARGET).expect("bundled schema")
}

pub fn drugs_gold_alignment() -> Vec<Correspondence> {
    serde_json::from_str(DRUGS_GOLD).expect("bundled alignment")
}

fn v(n: &str) -> Term {
    Term::var(n)
}

/// The rule joining meds and trial, filtered on year > 1990, that links each
/// drug to its trials through one generated key.
pub fn trials_rule() -> Rule {
    Rule {
        id: "r1".into(),
        universals: ["i", "g", "f", "m", "d", "y"].map(String::from).to_vec(),
        source_atoms: vec![
            Atom::new("meds", vec![v("i"), v("g")]),
            Atom::new("trial", vec![v("i"), v("f"), v("m"), v("d"), v("y")]),
        ],
        filters: vec![FilterPred {
            left: v("y"),
            op: CmpOp::Gt,
            right: Term::Const(Value::num(1990.0)),
        }],
        existentials: ["x1", "x2", "x3", "x4"].map(String::from).to_vec(),
        target_atoms: vec![
            Atom::new(
                "Drugs",
                vec![v("x1"), Term::transform("identity", vec![v("g")]), v("x2"), v("x3"), v("x4")],
            ),
            Atom::new(
                "Clinical_Trials",
                vec![v("x1"), v("f"), Term::transform("date_concat", vec![v("m"), v("d"), v("y")])],
            ),
        ],
    }
}

/// The two single-atom rules obtained by splitting [`trials_rule`] per side.
pub fn lrd_rules() -> Vec<Rule> {
    vec![
        Rule {
            id: "l1".into(),
            universals: ["i", "g"].map(String::from).to_vec(),
            source_atoms: vec![Atom::new("meds", vec![v("i"), v("g")])],
            filters: vec![],
            existentials: ["x1", "x2", "x3", "x4"].map(String::from).to_vec(),
            target_atoms: vec![Atom::new(
                "Drugs",
                vec![v("x1"), Term::transform("identity", vec![v("g")]), v("x2"), v("x3"), v("x4")],
            )],
        },
        Rule {
            id: "l2".into(),
            universals: ["i", "f", "m", "d", "y"].map(String::from).to_vec(),
            source_atoms: vec![Atom::new("trial", vec![v("i"), v("f"), v("m"), v("d"), v("y")])],
            filters: vec![FilterPred {
                left: v("y"),
                op: CmpOp::Gt,
                right: Term::Const(Value::num(1990.0)),
            }],
            existentials: vec!["x5".into()],
            target_atoms: vec![Atom::new(
                "Clinical_Trials",
                vec![v("x5"), v("f"), Term::transform("date_concat", vec![v("m"), v("d"), v("y")])],
            )],
        },
    ]
}

pub fn trials_mapping() -> Mapping {
    Mapping::new(Arc::new(source_schema()), Arc::new(target_schema()), vec![trials_rule()]).expect("valid rule")
}

pub fn lrd_mapping() -> Mapping {
    Mapping::new(Arc::new(source_schema()), Arc::new(target_schema()), lrd_rules()).expect("valid rules")
}

pub fn biblio_source() -> SchemaDef {
    SchemaDef::from_json_str(BIBLIO_SOURCE).expect("bundled schema")
}

pub fn biblio_target() -> SchemaDef {
    SchemaDef::from_json_str(BIBLIO_TARGET).expect("bundled schema")
}

/// Publication-type relations decomposed into attribute-specific ones.
pub fn biblio_gold_mapping() -> Mapping {
    let parsed = parse_rule_script(BIBLIO_GOLD, Arc::new(biblio_source()), Arc::new(biblio_target()));
    assert!(parsed.diagnostics.is_empty(), "bundled mapping: {:?}", parsed.diagnostics);
    parsed.mapping
}
