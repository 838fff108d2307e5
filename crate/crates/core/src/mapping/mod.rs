//! Source-to-target tgd rules: representation, classification, chase
//! execution, SQL rendering/parsing and target-constraint validation.

mod chase;
mod query;
mod sql_parse;
mod sql_render;
mod transform;
mod validate;

pub use chase::{chase, chase_with, ChaseOutput, RowError};
pub use query::{evaluate_conjunctive, QueryAtom, Slot};
pub use sql_parse::{extract_script, parse_rule_script, Diagnostic, ParsedScript};
pub use sql_render::{render_mapping_sql, render_sql};
pub use transform::{apply_transform, transform_arity, Arity, TransformError, TransformRegistry};
pub use validate::{validate_instance, Violation, ViolationKind};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{SchemaDef, Value};

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("rule {rule}: {detail}")]
    InvalidRule { rule: String, detail: String },
    #[error("malformed rule document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("reading rule file: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(rule: &Rule, detail: impl Into<String>) -> MappingError {
    MappingError::InvalidRule {
        rule: rule.id.clone(),
        detail: detail.into(),
    }
}

/// A rule term. Transforms apply a registered value-level function.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Var(String),
    Const(Value),
    Transform { name: String, args: Vec<Term> },
}

impl Term {
    pub fn var(name: impl Into<String>) -> Self {
        Term::Var(name.into())
    }

    pub fn transform(name: impl Into<String>, args: Vec<Term>) -> Self {
        Term::Transform {
            name: name.into(),
            args,
        }
    }

    /// Every variable mentioned, including inside transform arguments.
    pub fn variables<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Term::Var(v) => {
                out.insert(v);
            }
            Term::Const(_) => {}
            Term::Transform { args, .. } => args.iter().for_each(|a| a.variables(out)),
        }
    }

    fn rename(&self, map: &BTreeMap<String, String>) -> Term {
        match self {
            Term::Var(v) => Term::Var(map.get(v).cloned().unwrap_or_else(|| v.clone())),
            Term::Const(c) => Term::Const(c.clone()),
            Term::Transform { name, args } => Term::Transform {
                name: name.clone(),
                args: args.iter().map(|a| a.rename(map)).collect(),
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum TermDoc {
    Var {
        var: String,
    },
    Const {
        #[serde(rename = "const")]
        value: Value,
    },
    Transform {
        transform: String,
        #[serde(default)]
        args: Vec<Term>,
    },
}

impl Serialize for Term {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let doc = match self.clone() {
            Term::Var(var) => TermDoc::Var { var },
            Term::Const(value) => TermDoc::Const { value },
            Term::Transform { name, args } => TermDoc::Transform {
                transform: name,
                args,
            },
        };
        doc.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match TermDoc::deserialize(d)? {
            TermDoc::Var { var } => Term::Var(var),
            TermDoc::Const { value } => Term::Const(value),
            TermDoc::Transform { transform, args } => Term::Transform {
                name: transform,
                args,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub relation: String,
    pub terms: Vec<Term>,
}

impl Atom {
    pub fn new(relation: impl Into<String>, terms: Vec<Term>) -> Self {
        Self {
            relation: relation.into(),
            terms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CmpOp {
    pub fn sql(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    /// The operator with its operands exchanged (`a < b` iff `b > a`).
    pub fn flipped(self) -> Self {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            other => other,
        }
    }

    fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }

    /// Compares numerically when both sides read as numbers, otherwise
    /// lexicographically. Any NULL or labeled null rejects.
    pub fn compare(self, left: &Value, right: &Value) -> bool {
        if left.is_void() || right.is_void() {
            return false;
        }
        let ord = match (left.as_f64(), right.as_f64()) {
            (Some(a), Some(b)) => a.total_cmp(&b),
            _ => left.to_string().cmp(&right.to_string()),
        };
        self.holds(ord)
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.sql())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FilterPred {
    pub left: Term,
    pub op: CmpOp,
    pub right: Term,
}

/// `forall universals (source_atoms, filters -> exists existentials target_atoms)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub universals: Vec<String>,
    pub source_atoms: Vec<Atom>,
    #[serde(default)]
    pub filters: Vec<FilterPred>,
    #[serde(default)]
    pub existentials: Vec<String>,
    pub target_atoms: Vec<Atom>,
}

/// Expressiveness class of a rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleClass {
    /// At most one relational atom on at least one side (GaV or LaV shaped).
    Lrd,
    /// More than one relational atom on both sides (GLaV).
    Frd,
}

/// Limited vs full referential dependencies, counted by relational atoms.
///
/// Two atoms over the same relation count as two predicates.
pub fn classify_rule(rule: &Rule) -> RuleClass {
    if rule.source_atoms.len() <= 1 || rule.target_atoms.len() <= 1 {
        RuleClass::Lrd
    } else {
        RuleClass::Frd
    }
}

/// Distinct source relations and distinct target relations of a rule.
pub fn relations_of_rule(rule: &Rule) -> (BTreeSet<String>, BTreeSet<String>) {
    (
        rule.source_atoms.iter().map(|a| a.relation.clone()).collect(),
        rule.target_atoms.iter().map(|a| a.relation.clone()).collect(),
    )
}

impl Rule {
    /// Checks the quantifier structure (schema-independent).
    pub fn validate(&self) -> Result<(), MappingError> {
        let universals: BTreeSet<&str> = self.universals.iter().map(String::as_str).collect();
        let existentials: BTreeSet<&str> = self.existentials.iter().map(String::as_str).collect();
        if universals.len() != self.universals.len() {
            return Err(invalid(self, "duplicate universal variable"));
        }
        if existentials.len() != self.existentials.len() {
            return Err(invalid(self, "duplicate existential variable"));
        }
        if let Some(v) = universals.intersection(&existentials).next() {
            return Err(invalid(self, format!("variable {v} is both universal and existential")));
        }
        if self.source_atoms.is_empty() {
            return Err(invalid(self, "rule has no source atoms"));
        }
        if self.target_atoms.is_empty() {
            return Err(invalid(self, "rule has no target atoms"));
        }
        let mut bound = BTreeSet::new();
        for atom in &self.source_atoms {
            for t in &atom.terms {
                match t {
                    Term::Var(v) if universals.contains(v.as_str()) => {
                        bound.insert(v.as_str());
                    }
                    Term::Var(v) => {
                        return Err(invalid(
                            self,
                            format!("source atom {} uses undeclared variable {v}", atom.relation),
                        ))
                    }
                    Term::Const(_) => {}
                    Term::Transform { .. } => {
                        return Err(invalid(
                            self,
                            format!("source atom {} contains a transform", atom.relation),
                        ))
                    }
                }
            }
        }
        if let Some(v) = universals.difference(&bound).next() {
            return Err(invalid(self, format!("universal {v} appears in no source atom")));
        }
        for f in &self.filters {
            let mut vars = BTreeSet::new();
            f.left.variables(&mut vars);
            f.right.variables(&mut vars);
            if vars.is_empty() {
                return Err(invalid(self, "filter references no variable"));
            }
            if let Some(v) = vars.iter().find(|v| !bound.contains(*v)) {
                return Err(invalid(self, format!("filter uses unbound variable {v}")));
            }
            for t in [&f.left, &f.right] {
                check_transforms(self, t)?;
            }
        }
        for atom in &self.target_atoms {
            for t in &atom.terms {
                check_transforms(self, t)?;
                let mut vars = BTreeSet::new();
                t.variables(&mut vars);
                for v in vars {
                    if !bound.contains(v) && !existentials.contains(v) {
                        return Err(invalid(
                            self,
                            format!("target atom {} uses unbound variable {v}", atom.relation),
                        ));
                    }
                }
                if let Term::Transform { args, .. } = t {
                    let mut inner = BTreeSet::new();
                    args.iter().for_each(|a| a.variables(&mut inner));
                    if let Some(v) = inner.iter().find(|v| existentials.contains(*v)) {
                        return Err(invalid(self, format!("transform applied to existential {v}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Canonical form for comparing rules up to variable renaming.
    ///
    /// Constants inside source atoms become fresh variables with an equality
    /// filter; variables are renamed by first appearance; filters are oriented
    /// variable-first and sorted; the id is cleared.
    pub fn canonical(&self) -> Rule {
        let mut rule = self.clone();
        rule.id = String::new();
        let mut fresh = 0usize;
        let mut extra_filters = Vec::new();
        for atom in &mut rule.source_atoms {
            for t in &mut atom.terms {
                if let Term::Const(c) = t {
                    let name = format!("__c{fresh}");
                    fresh += 1;
                    extra_filters.push(FilterPred {
                        left: Term::Var(name.clone()),
                        op: CmpOp::Eq,
                        right: Term::Const(c.clone()),
                    });
                    rule.universals.push(name.clone());
                    *t = Term::Var(name);
                }
            }
        }
        rule.filters.extend(extra_filters);

        let existentials: BTreeSet<String> = rule.existentials.iter().cloned().collect();
        let mut order: Vec<String> = Vec::new();
        let mut seen = BTreeSet::new();
        for atom in rule.source_atoms.iter().chain(rule.target_atoms.iter()) {
            for t in &atom.terms {
                collect_in_order(t, &mut order, &mut seen);
            }
        }
        let mut map = BTreeMap::new();
        let (mut u, mut e) = (0usize, 0usize);
        for v in &order {
            let new = if existentials.contains(v) {
                e += 1;
                format!("e{:04}", e - 1)
            } else {
                u += 1;
                format!("u{:04}", u - 1)
            };
            map.insert(v.clone(), new);
        }
        let rename_atom = |a: &Atom| Atom {
            relation: a.relation.clone(),
            terms: a.terms.iter().map(|t| t.rename(&map)).collect(),
        };
        let mut universals: Vec<String> = rule
            .universals
            .iter()
            .map(|v| map.get(v).cloned().unwrap_or_else(|| v.clone()))
            .collect();
        universals.sort();
        let mut existentials: Vec<String> = rule
            .existentials
            .iter()
            .filter_map(|v| map.get(v).cloned())
            .collect();
        existentials.sort();
        let mut filters: Vec<FilterPred> = rule
            .filters
            .iter()
            .map(|f| {
                let (l, r) = (f.left.rename(&map), f.right.rename(&map));
                if matches!(l, Term::Const(_)) && !matches!(r, Term::Const(_)) {
                    FilterPred { left: r, op: f.op.flipped(), right: l }
                } else {
                    FilterPred { left: l, op: f.op, right: r }
                }
            })
            .collect();
        filters.sort();
        filters.dedup();
        Rule {
            id: String::new(),
            universals,
            source_atoms: rule.source_atoms.iter().map(rename_atom).collect(),
            filters,
            existentials,
            target_atoms: rule.target_atoms.iter().map(rename_atom).collect(),
        }
    }

    /// True when both rules are equal up to variable renaming.
    pub fn equivalent_up_to_renaming(&self, other: &Rule) -> bool {
        self.canonical() == other.canonical()
    }
}

fn collect_in_order(t: &Term, order: &mut Vec<String>, seen: &mut BTreeSet<String>) {
    match t {
        Term::Var(v) => {
            if seen.insert(v.clone()) {
                order.push(v.clone());
            }
        }
        Term::Const(_) => {}
        Term::Transform { args, .. } => {
            for a in args {
                collect_in_order(a, order, seen);
            }
        }
    }
}

fn check_transforms(rule: &Rule, t: &Term) -> Result<(), MappingError> {
    if let Term::Transform { name, args } = t {
        match transform_arity(name) {
            None => return Err(invalid(rule, format!("unknown transform {name}"))),
            Some(arity) if !arity.accepts(args.len()) => {
                return Err(invalid(
                    rule,
                    format!("transform {name} takes {arity} arguments, got {}", args.len()),
                ))
            }
            Some(_) => {}
        }
        for a in args {
            check_transforms(rule, a)?;
        }
    }
    Ok(())
}

/// A set of rules between a source and a target schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Mapping {
    pub source: Arc<SchemaDef>,
    pub target: Arc<SchemaDef>,
    pub rules: Vec<Rule>,
}

impl Mapping {
    /// Validates every rule against both schemata.
    pub fn new(
        source: Arc<SchemaDef>,
        target: Arc<SchemaDef>,
        rules: Vec<Rule>,
    ) -> Result<Self, MappingError> {
        let mut ids = BTreeSet::new();
        for rule in &rules {
            if !ids.insert(rule.id.as_str()) {
                return Err(invalid(rule, "duplicate rule id"));
            }
            rule.validate()?;
            check_atoms(rule, &rule.source_atoms, &source, "source")?;
            check_atoms(rule, &rule.target_atoms, &target, "target")?;
        }
        Ok(Self {
            source,
            target,
            rules,
        })
    }

    pub fn empty(source: Arc<SchemaDef>, target: Arc<SchemaDef>) -> Self {
        Self {
            source,
            target,
            rules: Vec::new(),
        }
    }

    /// Parses a rule file (JSON list of rules).
    pub fn from_rules_json(
        text: &str,
        source: Arc<SchemaDef>,
        target: Arc<SchemaDef>,
    ) -> Result<Self, MappingError> {
        let rules: Vec<Rule> = serde_json::from_str(text)?;
        Self::new(source, target, rules)
    }

    pub fn rules_to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rules).expect("rules serialize")
    }

    pub fn rule(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }
}

fn check_atoms(
    rule: &Rule,
    atoms: &[Atom],
    schema: &SchemaDef,
    side: &str,
) -> Result<(), MappingError> {
    for atom in atoms {
        let rel = schema.relation(&atom.relation).ok_or_else(|| {
            invalid(rule, format!("{side} relation {} not in schema {}", atom.relation, schema.name))
        })?;
        if rel.attributes.len() != atom.terms.len() {
            return Err(invalid(
                rule,
                format!(
                    "atom {} has {} terms but the relation has {} attributes",
                    atom.relation,
                    atom.terms.len(),
                    rel.attributes.len()
                ),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) use crate::fixtures;
