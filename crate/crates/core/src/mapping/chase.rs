use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::query::{evaluate_conjunctive, QueryAtom, Slot};
use super::transform::{TransformError, TransformRegistry};
use super::{Mapping, Rule, Term};
use crate::schema::{Instance, Row, SchemaDef, Value};
use crate::seed::sha256_hex;

/// A source binding whose target rows could not be produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    pub rule: String,
    pub binding: Vec<Value>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChaseOutput {
    pub instance: Instance,
    pub errors: Vec<RowError>,
}

/// Chases `source` through `mapping` with the default transform registry.
pub fn chase(mapping: &Mapping, source: &Instance) -> Instance {
    chase_with(mapping, source, &TransformRegistry::default()).instance
}

/// Materializes the target instance.
///
/// Each rule's body is evaluated as a conjunctive query and filtered; every
/// surviving binding emits one row per target atom. Existential variables get
/// labeled nulls whose id digests (rule id, variable, universal binding), so
/// output is independent of evaluation order. A binding whose transforms fail
/// emits nothing and is reported in `errors`.
pub fn chase_with(mapping: &Mapping, source: &Instance, registry: &TransformRegistry) -> ChaseOutput {
    let per_rule: Vec<(Vec<(String, Row)>, Vec<RowError>)> = mapping
        .rules
        .par_iter()
        .map(|rule| fire_rule(rule, source, registry))
        .collect();

    let mut instance = Instance::empty_for(&mapping.target);
    let columns = target_columns(&mapping.target);
    let mut errors = Vec::new();
    for (rows, errs) in per_rule {
        for (rel, row) in rows {
            instance.insert(&rel, &columns[rel.as_str()], row);
        }
        errors.extend(errs);
    }
    ChaseOutput { instance, errors }
}

fn target_columns(schema: &SchemaDef) -> BTreeMap<&str, Vec<String>> {
    schema
        .relations
        .iter()
        .map(|r| (r.name.as_str(), r.attribute_names().map(str::to_string).collect()))
        .collect()
}

fn fire_rule(
    rule: &Rule,
    source: &Instance,
    registry: &TransformRegistry,
) -> (Vec<(String, Row)>, Vec<RowError>) {
    let slot_of: BTreeMap<&str, usize> = rule
        .universals
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect();
    let atoms: Vec<QueryAtom> = rule
        .source_atoms
        .iter()
        .map(|a| QueryAtom {
            relation: a.relation.clone(),
            slots: a
                .terms
                .iter()
                .map(|t| match t {
                    Term::Var(v) => Slot::Var(slot_of[v.as_str()]),
                    Term::Const(c) => Slot::Const(c.clone()),
                    Term::Transform { .. } => unreachable!("validated: no transforms in source atoms"),
                })
                .collect(),
        })
        .collect();

    let mut out = Vec::new();
    let mut errors = Vec::new();
    for binding in evaluate_conjunctive(&atoms, rule.universals.len(), source) {
        let binding: Vec<Value> = binding
            .into_iter()
            .map(|v| v.expect("every universal occurs in a source atom"))
            .collect();
        let mut env: BTreeMap<&str, Value> = rule
            .universals
            .iter()
            .map(String::as_str)
            .zip(binding.iter().cloned())
            .collect();

        let passes = rule.filters.iter().try_fold(true, |acc, f| {
            let l = eval_term(&f.left, &env, registry)?;
            let r = eval_term(&f.right, &env, registry)?;
            Ok::<_, TransformError>(acc && f.op.compare(&l, &r))
        });
        match passes {
            Ok(true) => {}
            Ok(false) => continue,
            Err(e) => {
                report(rule, &binding, e, &mut errors);
                continue;
            }
        }

        let key = serde_json::to_string(&binding).expect("values serialize");
        for y in &rule.existentials {
            env.insert(y, Value::Labeled(surrogate_id(&rule.id, y, &key)));
        }
        let rows: Result<Vec<(String, Row)>, TransformError> = rule
            .target_atoms
            .iter()
            .map(|atom| {
                let row = atom
                    .terms
                    .iter()
                    .map(|t| eval_term(t, &env, registry))
                    .collect::<Result<Row, _>>()?;
                Ok((atom.relation.clone(), row))
            })
            .collect();
        match rows {
            Ok(rows) => out.extend(rows),
            Err(e) => report(rule, &binding, e, &mut errors),
        }
    }
    (out, errors)
}

fn report(rule: &Rule, binding: &[Value], e: TransformError, errors: &mut Vec<RowError>) {
    tracing::warn!(rule = %rule.id, error = %e, "skipping binding");
    errors.push(RowError {
        rule: rule.id.clone(),
        binding: binding.to_vec(),
        error: e.to_string(),
    });
}

fn surrogate_id(rule: &str, var: &str, binding_key: &str) -> String {
    let material = format!("{rule}\u{0}{var}\u{0}{binding_key}");
    sha256_hex(material.as_bytes())[..24].to_string()
}

fn eval_term(
    t: &Term,
    env: &BTreeMap<&str, Value>,
    registry: &TransformRegistry,
) -> Result<Value, TransformError> {
    match t {
        Term::Var(v) => Ok(env.get(v.as_str()).cloned().expect("validated: variable is bound")),
        Term::Const(c) => Ok(c.clone()),
        Term::Transform { name, args } => {
            let args = args
                .iter()
                .map(|a| eval_term(a, env, registry))
                .collect::<Result<Vec<_>, _>>()?;
            registry.apply(name, &args)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    fn source(trials: &[(f64, &str, f64, f64, f64)]) -> Instance {
        let s = source_schema();
        let mut i = Instance::empty_for(&s);
        let meds: Vec<String> = vec!["m_id".into(), "generic_name".into()];
        i.insert("meds", &meds, vec![Value::num(1.0), Value::str("aspirin")]);
        let cols: Vec<String> = s.relation("trial").unwrap().attribute_names().map(String::from).collect();
        for &(id, f, m, d, y) in trials {
            i.insert(
                "trial",
                &cols,
                vec![Value::num(id), Value::str(f), Value::num(m), Value::num(d), Value::num(y)],
            );
        }
        i
    }

    #[test]
    fn trials_single_binding() {
        let out = chase(&trials_mapping(), &source(&[(1.0, "NIH", 5.0, 1.0, 1995.0)]));
        let drugs: Vec<_> = out.rows_of("Drugs").collect();
        let trials: Vec<_> = out.rows_of("Clinical_Trials").collect();
        assert_eq!(drugs.len(), 1);
        assert_eq!(trials.len(), 1);
        assert!(matches!(drugs[0][0], Value::Labeled(_)));
        assert_eq!(drugs[0][0], trials[0][0]);
        assert_eq!(drugs[0][1], Value::str("aspirin"));
        assert_eq!(trials[0][1], Value::str("NIH"));
        assert_eq!(trials[0][2], Value::str("1995-05-01"));
        // unshared existentials are distinct fresh nulls
        assert_ne!(drugs[0][2], drugs[0][3]);
        assert_ne!(drugs[0][0], drugs[0][2]);
    }

    #[test]
    fn filter_rejects_old_trials() {
        let out = chase(&trials_mapping(), &source(&[(1.0, "NIH", 5.0, 1.0, 1985.0)]));
        assert_eq!(out.total_rows(), 0);
    }

    #[test]
    fn lrd_translation_loses_links() {
        let s = source_schema();
        let mut i = Instance::empty_for(&s);
        let meds: Vec<String> = vec!["m_id".into(), "generic_name".into()];
        i.insert("meds", &meds, vec![Value::num(1.0), Value::str("a")]);
        i.insert("meds", &meds, vec![Value::num(2.0), Value::str("b")]);
        assert_eq!(chase(&trials_mapping(), &i).total_rows(), 0);
        let lrd = chase(&lrd_mapping(), &i);
        assert_eq!(lrd.relation("Drugs").unwrap().len(), 2);
        assert_eq!(lrd.relation("Clinical_Trials").unwrap().len(), 0);
    }

    #[test]
    fn transform_failure_skips_binding() {
        let out = chase_with(
            &trials_mapping(),
            &source(&[(1.0, "NIH", 13.0, 1.0, 1995.0), (1.0, "EU", 2.0, 3.0, 1999.0)]),
            &TransformRegistry::default(),
        );
        assert_eq!(out.errors.len(), 1);
        assert_eq!(out.instance.relation("Clinical_Trials").unwrap().len(), 1);
        // referential integrity: every trial surrogate names an emitted drug
        let drug_keys: Vec<_> = out.instance.rows_of("Drugs").map(|r| r[0].clone()).collect();
        for t in out.instance.rows_of("Clinical_Trials") {
            assert_eq!(drug_keys.iter().filter(|k| **k == t[0]).count(), 1);
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let src = source(&[(1.0, "NIH", 5.0, 1.0, 1995.0), (1.0, "EU", 2.0, 3.0, 1999.0)]);
        let a = chase(&trials_mapping(), &src);
        let b = chase(&trials_mapping(), &src);
        assert_eq!(a.to_json_string(), b.to_json_string());
    }
}
