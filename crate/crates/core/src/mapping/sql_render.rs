//! Renders rules as `INSERT ... SELECT` scripts.
//!
//! Each target atom becomes one statement over the same `FROM`/`WHERE`.
//! Existential variables render as `SKOLEM('<rule>', '<var>', <universals...>)`
//! so statements of one rule share the generated key.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Mapping, Rule, Term};
use crate::schema::{SchemaDef, Value};

/// Renders every rule of the mapping, separated by blank lines.
pub fn render_mapping_sql(mapping: &Mapping) -> String {
    mapping
        .rules
        .iter()
        .map(|r| render_sql(r, &mapping.source, &mapping.target))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders one rule. The rule must be valid against both schemata.
pub fn render_sql(rule: &Rule, source: &SchemaDef, target: &SchemaDef) -> String {
    // First occurrence of each variable in the body gives its column reference.
    let mut column_of: BTreeMap<&str, String> = BTreeMap::new();
    let mut conjuncts = Vec::new();
    let mut from = Vec::new();
    for (i, atom) in rule.source_atoms.iter().enumerate() {
        let alias = format!("t{i}");
        from.push(format!("{} AS {alias}", ident(&atom.relation)));
        let rel = source
            .relation(&atom.relation)
            .expect("validated: source relation exists");
        for (term, attr) in atom.terms.iter().zip(&rel.attributes) {
            let col = format!("{alias}.{}", ident(&attr.name));
            match term {
                Term::Var(v) => match column_of.get(v.as_str()) {
                    Some(first) => conjuncts.push(format!("{first} = {col}")),
                    None => {
                        column_of.insert(v, col);
                    }
                },
                Term::Const(c) => conjuncts.push(format!("{col} = {}", literal(c))),
                Term::Transform { .. } => unreachable!("validated: no transforms in source atoms"),
            }
        }
    }
    let skolem_args: Vec<String> = rule
        .universals
        .iter()
        .map(|u| column_of[u.as_str()].clone())
        .collect();
    let existential = |v: &str| {
        let mut s = format!("SKOLEM({}, {}", literal(&Value::str(&rule.id)), literal(&Value::str(v)));
        for a in &skolem_args {
            s.push_str(", ");
            s.push_str(a);
        }
        s.push(')');
        s
    };
    let render = |t: &Term| render_term(t, &column_of, &rule.existentials, &existential);
    for f in &rule.filters {
        conjuncts.push(format!("{} {} {}", render(&f.left), f.op.sql(), render(&f.right)));
    }

    let mut out = String::new();
    let _ = writeln!(out, "-- rule {}", rule.id);
    for atom in &rule.target_atoms {
        let rel = target
            .relation(&atom.relation)
            .expect("validated: target relation exists");
        let cols: Vec<String> = rel.attributes.iter().map(|a| ident(&a.name)).collect();
        let exprs: Vec<String> = atom.terms.iter().map(render).collect();
        let _ = writeln!(out, "INSERT INTO {} ({})", ident(&atom.relation), cols.join(", "));
        let _ = writeln!(out, "SELECT DISTINCT {}", exprs.join(", "));
        let _ = write!(out, "FROM {}", from.join(", "));
        if !conjuncts.is_empty() {
            let _ = write!(out, "\nWHERE {}", conjuncts.join(" AND "));
        }
        out.push_str(";\n");
    }
    out
}

fn render_term(
    t: &Term,
    column_of: &BTreeMap<&str, String>,
    existentials: &[String],
    existential: &dyn Fn(&str) -> String,
) -> String {
    match t {
        Term::Var(v) if existentials.contains(v) => existential(v),
        Term::Var(v) => column_of[v.as_str()].clone(),
        Term::Const(c) => literal(c),
        Term::Transform { name, args } => format!(
            "{name}({})",
            args.iter()
                .map(|a| render_term(a, column_of, existentials, existential))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}

pub(super) fn literal(v: &Value) -> String {
    match v {
        Value::Null => "NULL".into(),
        Value::Num(_) => v.to_string(),
        Value::Str(s) => format!("'{}'", s.replace('\'', "''")),
        Value::Labeled(id) => format!("LABELED('{}')", id.replace('\'', "''")),
    }
}

/// Identifiers that are not plain words are double-quoted.
pub(super) fn ident(name: &str) -> String {
    let plain = name
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !super::sql_parse::is_keyword(name);
    if plain {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn lrd_rule_is_one_statement() {
        let m = lrd_mapping();
        let sql = render_sql(&m.rules[0], &m.source, &m.target);
        assert_eq!(sql.matches("INSERT INTO").count(), 1);
        assert!(sql.contains("FROM meds AS t0"));
    }

    #[test]
    fn trials_share_key_expression() {
        let m = trials_mapping();
        let sql = render_sql(&m.rules[0], &m.source, &m.target);
        assert_eq!(sql.matches("INSERT INTO").count(), 2);
        let key = "SKOLEM('r1', 'x1', t0.m_id, t0.generic_name, t1.funder, t1.month, t1.day, t1.year)";
        assert_eq!(sql.matches(key).count(), 2, "{sql}");
        assert!(sql.contains("WHERE t0.m_id = t1.m_id AND t1.year > 1990"), "{sql}");
        assert!(sql.contains("date_concat(t1.month, t1.day, t1.year)"));
    }

    #[test]
    fn filter_renders_in_where() {
        let m = lrd_mapping();
        let sql = render_sql(&m.rules[1], &m.source, &m.target);
        assert!(sql.contains("WHERE t0.year > 1990"), "{sql}");
    }

    #[test]
    fn quoting() {
        assert_eq!(ident("Drugs"), "Drugs");
        assert_eq!(ident("select"), "\"select\"");
        assert_eq!(ident("two words"), "\"two words\"");
        assert_eq!(literal(&Value::str("O'Neil")), "'O''Neil'");
    }
}
