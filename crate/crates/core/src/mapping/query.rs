//! Conjunctive-query evaluation by left-deep hash joins.

use std::collections::HashMap;

use crate::schema::{Instance, Row, Value};

/// One position of a query atom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Slot {
    /// Variable by index into the binding vector.
    Var(usize),
    Const(Value),
    /// Position not constrained and not bound.
    Ignore,
}

#[derive(Debug, Clone)]
pub struct QueryAtom {
    pub relation: String,
    pub slots: Vec<Slot>,
}

/// Every satisfying assignment of `atoms` over `instance`.
///
/// Bindings are vectors of length `var_count`; variables never bound stay
/// `None`. NULL never satisfies an equality (join or constant), labeled nulls
/// only equal themselves. Rows whose arity differs from the atom are skipped.
pub fn evaluate_conjunctive(
    atoms: &[QueryAtom],
    var_count: usize,
    instance: &Instance,
) -> Vec<Vec<Option<Value>>> {
    let mut bindings: Vec<Vec<Option<Value>>> = vec![vec![None; var_count]];
    let mut bound = vec![false; var_count];
    for atom in atoms {
        if bindings.is_empty() {
            break;
        }
        // Positions constrained before this atom is scanned.
        let mut key_positions = Vec::new();
        // Positions introducing a variable (first occurrence in this atom).
        let mut new_vars: Vec<(usize, usize)> = Vec::new();
        // Later positions repeating a variable first seen in this atom.
        let mut repeats: Vec<(usize, usize)> = Vec::new();
        let mut seen_here: HashMap<usize, usize> = HashMap::new();
        for (pos, slot) in atom.slots.iter().enumerate() {
            match slot {
                Slot::Const(_) => key_positions.push(pos),
                Slot::Var(v) if bound[*v] => key_positions.push(pos),
                Slot::Var(v) => match seen_here.get(v) {
                    Some(&first) => repeats.push((first, pos)),
                    None => {
                        seen_here.insert(*v, pos);
                        new_vars.push((pos, *v));
                    }
                },
                Slot::Ignore => {}
            }
        }

        let mut index: HashMap<Vec<&Value>, Vec<&Row>> = HashMap::new();
        for row in instance.rows_of(&atom.relation) {
            if row.len() != atom.slots.len() {
                continue;
            }
            if key_positions.iter().any(|&p| row[p].is_null())
                || repeats
                    .iter()
                    .any(|&(a, b)| row[a].is_null() || row[a] != row[b])
            {
                continue;
            }
            let key = key_positions.iter().map(|&p| &row[p]).collect();
            index.entry(key).or_default().push(row);
        }

        let mut next = Vec::new();
        for binding in &bindings {
            let key: Option<Vec<&Value>> = key_positions
                .iter()
                .map(|&p| match &atom.slots[p] {
                    Slot::Const(c) => Some(c),
                    Slot::Var(v) => binding[*v].as_ref(),
                    Slot::Ignore => unreachable!("ignored slots are never key positions"),
                })
                .collect();
            let Some(key) = key else { continue };
            if key.iter().any(|v| v.is_null()) {
                continue;
            }
            if let Some(rows) = index.get(&key) {
                for row in rows {
                    let mut b = binding.clone();
                    for &(pos, var) in &new_vars {
                        b[var] = Some(row[pos].clone());
                    }
                    next.push(b);
                }
            }
        }
        for &(_, v) in &new_vars {
            bound[v] = true;
        }
        bindings = next;
    }
    bindings
}
