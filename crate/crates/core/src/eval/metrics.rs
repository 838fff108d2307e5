use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::schema::{AttrRef, Correspondence};

/// Cut-off for ranked lists: the first `k` entries or all of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum K {
    At(usize),
    Max,
}

impl K {
    fn take(self) -> usize {
        match self {
            K::At(k) => k,
            K::Max => usize::MAX,
        }
    }
}

impl fmt::Display for K {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            K::At(k) => write!(f, "{k}"),
            K::Max => f.write_str("max"),
        }
    }
}

impl FromStr for K {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("max") {
            return Ok(K::Max);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(K::At(k)),
            _ => Err(EvalError::InvalidK(s.to_string())),
        }
    }
}

/// Precision, recall and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// F1 is 0 when precision and recall are both 0.
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }

    /// Component-wise mean; `None` for an empty slice.
    pub fn mean(scores: &[Prf]) -> Option<Prf> {
        if scores.is_empty() {
            return None;
        }
        let n = scores.len() as f64;
        Some(Prf {
            precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
            recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
            f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
        })
    }
}

/// Top-k pairs of every ranked list.
pub fn top_k(ranked: &BTreeMap<AttrRef, Vec<Correspondence>>, k: K) -> BTreeSet<Correspondence> {
    ranked.values().flat_map(|l| l.iter().take(k.take()).cloned()).collect()
}

/// P@k, R@k and F1@k of one schema pair. An empty prediction set has
/// precision 0.
pub fn metrics_at_k(
    ranked: &BTreeMap<AttrRef, Vec<Correspondence>>,
    gold: &BTreeSet<Correspondence>,
    k: K,
) -> Result<Prf, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    if k == K::At(0) {
        return Err(EvalError::InvalidK("0".into()));
    }
    let preds = top_k(ranked, k);
    let hits = preds.intersection(gold).count() as f64;
    let precision = if preds.is_empty() { 0.0 } else { hits / preds.len() as f64 };
    Ok(Prf::new(precision, hits / gold.len() as f64))
}

/// Macro average over schema pairs, each scored on its own gold set.
pub fn macro_metrics_at_k(
    pairs: &[(BTreeMap<AttrRef, Vec<Correspondence>>, BTreeSet<Correspondence>)],
    k: K,
) -> Result<Prf, EvalError> {
    let scores = pairs
        .iter()
        .map(|(ranked, gold)| metrics_at_k(ranked, gold, k))
        .collect::<Result<Vec<_>, _>>()?;
    Prf::mean(&scores).ok_or(EvalError::EmptyGold)
}

/// Share of attributes with at least one gold match whose top-ranked pair
/// is correct. Attributes without a ranked list count as misses.
pub fn accuracy_at_1(
    ranked: &BTreeMap<AttrRef, Vec<Correspondence>>,
    gold: &BTreeSet<Correspondence>,
) -> Result<f64, EvalError> {
    let attrs: BTreeSet<&AttrRef> = gold.iter().map(|c| &c.target).collect();
    if attrs.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let hits = attrs
        .iter()
        .filter(|a| {
            ranked
                .get(**a)
                .and_then(|l| l.first())
                .is_some_and(|top| gold.contains(top))
        })
        .count();
    Ok(hits as f64 / attrs.len() as f64)
}
