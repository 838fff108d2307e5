use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::MatchError;
use crate::prompt::Direction;
use crate::schema::Correspondence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Union,
    /// Support strictly greater than n/2.
    Majority,
    Intersection,
}

/// Answers of one sample, unioned across the attributes prompted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub direction: Direction,
    pub sample: usize,
    pub pairs: BTreeSet<Correspondence>,
}

/// Pairs kept by `method`, each with the number of sets containing it.
pub fn aggregate(sets: &[CandidateSet], method: Aggregation) -> Result<BTreeMap<Correspondence, usize>, MatchError> {
    if sets.is_empty() {
        return Err(MatchError::NoSamples);
    }
    let n = sets.len();
    let mut support: BTreeMap<Correspondence, usize> = BTreeMap::new();
    for set in sets {
        for pair in &set.pairs {
            *support.entry(pair.clone()).or_default() += 1;
        }
    }
    support.retain(|_, s| match method {
        Aggregation::Union => true,
        Aggregation::Majority => 2 * *s > n,
        Aggregation::Intersection => *s == n,
    });
    Ok(support)
}
