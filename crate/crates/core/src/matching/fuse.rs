use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stable::stable_match;
use crate::schema::{AttrRef, Correspondence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Mean of both directions, a missing side counting as 0.
    Average,
    /// Product of both directions; pairs missing a side are dropped.
    Multiply,
    /// Top-k stable matches between source and target attributes.
    Stable { k: usize },
}

impl Fusion {
    pub fn tag(&self) -> String {
        match self {
            Fusion::Average => "average".into(),
            Fusion::Multiply => "multiply".into(),
            Fusion::Stable { k } => format!("stable(k={k})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub pair: Correspondence,
    /// Samples of each direction that proposed the pair (each at most n).
    pub support_forward: usize,
    pub support_swapped: usize,
    pub conf_forward: Option<f64>,
    pub conf_swapped: Option<f64>,
    pub conf_final: f64,
    pub method: String,
    /// Stable-matching round that produced the pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<usize>,
}

impl ScoredCandidate {
    fn new(pair: &Correspondence, cf: Option<f64>, cs: Option<f64>, conf_final: f64, method: String) -> Self {
        Self {
            pair: pair.clone(),
            support_forward: 0,
            support_swapped: 0,
            conf_forward: cf,
            conf_swapped: cs,
            conf_final,
            method,
            round: None,
        }
    }
}

/// Orders by final confidence, highest first, then by pair.
pub fn rank(candidates: &mut [ScoredCandidate]) {
    candidates.sort_by(|x, y| y.conf_final.total_cmp(&x.conf_final).then_with(|| x.pair.cmp(&y.pair)));
}

/// Merges per-direction confidences keyed by normalized (source, target) pairs.
pub fn fuse(
    forward: &BTreeMap<Correspondence, f64>,
    swapped: &BTreeMap<Correspondence, f64>,
    method: Fusion,
) -> Vec<ScoredCandidate> {
    let tag = method.tag();
    let mut out: Vec<ScoredCandidate> = match method {
        Fusion::Average => {
            let mut keys: Vec<&Correspondence> = forward.keys().chain(swapped.keys()).collect();
            keys.sort();
            keys.dedup();
            keys.into_iter()
                .map(|p| {
                    let (cf, cs) = (forward.get(p).copied(), swapped.get(p).copied());
                    let avg = (cf.unwrap_or(0.0) + cs.unwrap_or(0.0)) / 2.0;
                    ScoredCandidate::new(p, cf, cs, avg, tag.clone())
                })
                .collect()
        }
        Fusion::Multiply => forward
            .iter()
            .filter_map(|(p, &cf)| {
                let cs = *swapped.get(p)?;
                Some(ScoredCandidate::new(p, Some(cf), Some(cs), cf * cs, tag.clone()))
            })
            .collect(),
        Fusion::Stable { k } => {
            // Source attributes rank targets by the swapped-direction scores,
            // target attributes rank sources by the forward scores.
            let prefs_a = preferences(swapped, |p| (&p.source, &p.target));
            let prefs_b = preferences(forward, |p| (&p.target, &p.source));
            stable_match(&prefs_a, &prefs_b, k.max(1))
                .into_iter()
                .map(|(a, b, round)| {
                    let p = Correspondence::new(a, b);
                    let (cf, cs) = (forward[&p], swapped[&p]);
                    let mut c = ScoredCandidate::new(&p, Some(cf), Some(cs), cf * cs, tag.clone());
                    c.round = Some(round);
                    c
                })
                .collect()
        }
    };
    rank(&mut out);
    out
}

/// Preference list per chooser: options by descending score, ties by name.
fn preferences(
    scores: &BTreeMap<Correspondence, f64>,
    split: impl Fn(&Correspondence) -> (&AttrRef, &AttrRef),
) -> BTreeMap<AttrRef, Vec<AttrRef>> {
    let mut lists: BTreeMap<AttrRef, Vec<(f64, AttrRef)>> = BTreeMap::new();
    for (p, &s) in scores {
        let (chooser, option) = split(p);
        lists.entry(chooser.clone()).or_default().push((s, option.clone()));
    }
    lists
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(|x, y| y.0.total_cmp(&x.0).then_with(|| x.1.cmp(&y.1)));
            (k, v.into_iter().map(|(_, o)| o).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(a: &str, b: &str) -> Correspondence {
        Correspondence::new(AttrRef::new("S", a), AttrRef::new("T", b))
    }

    fn scores(v: &[(&str, &str, f64)]) -> BTreeMap<Correspondence, f64> {
        v.iter().map(|(a, b, s)| (pair(a, b), *s)).collect()
    }

    #[test]
    fn one_sided_pair() {
        let f = scores(&[("a", "b", 0.8)]);
        let s = BTreeMap::new();
        let avg = fuse(&f, &s, Fusion::Average);
        assert_eq!(avg.len(), 1);
        assert_eq!(avg[0].conf_final, 0.4);
        assert!(fuse(&f, &s, Fusion::Multiply).is_empty());
    }

    #[test]
    fn both_sides() {
        let f = scores(&[("a", "b", 0.8)]);
        let s = scores(&[("a", "b", 0.5)]);
        assert!((fuse(&f, &s, Fusion::Average)[0].conf_final - 0.65).abs() < 1e-12);
        assert!((fuse(&f, &s, Fusion::Multiply)[0].conf_final - 0.40).abs() < 1e-12);
    }

    #[test]
    fn stable_picks_mutual_favourites() {
        // a1 and b1 prefer each other, as do a2 and b2.
        let f = scores(&[("a1", "b1", 0.9), ("a2", "b1", 0.1), ("a1", "b2", 0.2), ("a2", "b2", 0.8)]);
        let s = scores(&[("a1", "b1", 0.7), ("a1", "b2", 0.3), ("a2", "b1", 0.4), ("a2", "b2", 0.6)]);
        let out = fuse(&f, &s, Fusion::Stable { k: 1 });
        let got: Vec<_> = out.iter().map(|c| c.pair.clone()).collect();
        assert_eq!(got, [pair("a1", "b1"), pair("a2", "b2")]);
        assert!(out.iter().all(|c| c.round == Some(1)));
        assert!((out[0].conf_final - 0.63).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_pair() {
        let f = scores(&[("b", "x", 0.5), ("a", "x", 0.5)]);
        let s = scores(&[("b", "x", 0.5), ("a", "x", 0.5)]);
        let out = fuse(&f, &s, Fusion::Average);
        assert_eq!(out[0].pair, pair("a", "x"));
    }
}
