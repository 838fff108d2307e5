//! Deferred acceptance over possibly incomplete preference lists.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// One round of deferred acceptance with `A` proposing.
///
/// A pair can only be matched if each side lists the other. The result is
/// stable: no mutually acceptable pair prefers each other to their partners
/// (an unmatched side prefers any acceptable partner).
pub fn gale_shapley<A, B>(prefs_a: &BTreeMap<A, Vec<B>>, prefs_b: &BTreeMap<B, Vec<A>>) -> BTreeMap<A, B>
where
    A: Ord + Clone,
    B: Ord + Clone,
{
    let rank_b: BTreeMap<&B, BTreeMap<&A, usize>> = prefs_b
        .iter()
        .map(|(b, list)| {
            let mut ranks = BTreeMap::new();
            for (i, a) in list.iter().enumerate() {
                ranks.entry(a).or_insert(i);
            }
            (b, ranks)
        })
        .collect();
    let mut next: BTreeMap<&A, usize> = prefs_a.keys().map(|a| (a, 0)).collect();
    let mut held: BTreeMap<&B, &A> = BTreeMap::new();
    let mut free: VecDeque<&A> = prefs_a.keys().collect();

    while let Some(a) = free.pop_front() {
        let list = &prefs_a[a];
        let i = next.get_mut(a).expect("every proposer has a cursor");
        let Some(b) = list.get(*i) else { continue };
        *i += 1;
        let Some(my_rank) = rank_b.get(b).and_then(|r| r.get(a)) else {
            free.push_back(a);
            continue;
        };
        match held.get(b) {
            None => {
                held.insert(b, a);
            }
            Some(&current) => {
                if *my_rank < rank_b[b][current] {
                    held.insert(b, a);
                    free.push_back(current);
                } else {
                    free.push_back(a);
                }
            }
        }
    }
    held.into_iter().map(|(b, a)| (a.clone(), b.clone())).collect()
}

/// Top-`k` stable matches: round 1 is deferred acceptance; each later round
/// removes every pair matched so far from both sides' lists and reruns.
/// Returns `(a, b, round)` with rounds numbered from 1.
pub fn stable_match<A, B>(prefs_a: &BTreeMap<A, Vec<B>>, prefs_b: &BTreeMap<B, Vec<A>>, k: usize) -> Vec<(A, B, usize)>
where
    A: Ord + Clone,
    B: Ord + Clone,
{
    let mut removed: BTreeSet<(A, B)> = BTreeSet::new();
    let mut out = Vec::new();
    for round in 1..=k {
        let pa: BTreeMap<A, Vec<B>> = prefs_a
            .iter()
            .map(|(a, l)| {
                let keep = l.iter().filter(|b| !removed.contains(&(a.clone(), (*b).clone()))).cloned().collect();
                (a.clone(), keep)
            })
            .collect();
        let pb: BTreeMap<B, Vec<A>> = prefs_b
            .iter()
            .map(|(b, l)| {
                let keep = l.iter().filter(|a| !removed.contains(&((*a).clone(), b.clone()))).cloned().collect();
                (b.clone(), keep)
            })
            .collect();
        let matched = gale_shapley(&pa, &pb);
        if matched.is_empty() {
            break;
        }
        for (a, b) in matched {
            removed.insert((a.clone(), b.clone()));
            out.push((a, b, round));
        }
    }
    out
}
