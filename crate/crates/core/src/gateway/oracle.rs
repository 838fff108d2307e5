//! A simulated model that answers match and rank prompts from a table of
//! weighted correspondences. Deterministic; reports log-probabilities.

use std::collections::BTreeMap;

use serde_json::Value as Json;

use super::{estimate_tokens, MockBackend, find_json_objects, CompletionRequest, CompletionResponse, TokenAlternative, TokenLogprob, Usage};
use crate::schema::{AttrRef, Correspondence};

/// Answers from `weights`: a match prompt lists every attribute whose pair
/// with the single attribute has positive weight; a rank prompt puts
/// probability proportional to weight on each option.
#[derive(Debug, Clone, Default)]
pub struct Oracle {
    weights: BTreeMap<Correspondence, f64>,
    /// Pairs seen only when the source relation is the one listed.
    one_way: BTreeMap<Correspondence, f64>,
}

impl Oracle {
    pub fn new(weights: impl IntoIterator<Item = (Correspondence, f64)>) -> Self {
        Self {
            weights: weights.into_iter().collect(),
            one_way: BTreeMap::new(),
        }
    }

    /// Adds a pair proposed and ranked only in the forward direction.
    pub fn with_one_way(mut self, pair: Correspondence, weight: f64) -> Self {
        self.one_way.insert(pair, weight);
        self
    }

    /// Every pair with weight 1.
    pub fn exact(pairs: impl IntoIterator<Item = Correspondence>) -> Self {
        Self::new(pairs.into_iter().map(|p| (p, 1.0)))
    }

    /// Weight of a listed attribute against the single one.
    fn weight(&self, listed: &AttrRef, single: &AttrRef) -> f64 {
        let fwd = Correspondence::new(listed.clone(), single.clone());
        let back = Correspondence::new(single.clone(), listed.clone());
        self.weights
            .get(&fwd)
            .or_else(|| self.weights.get(&back))
            .or_else(|| self.one_way.get(&fwd))
            .copied()
            .unwrap_or(0.0)
    }

    /// A mock backend answering every prompt it can through this oracle.
    pub fn into_backend(self) -> MockBackend {
        MockBackend::new().with_responder(move |r| self.respond(r))
    }

    pub fn respond(&self, request: &CompletionRequest) -> Option<CompletionResponse> {
        let body = &request.prompt;
        let options = option_lines(body);
        if !options.is_empty() {
            return Some(self.rank(body, &options));
        }
        let objects = find_json_objects(body);
        let relation = objects.first()?;
        let single = objects.get(1)?;
        let attrs = relation.get("attributes")?.as_array()?;
        let rel_name = relation.get("name")?.as_str()?;
        let one = single_ref(single)?;
        let names: Vec<&str> = attrs
            .iter()
            .filter_map(|a| a.get("name").and_then(Json::as_str))
            .filter(|n| self.weight(&AttrRef::new(rel_name, *n), &one) > 0.0)
            .collect();
        let answer = serde_json::json!({ "matches": names });
        let text = format!("Comparing each attribute with {one}.\n{answer}");
        Some(CompletionResponse::text_only(body, text))
    }

    fn rank(&self, body: &str, options: &[(String, AttrRef)]) -> CompletionResponse {
        let target = find_json_objects(body).first().and_then(single_ref);
        let mut weights: Vec<f64> = options
            .iter()
            .map(|(_, c)| target.as_ref().map_or(0.0, |t| self.weight(c, t)))
            .collect();
        if weights.iter().all(|w| *w <= 0.0) {
            weights = vec![1.0; options.len()];
        }
        let total: f64 = weights.iter().sum();
        let top: Vec<TokenAlternative> = options
            .iter()
            .zip(&weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|((label, _), w)| TokenAlternative {
                token: format!(" {label}"),
                logprob: (w / total).ln(),
            })
            .collect();
        let best = top
            .iter()
            .fold(&top[0], |b, t| if t.logprob > b.logprob { t } else { b })
            .clone();
        let tokens = vec![
            TokenLogprob {
                token: "Answer".into(),
                logprob: 0.0,
                top: vec![],
            },
            TokenLogprob {
                token: ":".into(),
                logprob: 0.0,
                top: vec![],
            },
            TokenLogprob {
                token: best.token.clone(),
                logprob: best.logprob,
                top,
            },
        ];
        let text: String = tokens.iter().map(|t| t.token.as_str()).collect();
        CompletionResponse {
            usage: Usage {
                input_tokens: estimate_tokens(body),
                output_tokens: tokens.len() as u64,
                estimated: true,
            },
            text,
            finish_reason: "stop".into(),
            logprobs: Some(tokens),
        }
    }
}

fn single_ref(doc: &serde_json::Map<String, Json>) -> Option<AttrRef> {
    let rel = doc.get("relation")?.as_str()?;
    let attr = doc.get("attribute")?.get("name")?.as_str()?;
    Some(AttrRef::new(rel, attr))
}

/// Lines of the form `X. {json}` in a rank prompt.
fn option_lines(body: &str) -> Vec<(String, AttrRef)> {
    body.lines()
        .filter_map(|line| {
            let (label, rest) = line.split_once(". {")?;
            if label.len() != 1 || !label.chars().all(|c| c.is_ascii_uppercase()) {
                return None;
            }
            let doc: serde_json::Map<String, Json> = serde_json::from_str(&format!("{{{rest}")).ok()?;
            Some((label.to_string(), single_ref(&doc)?))
        })
        .collect()
}
