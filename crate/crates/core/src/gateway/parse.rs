use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use thiserror::Error;

use super::{CompletionResponse, GatewayError};
use crate::mapping::extract_script;
use crate::prompt::OutputContract;

/// The response did not contain an answer in the required format.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{reason}")]
pub struct FormatError {
    pub reason: String,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StructuredAnswer {
    Matches(Vec<String>),
    Label(String),
    Script(String),
}

/// Every top-level well-formed JSON object in `text`, in order of appearance.
pub fn find_json_objects(text: &str) -> Vec<Map<String, Json>> {
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(off) = text[i..].find('{') {
        let start = i + off;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Json>();
        match stream.next() {
            Some(Ok(Json::Object(map))) => {
                out.push(map);
                i = start + stream.byte_offset();
            }
            _ => i = start + 1,
        }
    }
    out
}

/// Extracts the answer required by `contract`. For match answers the last
/// object carrying a `matches` list wins; names outside the allowed set are
/// dropped.
pub fn parse_structured(text: &str, contract: &OutputContract) -> Result<StructuredAnswer, FormatError> {
    let fail = |reason: &str| FormatError {
        reason: reason.to_string(),
        raw: text.to_string(),
    };
    match contract {
        OutputContract::Matches { allowed } => {
            let objects = find_json_objects(text);
            if objects.is_empty() {
                return Err(fail("no JSON object in response"));
            }
            let list = objects
                .iter()
                .rev()
                .find_map(|o| o.get("matches"))
                .ok_or_else(|| fail("no object has a \"matches\" field"))?;
            let items = list.as_array().ok_or_else(|| fail("\"matches\" is not a list"))?;
            let mut names: Vec<String> = Vec::new();
            for item in items {
                let Some(raw) = item.as_str() else {
                    return Err(fail("\"matches\" holds a non-string entry"));
                };
                match resolve_name(raw, allowed) {
                    Some(n) if !names.contains(&n) => names.push(n),
                    Some(_) => {}
                    None => tracing::debug!(name = raw, "dropping unknown attribute name"),
                }
            }
            Ok(StructuredAnswer::Matches(names))
        }
        OutputContract::OptionLabel { options } => {
            let labels: Vec<&str> = options.keys().map(String::as_str).collect();
            parse_option_label(text, &labels)
                .map(StructuredAnswer::Label)
                .ok_or_else(|| fail("no option label in response"))
        }
        OutputContract::Script => {
            let script = extract_script(text);
            if script.trim().is_empty() {
                Err(fail("empty script"))
            } else {
                Ok(StructuredAnswer::Script(script))
            }
        }
    }
}

fn resolve_name(raw: &str, allowed: &[String]) -> Option<String> {
    let raw = raw.trim();
    let unqualified = raw.rsplit('.').next().unwrap_or(raw);
    for candidate in [raw, unqualified] {
        if let Some(a) = allowed.iter().find(|a| *a == candidate) {
            return Some(a.clone());
        }
        let folded: Vec<&String> = allowed.iter().filter(|a| a.eq_ignore_ascii_case(candidate)).collect();
        if folded.len() == 1 {
            return Some(folded[0].clone());
        }
    }
    None
}

/// Byte offset of the answer: first non-blank character of the final
/// non-empty line, after an optional `Answer:` prefix.
fn answer_offset(text: &str) -> Option<usize> {
    let trimmed_end = text.trim_end();
    let line_start = trimmed_end.rfind('\n').map_or(0, |i| i + 1);
    let line = &trimmed_end[line_start..];
    let lead = line.len() - line.trim_start().len();
    let mut pos = line_start + lead;
    let rest = &text[pos..];
    if rest.len() >= 7 && rest[..7].eq_ignore_ascii_case("answer:") {
        pos += 7;
        pos += text[pos..].len() - text[pos..].trim_start().len();
    }
    (pos < trimmed_end.len()).then_some(pos)
}

fn strip_label(token: &str) -> &str {
    token
        .trim()
        .trim_matches(|c: char| matches!(c, '.' | ')' | '(' | '*' | ':' | '"' | '\'' | '[' | ']'))
}

/// The option label given as the answer, if it is one of `labels`.
pub fn parse_option_label(text: &str, labels: &[&str]) -> Option<String> {
    let pos = answer_offset(text)?;
    let word: String = text[pos..]
        .chars()
        .take_while(|c| !c.is_whitespace())
        .collect();
    let word = strip_label(&word);
    labels.iter().find(|l| **l == word).map(|l| l.to_string())
}

/// Log-probability of each label at the answer position. Labels absent from
/// the reported alternatives get negative infinity.
pub fn option_logprobs(response: &CompletionResponse, labels: &[&str]) -> Result<BTreeMap<String, f64>, GatewayError> {
    let tokens = match &response.logprobs {
        Some(t) if !t.is_empty() => t,
        _ => return Err(GatewayError::Capability("response carries no log-probabilities".into())),
    };
    let text: String = tokens.iter().map(|t| t.token.as_str()).collect();
    let pos = answer_offset(&text)
        .ok_or_else(|| GatewayError::Capability("answer position not identifiable".into()))?;
    let mut end = 0;
    let token = tokens
        .iter()
        .find(|t| {
            end += t.token.len();
            end > pos
        })
        .expect("offset lies inside the concatenated tokens");

    let mut out: BTreeMap<String, f64> = labels.iter().map(|l| (l.to_string(), f64::NEG_INFINITY)).collect();
    let alternatives = std::iter::once((token.token.as_str(), token.logprob))
        .chain(token.top.iter().map(|a| (a.token.as_str(), a.logprob)));
    for (tok, lp) in alternatives {
        if let Some(slot) = out.get_mut(strip_label(tok)) {
            *slot = slot.max(lp);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{TokenAlternative, TokenLogprob, Usage};
    use super::*;

    fn matches(allowed: &[&str]) -> OutputContract {
        OutputContract::Matches {
            allowed: allowed.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn reasoning_then_object() {
        let c = matches(&["generic_name", "m_id"]);
        let t = "The name column holds drug names {not json}. So:\n{\"matches\": [\"generic_name\"]}";
        assert_eq!(parse_structured(t, &c), Ok(StructuredAnswer::Matches(vec!["generic_name".into()])));
    }

    #[test]
    fn last_object_wins_and_unknown_names_drop() {
        let c = matches(&["a1", "a2"]);
        let t = r#"{"matches": ["a1"]} then {"matches": ["A2", "zz", "r.a1", "a2"]}"#;
        assert_eq!(
            parse_structured(t, &c),
            Ok(StructuredAnswer::Matches(vec!["a2".into(), "a1".into()]))
        );
    }

    #[test]
    fn nested_objects_are_one_object() {
        let objs = find_json_objects(r#"x {"a": {"b": 1}} y {"c": [1, {"d": 2}]}"#);
        assert_eq!(objs.len(), 2);
        assert!(objs[0].contains_key("a") && objs[1].contains_key("c"));
    }

    #[test]
    fn missing_object_is_format_error() {
        let err = parse_structured("I think generic_name matches.", &matches(&["generic_name"])).unwrap_err();
        assert_eq!(err.raw, "I think generic_name matches.");
        assert!(parse_structured(r#"{"answer": 1}"#, &matches(&["a"])).is_err());
        assert!(parse_structured(r#"{"matches": "a"}"#, &matches(&["a"])).is_err());
    }

    #[test]
    fn option_label_from_text() {
        assert_eq!(parse_option_label("reasoning\nAnswer: B", &["A", "B"]), Some("B".into()));
        assert_eq!(parse_option_label("B.", &["A", "B"]), Some("B".into()));
        assert_eq!(parse_option_label("Answer: Z", &["A", "B"]), None);
        assert_eq!(parse_option_label("Both", &["A", "B"]), None);
    }

    fn tok(t: &str, lp: f64, top: &[(&str, f64)]) -> TokenLogprob {
        TokenLogprob {
            token: t.into(),
            logprob: lp,
            top: top
                .iter()
                .map(|(t, l)| TokenAlternative { token: t.to_string(), logprob: *l })
                .collect(),
        }
    }

    fn response(tokens: Vec<TokenLogprob>) -> CompletionResponse {
        CompletionResponse {
            text: tokens.iter().map(|t| t.token.as_str()).collect(),
            finish_reason: "stop".into(),
            usage: Usage::default(),
            logprobs: Some(tokens),
        }
    }

    #[test]
    fn logprobs_at_answer_position() {
        let r = response(vec![
            tok("I", -0.1, &[]),
            tok(" pick", -0.2, &[]),
            tok("\n", 0.0, &[]),
            tok("Answer", 0.0, &[]),
            tok(":", 0.0, &[]),
            tok(" A", -0.51, &[(" A", -0.51), (" B", -1.61)]),
        ]);
        let lp = option_logprobs(&r, &["A", "B", "C"]).unwrap();
        assert_eq!(lp["A"], -0.51);
        assert_eq!(lp["B"], -1.61);
        assert_eq!(lp["C"], f64::NEG_INFINITY);
    }

    #[test]
    fn bare_label_line() {
        let r = response(vec![tok("B", -0.2, &[("B", -0.2), ("A", -1.8)])]);
        let lp = option_logprobs(&r, &["A", "B"]).unwrap();
        assert_eq!((lp["A"], lp["B"]), (-1.8, -0.2));
    }

    #[test]
    fn no_logprobs_is_capability_error() {
        let r = CompletionResponse::text_only("p", "Answer: A");
        assert!(matches!(option_logprobs(&r, &["A"]), Err(GatewayError::Capability(_))));
    }
}
