//! Built-in value-level transforms.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransformError {
    #[error("unknown transform {0}")]
    Unknown(String),
    #[error("transform {name} takes {expected} arguments, got {got}")]
    Arity {
        name: String,
        expected: Arity,
        got: usize,
    },
    #[error("transform {name}: {detail}")]
    BadArgument { name: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exactly(usize),
    AtLeast(usize),
}

impl Arity {
    pub fn accepts(self, n: usize) -> bool {
        match self {
            Arity::Exactly(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Exactly(k) => write!(f, "{k}"),
            Arity::AtLeast(k) => write!(f, "{k} or more"),
        }
    }
}

pub fn transform_arity(name: &str) -> Option<Arity> {
    match name {
        "identity" | "lookup" => Some(Arity::Exactly(1)),
        "concat" => Some(Arity::AtLeast(1)),
        "date_concat" => Some(Arity::Exactly(3)),
        _ => None,
    }
}

/// Configuration for the built-in transforms: the `concat` separator and the
/// translation table consulted by `lookup`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformRegistry {
    #[serde(default)]
    pub concat_separator: String,
    #[serde(default)]
    pub lookup: BTreeMap<String, String>,
}

impl TransformRegistry {
    pub fn with_lookup(table: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            lookup: table.into_iter().collect(),
            ..Self::default()
        }
    }

    /// Applies `name` to `args`. NULL inputs propagate to NULL; a lookup miss
    /// yields NULL.
    pub fn apply(&self, name: &str, args: &[Value]) -> Result<Value, TransformError> {
        let arity = transform_arity(name).ok_or_else(|| TransformError::Unknown(name.into()))?;
        if !arity.accepts(args.len()) {
            return Err(TransformError::Arity {
                name: name.into(),
                expected: arity,
                got: args.len(),
            });
        }
        if args.iter().any(Value::is_null) {
            return Ok(Value::Null);
        }
        match name {
            "identity" => Ok(args[0].clone()),
            "concat" => Ok(Value::Str(
                args.iter()
                    .map(|a| a.to_string())
                    .collect::<Vec<_>>()
                    .join(&self.concat_separator),
            )),
            "date_concat" => date_concat(&args[0], &args[1], &args[2]),
            "lookup" => {
                let key = args[0].to_string();
                match self.lookup.get(&key) {
                    Some(v) => Ok(Value::Str(v.clone())),
                    None => {
                        tracing::warn!(key = %key, "lookup transform miss");
                        Ok(Value::Null)
                    }
                }
            }
            _ => unreachable!("arity table and dispatch disagree on {name}"),
        }
    }
}

/// Applies a transform with the default registry.
pub fn apply_transform(name: &str, args: &[Value]) -> Result<Value, TransformError> {
    TransformRegistry::default().apply(name, args)
}

fn date_concat(month: &Value, day: &Value, year: &Value) -> Result<Value, TransformError> {
    let part = |v: &Value, what: &str| -> Result<i64, TransformError> {
        let f = v.as_f64().ok_or_else(|| TransformError::BadArgument {
            name: "date_concat".into(),
            detail: format!("{what} {v} is not numeric"),
        })?;
        if f.fract() != 0.0 {
            return Err(TransformError::BadArgument {
                name: "date_concat".into(),
                detail: format!("{what} {v} is not an integer"),
            });
        }
        Ok(f as i64)
    };
    let (m, d, y) = (part(month, "month")?, part(day, "day")?, part(year, "year")?);
    if !(1..=12).contains(&m) || !(1..=31).contains(&d) || !(0..=9999).contains(&y) {
        return Err(TransformError::BadArgument {
            name: "date_concat".into(),
            detail: format!("({m}, {d}, {y}) is out of range"),
        });
    }
    Ok(Value::Str(format!("{y:04}-{m:02}-{d:02}")))
}
