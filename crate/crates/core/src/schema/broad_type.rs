use std::fmt;

use serde::{Deserialize, Serialize};

/// Coarse type families used for type-based prefiltering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BroadType {
    Numeric,
    Text,
    DateTime,
    Boolean,
    Other,
}

impl BroadType {
    pub fn name(self) -> &'static str {
        match self {
            BroadType::Numeric => "Numeric",
            BroadType::Text => "Text",
            BroadType::DateTime => "DateTime",
            BroadType::Boolean => "Boolean",
            BroadType::Other => "Other",
        }
    }
}

impl fmt::Display for BroadType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const NUMERIC: &[&str] = &[
    "int", "integer", "int2", "int4", "int8", "bigint", "smallint", "tinyint", "mediumint",
    "decimal", "dec", "numeric", "number", "float", "float4", "float8", "real", "double",
    "serial", "bigserial", "smallserial", "money",
];
const TEXT: &[&str] = &[
    "char", "character", "varchar", "varchar2", "nchar", "nvarchar", "nvarchar2", "text",
    "tinytext", "mediumtext", "longtext", "string", "clob", "nclob",
];
const DATETIME: &[&str] = &[
    "date", "time", "timestamp", "timestamptz", "timetz", "datetime", "datetime2", "smalldatetime",
];
const BOOLEAN: &[&str] = &["bool", "boolean", "bit"];

/// Case-insensitive classification of a declared column type.
///
/// Only the leading type word counts: `VARCHAR(255)`, `double precision` and
/// `timestamp with time zone` classify by `varchar`, `double` and `timestamp`.
pub fn classify_broad_type(declared_type: &str) -> BroadType {
    let lower = declared_type.trim().to_ascii_lowercase();
    let word = lower
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .find(|w| !w.is_empty())
        .unwrap_or("");
    let word = word.strip_prefix("unsigned_").unwrap_or(word);
    if NUMERIC.contains(&word) {
        BroadType::Numeric
    } else if TEXT.contains(&word) {
        BroadType::Text
    } else if DATETIME.contains(&word) {
        BroadType::DateTime
    } else if BOOLEAN.contains(&word) {
        BroadType::Boolean
    } else {
        BroadType::Other
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_table() {
        assert_eq!(classify_broad_type("int"), BroadType::Numeric);
        assert_eq!(classify_broad_type("VARCHAR(255)"), BroadType::Text);
        assert_eq!(classify_broad_type("geometry"), BroadType::Other);
        assert_eq!(classify_broad_type("double precision"), BroadType::Numeric);
        assert_eq!(classify_broad_type("decimal(10,2)"), BroadType::Numeric);
        assert_eq!(classify_broad_type("timestamp with time zone"), BroadType::DateTime);
        assert_eq!(classify_broad_type("BIT"), BroadType::Boolean);
        assert_eq!(classify_broad_type(""), BroadType::Other);
    }

    #[test]
    fn idempotent_over_own_names() {
        for t in [
            BroadType::Numeric,
            BroadType::Text,
            BroadType::DateTime,
            BroadType::Boolean,
            BroadType::Other,
        ] {
            assert_eq!(classify_broad_type(t.name()), t);
        }
    }
}
