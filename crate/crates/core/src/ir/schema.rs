use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Semantic type of one output-schema entry.
///
/// Object lists carry flat string fields only; the field names are kept
/// sorted so that two spellings of the same schema compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemaType {
    String,
    Number,
    Boolean,
    StringList,
    ObjectList(Vec<String>),
}

impl SchemaType {
    pub fn object_list<I, S>(fields: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut fields: Vec<String> = fields.into_iter().map(Into::into).collect();
        fields.sort();
        fields.dedup();
        SchemaType::ObjectList(fields)
    }

    pub fn is_boolean(&self) -> bool {
        matches!(self, SchemaType::Boolean)
    }
}

impl fmt::Display for SchemaType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaType::String => f.write_str("string"),
            SchemaType::Number => f.write_str("number"),
            SchemaType::Boolean => f.write_str("boolean"),
            SchemaType::StringList => f.write_str("list[string]"),
            SchemaType::ObjectList(fields) => {
                f.write_str("list[{")?;
                for (i, field) in fields.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{field}: string")?;
                }
                f.write_str("}]")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unsupported schema type `{0}`")]
pub struct SchemaTypeError(pub String);

fn scalar(s: &str) -> Option<SchemaType> {
    match s {
        "str" | "string" | "text" => Some(SchemaType::String),
        "int" | "float" | "number" => Some(SchemaType::Number),
        "bool" | "boolean" => Some(SchemaType::Boolean),
        _ => None,
    }
}

impl FromStr for SchemaType {
    type Err = SchemaTypeError;

    fn from_str(raw: &str) -> Result<Self, Self::Err> {
        let s = raw.trim();
        if let Some(t) = scalar(s) {
            return Ok(t);
        }
        let err = || SchemaTypeError(raw.to_string());
        let inner = s
            .strip_prefix("list[")
            .and_then(|rest| rest.strip_suffix(']'))
            .ok_or_else(err)?
            .trim();
        if matches!(scalar(inner), Some(SchemaType::String)) {
            return Ok(SchemaType::StringList);
        }
        let body = inner
            .strip_prefix('{')
            .and_then(|rest| rest.strip_suffix('}'))
            .ok_or_else(err)?;
        let mut fields = Vec::new();
        for part in body.split(',') {
            let (name, ty) = part.split_once(':').ok_or_else(err)?;
            let name = name.trim();
            if name.is_empty() || !matches!(scalar(ty.trim()), Some(SchemaType::String)) {
                return Err(err());
            }
            fields.push(name.to_string());
        }
        if fields.is_empty() {
            return Err(err());
        }
        Ok(SchemaType::object_list(fields))
    }
}

impl Serialize for SchemaType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SchemaType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
