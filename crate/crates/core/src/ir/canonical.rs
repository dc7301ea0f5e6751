use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::PipelineSpec;

/// Deterministic byte form of a pipeline with operator ids and the
/// pipeline name left out. Object keys come out sorted because
/// `serde_json::Map` is a `BTreeMap` without the `preserve_order` feature.
pub fn canonical_serialize(p: &PipelineSpec) -> Vec<u8> {
    let operators: Vec<Value> = p
        .operators
        .iter()
        .map(|op| {
            let mut v = serde_json::to_value(op).expect("operator serializes to JSON");
            if let Value::Object(map) = &mut v {
                map.remove("id");
            }
            v
        })
        .collect();
    let doc = json!({
        "input_keys": p.input_keys,
        "operators": operators,
    });
    serde_json::to_vec(&doc).expect("canonical form serializes")
}

/// Hex SHA-256 of [`canonical_serialize`]; the evaluation cache key.
pub fn pipeline_key(p: &PipelineSpec) -> String {
    hex::encode(Sha256::digest(canonical_serialize(p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{OperatorConfig, OperatorType, OutputSchema, SchemaType};

    fn map(id: &str, prompt: &str, keys: &[&str]) -> OperatorConfig {
        let schema: OutputSchema = keys
            .iter()
            .map(|k| (k.to_string(), SchemaType::String))
            .collect();
        OperatorConfig::llm(id, OperatorType::Map, prompt, schema, "m")
    }

    #[test]
    fn ids_do_not_matter() {
        let a = PipelineSpec::new("a", ["x"], vec![map("one", "{{ input.x }}", &["y"])]);
        let b = PipelineSpec::new("b", ["x"], vec![map("two", "{{ input.x }}", &["y"])]);
        assert_eq!(canonical_serialize(&a), canonical_serialize(&b));
        assert_eq!(pipeline_key(&a), pipeline_key(&b));
    }

    #[test]
    fn one_character_changes_the_bytes() {
        let a = PipelineSpec::new("a", ["x"], vec![map("o", "{{ input.x }}", &["y"])]);
        let b = PipelineSpec::new("a", ["x"], vec![map("o", "{{ input.x }}!", &["y"])]);
        assert_ne!(canonical_serialize(&a), canonical_serialize(&b));
    }

    #[test]
    fn schema_order_is_irrelevant() {
        let a = PipelineSpec::from_yaml(
            "name: a\ninput_keys: [x]\noperators:\n  - id: o\n    type: map\n    prompt_template: '{{ input.x }}'\n    model: m\n    output_schema: {b: str, a: int}\n",
        )
        .unwrap();
        let b = PipelineSpec::from_yaml(
            "name: a\ninput_keys: [x]\noperators:\n  - id: o\n    type: map\n    prompt_template: '{{ input.x }}'\n    model: m\n    output_schema: {a: int, b: str}\n",
        )
        .unwrap();
        assert_eq!(canonical_serialize(&a), canonical_serialize(&b));
    }
}
