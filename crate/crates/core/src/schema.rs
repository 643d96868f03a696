//! Structural validation of emitted JSON against the schema documents shipped
//! in `schemas/`. Covers the subset of JSON Schema those documents use:
//! `type`, `properties`, `required`, `items`, `enum`, `additionalProperties`.

use serde_json::Value;

/// Validate `value` against `schema`; returns every violation with its path.
pub fn validate(schema: &Value, value: &Value) -> Result<(), Vec<String>> {
    let mut errors = Vec::new();
    check(schema, value, "$", &mut errors);
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

fn type_name(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) => {
            if n.is_i64() || n.is_u64() {
                "integer"
            } else {
                "number"
            }
        }
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn type_matches(expected: &str, value: &Value) -> bool {
    match expected {
        // every integer is also a number
        "number" => matches!(value, Value::Number(_)),
        "integer" => match value {
            Value::Number(n) => n.is_i64() || n.is_u64(),
            _ => false,
        },
        other => type_name(value) == other,
    }
}

fn check(schema: &Value, value: &Value, path: &str, errors: &mut Vec<String>) {
    if let Some(expected) = schema.get("type") {
        let ok = match expected {
            Value::String(t) => type_matches(t, value),
            Value::Array(ts) => ts
                .iter()
                .filter_map(|t| t.as_str())
                .any(|t| type_matches(t, value)),
            _ => true,
        };
        if !ok {
            errors.push(format!(
                "{path}: expected type {expected}, got {}",
                type_name(value)
            ));
            return;
        }
    }
    if let Some(allowed) = schema.get("enum").and_then(|e| e.as_array()) {
        if !allowed.contains(value) {
            errors.push(format!("{path}: value {value} not in enum"));
        }
    }
    if let Value::Object(obj) = value {
        if let Some(required) = schema.get("required").and_then(|r| r.as_array()) {
            for key in required.iter().filter_map(|k| k.as_str()) {
                if !obj.contains_key(key) {
                    errors.push(format!("{path}: missing required field '{key}'"));
                }
            }
        }
        let props = schema.get("properties").and_then(|p| p.as_object());
        let additional = schema
            .get("additionalProperties")
            .and_then(|a| a.as_bool())
            .unwrap_or(true);
        for (key, sub_value) in obj {
            match props.and_then(|p| p.get(key)) {
                Some(sub_schema) => check(sub_schema, sub_value, &format!("{path}.{key}"), errors),
                None if !additional => {
                    errors.push(format!("{path}: unexpected field '{key}'"));
                }
                None => {}
            }
        }
    }
    if let (Value::Array(items), Some(item_schema)) = (value, schema.get("items")) {
        for (i, item) in items.iter().enumerate() {
            check(item_schema, item, &format!("{path}[{i}]"), errors);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn accepts_conforming_objects() {
        let schema = json!({
            "type": "object",
            "required": ["name", "value"],
            "properties": {
                "name": {"type": "string"},
                "value": {"type": "number"},
                "tags": {"type": "array", "items": {"type": "string"}}
            }
        });
        let ok = json!({"name": "x", "value": 1.5, "tags": ["a"]});
        assert!(validate(&schema, &ok).is_ok());
    }

    #[test]
    fn reports_missing_and_mistyped_fields_with_paths() {
        let schema = json!({
            "type": "object",
            "required": ["name"],
            "properties": {"name": {"type": "string"}, "n": {"type": "integer"}}
        });
        let bad = json!({"n": 1.5});
        let errs = validate(&schema, &bad).unwrap_err();
        assert!(errs
            .iter()
            .any(|e| e.contains("missing required field 'name'")));
        assert!(errs.iter().any(|e| e.contains("$.n")));
    }

    #[test]
    fn integers_satisfy_number() {
        let schema = json!({"type": "number"});
        assert!(validate(&schema, &json!(3)).is_ok());
        let schema = json!({"type": "integer"});
        assert!(validate(&schema, &json!(3.5)).is_err());
    }

    #[test]
    fn enums_and_closed_objects() {
        let schema = json!({
            "type": "object",
            "additionalProperties": false,
            "properties": {"kind": {"enum": ["raw", "isotonic"]}}
        });
        assert!(validate(&schema, &json!({"kind": "raw"})).is_ok());
        assert!(validate(&schema, &json!({"kind": "other"})).is_err());
        assert!(validate(&schema, &json!({"extra": 1})).is_err());
    }
}
