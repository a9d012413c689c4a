use serde_json::{Map, Value};

/// Checks tool-call arguments against the subset of JSON schema used by
/// tool definitions: `type`, `properties`, `required`, `items` and
/// `additionalProperties: false`.
pub fn validate_arguments(arguments: &Map<String, Value>, schema: &Value) -> Result<(), String> {
    check_value(&Value::Object(arguments.clone()), schema, "$")
}

fn type_matches(value: &Value, ty: &str) -> bool {
    match ty {
        "object" => value.is_object(),
        "array" => value.is_array(),
        "string" => value.is_string(),
        "boolean" => value.is_boolean(),
        "number" => value.is_number(),
        "integer" => value.is_i64() || value.is_u64(),
        "null" => value.is_null(),
        _ => true,
    }
}

fn check_value(value: &Value, schema: &Value, path: &str) -> Result<(), String> {
    let Some(schema) = schema.as_object() else {
        return Ok(());
    };
    if let Some(ty) = schema.get("type").and_then(Value::as_str) {
        if !type_matches(value, ty) {
            return Err(format!("{path}: expected {ty}, got {value}"));
        }
    }
    if let (Some(obj), Some(props)) = (value.as_object(), schema.get("properties").and_then(Value::as_object)) {
        if let Some(required) = schema.get("required").and_then(Value::as_array) {
            for key in required.iter().filter_map(Value::as_str) {
                if !obj.contains_key(key) {
                    return Err(format!("{path}: missing required property '{key}'"));
                }
            }
        }
        let closed = schema.get("additionalProperties") == Some(&Value::Bool(false));
        for (key, v) in obj {
            match props.get(key) {
                Some(sub) => check_value(v, sub, &format!("{path}.{key}"))?,
                None if closed => return Err(format!("{path}: unexpected property '{key}'")),
                None => {}
            }
        }
    }
    if let (Some(items), Some(item_schema)) = (value.as_array(), schema.get("items")) {
        for (i, item) in items.iter().enumerate() {
            check_value(item, item_schema, &format!("{path}[{i}]"))?;
        }
    }
    Ok(())
}
