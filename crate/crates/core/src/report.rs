//! Line-oriented `key=value` rendering of JSON reports.

use serde_json::Value;

/// One line per leaf. Nested objects join keys with `.`, arrays of scalars become
/// comma-separated values and other arrays are indexed (`curves.0.label`).
pub fn key_value_lines(value: &Value) -> String {
    let mut out = String::new();
    flatten("", value, &mut out);
    out
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some(String::new()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                flatten(&join(prefix, k), child, out);
            }
        }
        Value::Array(items) => match items.iter().map(scalar).collect::<Option<Vec<_>>>() {
            Some(parts) => {
                out.push_str(&format!("{prefix}={}\n", parts.join(",")));
            }
            None => {
                for (i, child) in items.iter().enumerate() {
                    flatten(&join(prefix, &i.to_string()), child, out);
                }
            }
        },
        other => out.push_str(&format!("{prefix}={}\n", scalar(other).unwrap_or_default())),
    }
}
