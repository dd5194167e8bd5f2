//! `key = value` config files layered over typed defaults.
//!
//! Keys are the serialized field names of the target struct. Each value is
//! parsed according to the type the field already has, so a config file can
//! only change values, never the shape of the configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{usage, CliError, Result};

pub type Overrides = BTreeMap<String, String>;

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// a repeated key is an error.
pub fn parse(text: &str) -> Result<Overrides> {
    let mut out = Overrides::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key = value", i + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(usage(format!("config line {}: empty key", i + 1)));
        }
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return Err(usage(format!(
                "config line {}: duplicate key {key:?}",
                i + 1
            )));
        }
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Overrides> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text)
}

fn parse_like(current: &Value, key: &str, raw: &str) -> Result<Value> {
    let bad = |what: &str| usage(format!("{key} = {raw:?}: expected {what}"));
    Ok(match current {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad("true or false"))?),
        Value::Number(n) if n.is_u64() => Value::from(
            raw.parse::<u64>()
                .map_err(|_| bad("a non-negative integer"))?,
        ),
        Value::Number(n) if n.is_i64() => {
            Value::from(raw.parse::<i64>().map_err(|_| bad("an integer"))?)
        }
        Value::Number(_) => {
            let x: f64 = raw.parse().map_err(|_| bad("a number"))?;
            serde_json::Number::from_f64(x)
                .map(Value::Number)
                .ok_or_else(|| bad("a finite number"))?
        }
        Value::String(_) => Value::String(raw.to_string()),
        _ => serde_json::from_str(raw).map_err(|_| bad("a JSON value"))?,
    })
}

/// `base` with every override applied. Unknown keys are rejected with the
/// list of valid ones.
pub fn apply<T: Serialize + DeserializeOwned>(base: &T, overrides: &Overrides) -> Result<T> {
    let mut value = serde_json::to_value(base)?;
    let fields = value
        .as_object_mut()
        .expect("configuration types serialize as objects");
    for (key, raw) in overrides {
        let current = fields.get(key).ok_or_else(|| {
            let known: Vec<&str> = fields.keys().map(String::as_str).collect();
            usage(format!(
                "unknown config key {key:?}; known keys: {}",
                known.join(", ")
            ))
        })?;
        let parsed = parse_like(current, key, raw)?;
        fields.insert(key.clone(), parsed);
    }
    serde_json::from_value(value).map_err(|e| usage(format!("config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Demo {
        steps: usize,
        rate: f64,
        name: String,
        flag: bool,
    }

    fn demo() -> Demo {
        Demo {
            steps: 3,
            rate: 0.5,
            name: "a".into(),
            flag: false,
        }
    }

    #[test]
    fn parses_comments_and_whitespace() {
        let o = parse("# header\n steps = 10 \n\nrate=1e-3  # inline\n").unwrap();
        assert_eq!(o.len(), 2);
        assert_eq!(o["steps"], "10");
        assert_eq!(o["rate"], "1e-3");
    }

    #[test]
    fn duplicate_and_malformed_lines_are_rejected() {
        assert!(parse("a = 1\na = 2").is_err());
        assert!(parse("just words").is_err());
        assert!(parse("= 3").is_err());
    }

    #[test]
    fn overrides_keep_field_types() {
        let o = parse("steps = 7\nrate = 2\nname = gclstm\nflag = true").unwrap();
        let d = apply(&demo(), &o).unwrap();
        assert_eq!(
            d,
            Demo {
                steps: 7,
                rate: 2.0,
                name: "gclstm".into(),
                flag: true
            }
        );
    }

    #[test]
    fn bad_values_and_keys_are_usage_errors() {
        for text in [
            "steps = -1",
            "steps = 1.5",
            "flag = yes",
            "rate = x",
            "nope = 1",
        ] {
            let err = apply(&demo(), &parse(text).unwrap()).unwrap_err();
            assert!(matches!(err, CliError::Usage(_)), "{text}");
        }
    }
}
