//! Tracker configuration as a flat map of dotted keys.
//!
//! Values are layered defaults < config file < command-line flags. Every
//! key must name an existing field. Angles are radians; a string value
//! `"deg:<v>"` is accepted for angle fields and converted.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{Map, Value};
use shapetrack::tracker::TrackerConfig;
use shapetrack::{Error, Result};

/// Fields holding angles, the only ones that accept a `deg:` value.
const ANGLE_KEYS: &[&str] = &["search.theta_range", "search.step_theta"];

pub type Flat = BTreeMap<String, Value>;

/// The configuration as dotted keys mapped to leaf values.
pub fn flatten(config: &TrackerConfig) -> Flat {
    let mut out = Flat::new();
    let value = serde_json::to_value(config).expect("configuration serializes");
    flatten_into(&value, String::new(), &mut out);
    out
}

fn flatten_into(v: &Value, prefix: String, out: &mut Flat) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(child, key, out);
            }
        }
        leaf => {
            out.insert(prefix, leaf.clone());
        }
    }
}

fn unflatten(flat: &Flat) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut parts = key.split('.').peekable();
        let mut node = &mut root;
        while let Some(part) = parts.next() {
            if parts.peek().is_none() {
                node.insert(part.to_string(), v.clone());
            } else {
                node = node
                    .entry(part.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("keys never nest under leaves");
            }
        }
    }
    Value::Object(root)
}

fn resolve_value(key: &str, v: Value) -> Result<Value> {
    let Some(text) = v.as_str().and_then(|s| s.strip_prefix("deg:")) else {
        return Ok(v);
    };
    if !ANGLE_KEYS.contains(&key) {
        return Err(Error::Config(format!("{key} is not an angle, \"deg:\" is not allowed")));
    }
    let deg: f64 = text
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: bad degree value {text:?}")))?;
    Ok(Value::from(deg.to_radians()))
}

/// Layered configuration under construction.
#[derive(Clone, Debug)]
pub struct Overlay {
    flat: Flat,
}

impl Default for Overlay {
    fn default() -> Self {
        Self {
            flat: flatten(&TrackerConfig::default()),
        }
    }
}

impl Overlay {
    /// Sets one key, checking that it exists and that the result still
    /// deserializes.
    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        if !self.flat.contains_key(key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        let value = resolve_value(key, value)?;
        let old = self.flat.insert(key.to_string(), value);
        if let Err(e) = self.resolve() {
            self.flat.insert(key.to_string(), old.expect("key exists"));
            return Err(Error::Config(format!("{key}: {e}")));
        }
        Ok(())
    }

    /// Applies a JSON object of dotted keys.
    pub fn apply_json(&mut self, text: &str) -> Result<()> {
        let Value::Object(map) = serde_json::from_str::<Value>(text)? else {
            return Err(Error::Config("configuration file must hold a JSON object".into()));
        };
        for (k, v) in map {
            self.set(&k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_json(&text)
    }

    /// Applies `key=value`; the value is read as JSON, or as a string when
    /// it is not valid JSON.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        let v = v.trim();
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        self.set(k.trim(), value)
    }

    pub fn resolve(&self) -> Result<TrackerConfig> {
        let config: TrackerConfig = serde_json::from_value(unflatten(&self.flat))?;
        config.validate()?;
        Ok(config)
    }

    /// Pretty JSON of the resolved configuration in dotted form.
    pub fn dump(&self) -> Result<String> {
        let flat = flatten(&self.resolve()?);
        let map: Map<String, Value> = flat.into_iter().collect();
        Ok(serde_json::to_string_pretty(&Value::Object(map))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let o = Overlay::default();
        assert_eq!(o.resolve().unwrap(), TrackerConfig::default());
        let mut again = Overlay::default();
        again.apply_json(&o.dump().unwrap()).unwrap();
        assert_eq!(again.resolve().unwrap(), TrackerConfig::default());
    }

    #[test]
    fn keys_are_dotted_leaves() {
        let flat = flatten(&TrackerConfig::default());
        assert!(flat.contains_key("s_min"));
        assert!(flat.contains_key("update.lambda"));
        assert!(flat.contains_key("model.thresholds.percentile"));
        assert!(!flat.contains_key("update"));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut o = Overlay::default();
        assert!(o.set("update.lamda", Value::from(0.2)).is_err());
        assert!(o.apply_json(r#"{"search": {"theta_range": 0.2}}"#).is_err());
    }

    #[test]
    fn wrong_type_or_range_is_rejected_and_undone() {
        let mut o = Overlay::default();
        assert!(o.set("s_min", Value::from("high")).is_err());
        assert!(o.set("s_min", Value::from(1.5)).is_err());
        assert_eq!(o.resolve().unwrap().s_min, TrackerConfig::default().s_min);
    }

    #[test]
    fn degrees_only_for_angles() {
        let mut o = Overlay::default();
        o.set("search.theta_range", Value::from("deg:45")).unwrap();
        let c = o.resolve().unwrap();
        assert!((c.search.theta_range - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert!(o.set("s_min", Value::from("deg:30")).is_err());
    }

    #[test]
    fn optional_fields_accept_values() {
        let mut o = Overlay::default();
        o.apply_assignment("search.step_theta=deg:1").unwrap();
        o.apply_assignment("subsample_k=128").unwrap();
        o.apply_assignment("refine.interpolation=nearest").unwrap();
        let c = o.resolve().unwrap();
        assert!((c.search.step_theta.unwrap() - 1f64.to_radians()).abs() < 1e-15);
        assert_eq!(c.subsample_k, Some(128));
    }

    #[test]
    fn later_layers_win() {
        let mut o = Overlay::default();
        o.apply_json(r#"{"s_min": 0.5, "update.lambda": 0.3}"#).unwrap();
        o.set("s_min", Value::from(0.7)).unwrap();
        let c = o.resolve().unwrap();
        assert_eq!(c.s_min, 0.7);
        assert_eq!(c.update.lambda, 0.3);
    }
}
