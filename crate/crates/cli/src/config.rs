//! `key = value` settings files shared by every subcommand.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use serde_json::{Map, Number, Value};

use crate::Usage;

/// Every key a settings file may contain.
pub const KNOWN_KEYS: &[&str] = &[
    "k",
    "seed",
    "max_iters",
    "rel_tol",
    "similarity",
    "binary",
    "candidate_mode",
    "prune_p",
    "prune_side",
    "c_nearest",
    "candidate_pool",
    "top_k",
    "locality_ordering",
    "symmetric_quantize",
    "float_sidecar",
    "float_rerank",
    "train_sample",
    "hnsw_m",
    "ef_construction",
    "ef_search",
    "warmup",
    "tag",
];

#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, (usize, String)>,
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// values may be wrapped in double quotes.
pub fn parse_lines(text: &str) -> Result<BTreeMap<String, (usize, String)>, Usage> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Usage(format!("line {}: expected key = value", i + 1)))?;
        let k = k.trim().replace('-', "_");
        let v = v.trim();
        let v = v
            .strip_prefix('"')
            .and_then(|s| s.strip_suffix('"'))
            .unwrap_or(v);
        if k.is_empty() {
            return Err(Usage(format!("line {}: empty key", i + 1)));
        }
        if out.insert(k.clone(), (i + 1, v.to_string())).is_some() {
            return Err(Usage(format!("line {}: {k} set twice", i + 1)));
        }
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String, Usage> {
    std::fs::read_to_string(path).map_err(|e| Usage(format!("cannot read {}: {e}", path.display())))
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, Usage> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let values = parse_lines(&read(path)?)?;
        if let Some(k) = values.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(Usage(format!(
                "{}: unknown key {k:?}",
                path.display()
            )));
        }
        Ok(Self { values })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, Usage>
    where
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|(line, v)| {
                v.parse()
                    .map_err(|e| Usage(format!("config line {line}: invalid {key} {v:?}: {e}")))
            })
            .transpose()
    }

    /// Flag value if given, else the config value.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Usage>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    /// Like [`Settings::pick`] for on/off switches, where an absent flag
    /// defers to the config.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool, Usage> {
        Ok(flag || self.get::<bool>(key)?.unwrap_or(false))
    }
}

/// Loads a synthetic-corpus spec written as `key = value` lines. Values
/// are typed by shape: integers, floats, `true`/`false`, else strings.
pub fn load_spec(path: &Path) -> Result<hpc_core::evalbench::SyntheticSpec, Usage> {
    let values = parse_lines(&read(path)?)?;
    let mut map = Map::new();
    for (k, (_, v)) in values {
        let value = if let Ok(n) = v.parse::<u64>() {
            Value::Number(n.into())
        } else if let Some(n) = v.parse::<f64>().ok().and_then(Number::from_f64) {
            Value::Number(n)
        } else if let Ok(b) = v.parse::<bool>() {
            Value::Bool(b)
        } else {
            Value::String(v)
        };
        map.insert(k, value);
    }
    serde_json::from_value(Value::Object(map))
        .map_err(|e| Usage(format!("{}: {e}", path.display())))
}
