//! Settings resolution: defaults, then an optional TOML/JSON config file,
//! then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// TOML or JSON file with settings; flags take precedence.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = one per core). Never affects outputs.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Treat a flag that contradicts the config file as an error.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub strict_config: bool,
}

pub struct Resolved<T> {
    pub settings: T,
    /// Human-readable notes on flags that replaced config-file values.
    pub overrides: Vec<String>,
}

fn read_file(path: &Path, subcommand: &str) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        _ => {
            let t: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            serde_json::to_value(t)?
        }
    };
    let Value::Object(mut map) = value else {
        bail!("config {} must be a table", path.display());
    };
    // A table named after the subcommand refines the top-level scalars;
    // other subcommands' tables are ignored.
    let section = map.remove(subcommand);
    map.retain(|_, v| !v.is_object());
    if let Some(section) = section {
        let Value::Object(section) = section else {
            bail!("config section [{subcommand}] must be a table");
        };
        map.extend(section);
    }
    Ok(map)
}

fn flag_map<F: Serialize>(flags: &F) -> Result<Map<String, Value>> {
    let Value::Object(mut map) = serde_json::to_value(flags)? else {
        bail!("flags must serialize to a map");
    };
    map.retain(|_, v| !v.is_null() && v.as_array().is_none_or(|a| !a.is_empty()));
    Ok(map)
}

fn same(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

pub fn resolve<T, F>(subcommand: &str, common: &CommonArgs, flags: &F) -> Result<Resolved<T>>
where
    T: Serialize + DeserializeOwned + Default,
    F: Serialize,
{
    let Value::Object(mut merged) = serde_json::to_value(T::default())? else {
        bail!("settings must serialize to a map");
    };
    let file = match &common.config {
        Some(p) => read_file(p, subcommand)?,
        None => Map::new(),
    };
    let mut flags_map = flag_map(common)?;
    flags_map.extend(flag_map(flags)?);
    let mut overrides = Vec::new();
    for (k, v) in &file {
        merged.insert(k.clone(), v.clone());
    }
    for (k, v) in flags_map {
        if let Some(fv) = file.get(&k) {
            if !same(fv, &v) {
                let note = format!("{k}: config file has {fv}, flag sets {v}");
                if common.strict_config {
                    return Err(input_error(format!("config conflict on {note}")));
                }
                overrides.push(note);
            }
        }
        merged.insert(k, v);
    }
    let settings: T = serde_json::from_value(Value::Object(merged)).context("invalid settings")?;
    Ok(Resolved { settings, overrides })
}

/// Settings as echoed in manifests: everything except the thread count.
pub fn echo<T: Serialize>(settings: &T) -> Result<Value> {
    let mut v = serde_json::to_value(settings)?;
    if let Value::Object(m) = &mut v {
        m.remove("threads");
    }
    Ok(v)
}

pub fn input_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(polyglot_probe::Error::InvalidInput(msg.into()))
}

pub fn require<'a>(path: &'a Option<PathBuf>, name: &str) -> Result<&'a PathBuf> {
    path.as_ref()
        .ok_or_else(|| input_error(format!("missing required input {name}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct S {
        seed: u64,
        out: PathBuf,
        threads: usize,
        ratio: f64,
        name: String,
    }

    impl Default for S {
        fn default() -> Self {
            S {
                seed: 0,
                out: "out".into(),
                threads: 0,
                ratio: 0.5,
                name: "a".into(),
            }
        }
    }

    #[derive(Serialize)]
    struct F {
        #[serde(skip_serializing_if = "Option::is_none")]
        ratio: Option<f64>,
    }

    fn common(config: Option<PathBuf>, seed: Option<u64>) -> CommonArgs {
        CommonArgs {
            config,
            seed,
            out: None,
            threads: None,
            strict_config: false,
        }
    }

    #[test]
    fn precedence_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(
            &p,
            "seed = 3\nname = \"b\"\n[sub]\nratio = 0.25\n[other]\nratio = 0.9\n",
        )
        .unwrap();
        let r: Resolved<S> = resolve("sub", &common(Some(p.clone()), Some(9)), &F { ratio: None }).unwrap();
        assert_eq!(r.settings.seed, 9);
        assert_eq!(r.settings.ratio, 0.25);
        assert_eq!(r.settings.name, "b");
        assert_eq!(r.overrides.len(), 1);
        assert!(r.overrides[0].contains("seed"));

        let r: Resolved<S> = resolve("sub", &common(Some(p), None), &F { ratio: Some(0.25) }).unwrap();
        assert!(r.overrides.is_empty());
    }

    #[test]
    fn strict_mode_reports_both_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 3\n").unwrap();
        let mut c = common(Some(p), Some(4));
        c.strict_config = true;
        let err = resolve::<S, _>("sub", &c, &F { ratio: None })
            .err()
            .unwrap()
            .to_string();
        assert!(err.contains('3') && err.contains('4'), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"bogus": 1}"#).unwrap();
        assert!(resolve::<S, _>("sub", &common(Some(p), None), &F { ratio: None }).is_err());
    }

    #[test]
    fn echo_drops_threads() {
        let v = echo(&S::default()).unwrap();
        assert!(v.get("threads").is_none());
        assert!(v.get("seed").is_some());
    }
}
