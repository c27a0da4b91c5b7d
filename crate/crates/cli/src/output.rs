use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Reads the config file, or the defaults when none is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

/// As [`load_config`] for configs without defaults.
pub fn require_config<T: DeserializeOwned>(path: Option<&Path>) -> anyhow::Result<T> {
    let p = path.context("this command needs --config")?;
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
}

pub fn json(dir: &Path, name: &str, value: &impl Serialize) -> anyhow::Result<()> {
    dessl::report::write_json(&dir.join(name), value)?;
    Ok(())
}

pub fn text(dir: &Path, name: &str, body: &str) -> anyhow::Result<()> {
    dessl::report::write_atomic(&dir.join(name), body.as_bytes())?;
    Ok(())
}

/// Echo of the config after defaults and flags, enough to rerun.
pub fn effective(dir: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    json(dir, "effective_config.json", value)
}
