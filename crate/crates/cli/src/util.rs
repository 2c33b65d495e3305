use std::env::{self, VarError};
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::Value;

pub const SEED_ENV: &str = "SOMOFORMER_SEED";

/// Flag, then config file, then `SOMOFORMER_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(VarError::NotPresent) => Ok(0),
        Err(e) => bail!("{SEED_ENV}: {e}"),
    }
}

pub fn echo_config(value: &Value) {
    eprintln!(
        "resolved config:\n{}",
        serde_json::to_string_pretty(value).expect("JSON values always serialize")
    );
}

/// Writes through a sibling temporary file so `path` is either absent or complete.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", path.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
