//! Optional TOML config. Each table is named after a subcommand and holds
//! flag names as keys; values are turned into extra arguments for flags the
//! command line does not already set.
//!
//! ```toml
//! [synth]
//! backend = "lm"
//! chunk-tokens = 10
//! oracle = true
//! ```

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use toml::Value;

/// Finds `--config <path>` or `--config=<path>` in raw arguments.
pub fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

fn subcommand(args: &[OsString], known: &[&str]) -> Option<String> {
    args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).find(|a| known.contains(&a.as_str()))
}

fn flag_given(args: &[OsString], flag: &str) -> bool {
    args.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&format!("{flag}="))
    })
}

fn render(v: &Value) -> Result<Option<String>> {
    Ok(match v {
        Value::String(s) => Some(s.clone()),
        Value::Integer(i) => Some(i.to_string()),
        Value::Float(f) => Some(f.to_string()),
        Value::Boolean(_) => None,
        Value::Array(items) => {
            let parts: Result<Vec<_>> = items.iter().map(|i| render(i).map(|s| s.unwrap_or_default())).collect();
            Some(parts?.join(","))
        }
        other => bail!("unsupported config value {other}"),
    })
}

/// Appends config values for the chosen subcommand that the user did not pass.
pub fn merge(args: Vec<OsString>, text: &str, known: &[&str]) -> Result<Vec<OsString>> {
    let table: toml::Table = text.parse().context("parsing config file")?;
    let Some(cmd) = subcommand(&args, known) else { return Ok(args) };
    let Some(section) = table.get(&cmd) else { return Ok(args) };
    let Some(section) = section.as_table() else { bail!("config entry [{cmd}] must be a table") };
    let mut out = args.clone();
    for (key, value) in section {
        let flag = format!("--{key}");
        if flag_given(&args, &flag) {
            continue;
        }
        match (value, render(value)?) {
            (Value::Boolean(true), _) => out.push(flag.into()),
            (Value::Boolean(false), _) => {}
            (_, Some(v)) => {
                out.push(flag.into());
                out.push(v.into());
            }
            (_, None) => {}
        }
    }
    Ok(out)
}

pub fn load_and_merge(args: Vec<OsString>, known: &[&str]) -> Result<Vec<OsString>> {
    match config_path(&args) {
        None => Ok(args),
        Some(p) => {
            let path = Path::new(&p);
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            merge(args, &text, known)
        }
    }
}
