//! JSON configuration files, spliced into the argument list so flags win.

use std::ffi::OsString;
use std::path::Path;

use serde_json::Value;

use crate::CliError;

/// Value of `--config` in the raw arguments, if present.
fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(rest.into());
        }
    }
    None
}

fn scalar(v: &Value) -> Result<String, CliError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(CliError::Config(format!("unsupported config value {other}"))),
    }
}

/// Flags equivalent to a JSON object. Keys are flag names; underscores become dashes.
pub fn flags_from_json(text: &str) -> Result<Vec<OsString>, CliError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))?;
    let Value::Object(map) = value else {
        return Err(CliError::Config("config file must hold a JSON object".into()));
    };
    let mut out = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            return Err(CliError::Config("config files cannot include other config files".into()));
        }
        match &v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag.into()),
            Value::Array(items) => {
                let joined = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?.join(",");
                out.push(flag.into());
                out.push(joined.into());
            }
            _ => {
                out.push(flag.into());
                out.push(scalar(&v)?.into());
            }
        }
    }
    Ok(out)
}

/// Inserts the flags of the `--config` file right after the subcommand, so
/// that later command-line flags override them.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let flags = flags_from_json(&text)?;
    let mut sub = None;
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_string_lossy();
        if s == "--config" {
            i += 2;
            continue;
        }
        if !s.starts_with('-') {
            sub = Some(i);
            break;
        }
        i += 1;
    }
    let sub = sub.ok_or_else(|| CliError::Config("missing subcommand".into()))?;
    let mut out = args[..=sub].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[sub + 1..]);
    Ok(out)
}
