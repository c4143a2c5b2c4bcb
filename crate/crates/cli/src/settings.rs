//! Flat `key = value` settings for each command: defaults, an optional
//! config file, then command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

/// Environment variable naming the directory searched for `<command>.conf`.
pub const CONFIG_DIR_VAR: &str = "VQAI_CONFIG_DIR";

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

pub struct Settings {
    schema: &'static [Key],
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    pub fn new(schema: &'static [Key]) -> Self {
        Settings {
            schema,
            values: schema.iter().map(|k| (k.name, k.default.to_string())).collect(),
        }
    }

    pub fn knows(&self, key: &str) -> bool {
        self.schema.iter().any(|k| k.name == key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.schema.iter().find(|k| k.name == key) {
            Some(k) => {
                self.values.insert(k.name, value.to_string());
                Ok(())
            }
            None => Err(unknown_key(key, self.schema.iter().map(|k| k.name))),
        }
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.str(key))
    }

    pub fn required(&self, key: &str) -> Result<&str, CliError> {
        match self.str(key) {
            "" => Err(CliError::usage(format!("`{key}` must be set"))),
            v => Ok(v),
        }
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<V, CliError>
    where
        V::Err: std::fmt::Display,
    {
        let v = self.str(key);
        v.parse()
            .map_err(|e: V::Err| CliError::usage(format!("bad value `{v}` for `{key}`: {e}")))
    }
}

pub fn unknown_key<'a>(key: &str, valid: impl Iterator<Item = &'a str>) -> CliError {
    let valid: Vec<&str> = valid.collect();
    CliError::usage(format!("unknown key `{key}`; valid keys: {}", valid.join(", ")))
}

/// `key = value` pairs of a config file; `#` starts a comment.
pub fn parse_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("{}:{}: expected `key = value`", path.display(), i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Overrides given as `key=value`, `--key value` or `--key=value`.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let norm = |k: &str| k.trim().replace('-', "_");
        if let Some(flag) = a.strip_prefix("--") {
            match flag.split_once('=') {
                Some((k, v)) => out.push((norm(k), v.to_string())),
                None => {
                    let v = it.next().ok_or_else(|| CliError::usage(format!("`--{flag}` needs a value")))?;
                    out.push((norm(flag), v.clone()));
                }
            }
        } else if let Some((k, v)) = a.split_once('=') {
            out.push((norm(k), v.trim().to_string()));
        } else {
            return Err(CliError::usage(format!("expected `key=value`, got `{a}`")));
        }
    }
    Ok(out)
}

/// File settings (explicit path, else `<command>.conf` in the config
/// directory) followed by the overrides.
pub fn gather(command: &str, config: Option<&Path>, overrides: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let file = match config {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os(CONFIG_DIR_VAR)
            .map(|d| PathBuf::from(d).join(format!("{command}.conf")))
            .filter(|p| p.is_file()),
    };
    let mut pairs = match file {
        Some(p) => parse_file(&p)?,
        None => Vec::new(),
    };
    pairs.extend(parse_overrides(overrides)?);
    Ok(pairs)
}

/// Help text listing every key with its default.
pub fn describe(groups: &[(&str, &[(&str, &str, &str)])]) -> String {
    let mut s = String::new();
    for (title, keys) in groups {
        let _ = writeln!(s, "{title}:");
        let w = keys.iter().map(|k| k.0.len()).max().unwrap_or(0);
        for (name, default, help) in *keys {
            let d = if default.is_empty() { String::new() } else { format!(" [default: {default}]") };
            let _ = writeln!(s, "  {name:<w$}  {help}{d}");
        }
        s.push('\n');
    }
    let _ = write!(
        s,
        "Settings come from --config FILE (or <command>.conf in ${CONFIG_DIR_VAR}), then from\n\
         KEY=VALUE or --KEY VALUE arguments."
    );
    s
}

pub fn schema_rows(schema: &[Key]) -> Vec<(&str, &str, &str)> {
    schema.iter().map(|k| (k.name, k.default, k.help)).collect()
}
