//! Layered run configuration: per-command defaults, then an optional TOML
//! file, then `--set key=value` overrides. Unknown keys are rejected.

use std::path::PathBuf;

use clap::Args;
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::error::{CliError, Result};

#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// TOML file with settings for this command.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one setting; dotted keys reach nested tables. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Print the resolved config as TOML and exit.
    #[arg(long)]
    pub dump_config: bool,
}

pub trait RunConfig: Serialize + DeserializeOwned + Default {
    /// Keys that have no default and are omitted from the defaults listing.
    const OPTIONAL_KEYS: &'static [&'static str] = &[];

    /// Defaults, which may depend on what the user has set so far.
    fn defaults_for(_user: &Table) -> Result<Self> {
        Ok(Self::default())
    }
}

fn parse_value(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_owned())),
        Err(_) => Value::String(raw.to_owned()),
    }
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut cur = table;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(CliError::Config(format!("bad key {key:?}")));
        }
        if parts.peek().is_none() {
            cur.insert(part.to_owned(), value);
            return Ok(());
        }
        let next = cur.entry(part.to_owned()).or_insert_with(|| Value::Table(Table::new()));
        cur = next
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{part:?} in {key:?} is not a table")))?;
    }
    Ok(())
}

fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn user_layer(args: &ConfigArgs) -> Result<Table> {
    let mut table = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(crate::error::input(path)?)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => Table::new(),
    };
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {o:?} is not KEY=VALUE")))?;
        set_path(&mut table, k.trim(), parse_value(v.trim()))?;
    }
    Ok(table)
}

fn to_table<C: Serialize>(c: &C) -> Result<Table> {
    Table::try_from(c).map_err(|e| CliError::Config(e.to_string()))
}

pub fn resolve<C: RunConfig>(args: &ConfigArgs) -> Result<C> {
    let user = user_layer(args)?;
    let mut table = to_table(&C::defaults_for(&user)?)?;
    merge(&mut table, user);
    C::deserialize(Value::Table(table)).map_err(|e| CliError::Config(e.to_string()))
}

pub fn render<C: Serialize>(c: &C) -> Result<String> {
    toml::to_string(c).map_err(|e| CliError::Config(e.to_string()))
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<String>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            v => out.push(format!("  {key} = {v}")),
        }
    }
}

/// The `--help` footer: every key with its default.
pub fn keys_help<C: RunConfig>() -> String {
    let mut lines = vec!["Config keys (set in --config FILE or with --set KEY=VALUE):".to_owned()];
    if let Ok(t) = to_table(&C::default()) {
        flatten("", &t, &mut lines);
    }
    lines.extend(C::OPTIONAL_KEYS.iter().map(|k| format!("  {k} = <unset>")));
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use serde::Deserialize;

    use super::*;

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    #[serde(deny_unknown_fields, default)]
    struct Inner {
        depth: usize,
        name: String,
    }

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    #[serde(deny_unknown_fields, default)]
    struct Demo {
        rate: f64,
        inner: Inner,
    }

    impl Default for Inner {
        fn default() -> Self {
            Self {
                depth: 2,
                name: "x".into(),
            }
        }
    }

    impl Default for Demo {
        fn default() -> Self {
            Self {
                rate: 0.5,
                inner: Inner::default(),
            }
        }
    }

    impl RunConfig for Demo {}

    fn args(overrides: &[&str]) -> ConfigArgs {
        ConfigArgs {
            overrides: overrides.iter().map(|s| s.to_string()).collect(),
            ..ConfigArgs::default()
        }
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let d: Demo = resolve(&args(&["inner.depth=7", "inner.name=deep"])).unwrap();
        assert_eq!(d.inner.depth, 7);
        assert_eq!(d.inner.name, "deep");
        assert_eq!(d.rate, 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(resolve::<Demo>(&args(&["inner.width=3"])).is_err());
        assert!(resolve::<Demo>(&args(&["speed=3"])).is_err());
        assert!(resolve::<Demo>(&args(&["rate"])).is_err());
    }

    #[test]
    fn rendered_config_reads_back() {
        let d: Demo = resolve(&args(&["rate=0.25"])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, render(&d).unwrap()).unwrap();
        let again: Demo = resolve(&ConfigArgs {
            config: Some(path),
            ..ConfigArgs::default()
        })
        .unwrap();
        assert_eq!(again, d);
    }

    #[test]
    fn help_lists_every_key() {
        let h = keys_help::<Demo>();
        for k in ["rate = 0.5", "inner.depth = 2", "inner.name = \"x\""] {
            assert!(h.contains(k), "{h}");
        }
    }
}
