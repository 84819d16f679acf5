//! Optional TOML configuration. A file holds one table per subcommand, with
//! keys named like the long flags (`n-low` or `n_low`):
//!
//! ```toml
//! [generate]
//! dim = 5
//! noise = 0.2
//!
//! [evaluate]
//! runs = 3
//! methods = ["mf-gpc", "sf-gpc-hf"]
//! ```
//!
//! Flags given on the command line win over the file, which wins over the
//! built-in defaults.

use std::path::Path;

use anyhow::{anyhow, bail, Context};
use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::de::DeserializeOwned;
use serde::Serialize;

pub fn load_config(path: &Path) -> anyhow::Result<toml::Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    text.parse::<toml::Table>()
        .with_context(|| format!("parsing config {}", path.display()))
}

/// Overlays `section` onto `args` for every field not set explicitly on the
/// command line.
pub fn merge<T: Serialize + DeserializeOwned>(
    args: T,
    matches: &ArgMatches,
    section: Option<&toml::Value>,
) -> anyhow::Result<T> {
    let Some(section) = section else {
        return Ok(args);
    };
    let table = section
        .as_table()
        .ok_or_else(|| anyhow!("config section must be a table"))?;
    let mut value = serde_json::to_value(&args)?;
    let fields = value
        .as_object_mut()
        .ok_or_else(|| anyhow!("arguments must serialize as a map"))?;
    for (key, v) in table {
        let field = key.replace('-', "_");
        if field == "config" || !fields.contains_key(&field) {
            bail!("unknown config key {key:?}");
        }
        let from_cli = matches!(matches.value_source(&field), Some(ValueSource::CommandLine));
        if !from_cli {
            fields.insert(field, serde_json::to_value(v)?);
        }
    }
    serde_json::from_value(value).map_err(|e| anyhow!("invalid config value: {e}"))
}
