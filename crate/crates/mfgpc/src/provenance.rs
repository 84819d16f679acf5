//! Tool version, flags and seed embedded in every output file.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Every resolved option of the command, as JSON.
    pub flags: serde_json::Value,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(command: &str, flags: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            flags,
            seed,
        }
    }

    /// `# key: value` lines for text outputs.
    pub fn comment_lines(&self) -> Vec<String> {
        let seed = self.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        vec![
            format!("# tool: {} {}", self.tool, self.version),
            format!("# command: {}", self.command),
            format!("# flags: {}", self.flags),
            format!("# seed: {seed}"),
        ]
    }
}
