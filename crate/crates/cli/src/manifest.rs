//! Run manifests: everything needed to regenerate an output file.
//!
//! Wall-clock timestamps are deliberately left out so that replaying a
//! manifest reproduces the file byte for byte.

use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::{DesignArgs, SimulateArgs, ValidateArgs};

pub const TOOL: &str = "tomoplan";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", content = "parameters", rename_all = "lowercase")]
pub enum CommandRecord {
    Validate(ValidateArgs),
    Design(DesignArgs),
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputFile {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    #[serde(flatten)]
    pub command: CommandRecord,
    pub inputs: Vec<InputFile>,
}

impl RunManifest {
    pub fn new(command: CommandRecord) -> Self {
        RunManifest {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            inputs: Vec::new(),
        }
    }

    /// Records an input file with its digest and returns its contents.
    pub fn read_input(&mut self, role: &str, path: &Path) -> anyhow::Result<String> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {role} file {}", path.display()))?;
        self.inputs.push(InputFile {
            role: role.into(),
            path: path.display().to_string(),
            sha256: sha256_hex(text.as_bytes()),
        });
        Ok(text)
    }

    /// Fails if any input changed since the manifest was written.
    pub fn check_inputs(&self) -> anyhow::Result<()> {
        for input in &self.inputs {
            let bytes = std::fs::read(&input.path).with_context(|| format!("cannot read {} file {}", input.role, input.path))?;
            if sha256_hex(&bytes) != input.sha256 {
                bail!("{} file {} changed since the run was recorded", input.role, input.path);
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Prefix of the first line of a CSV output; the rest is the manifest JSON.
pub const CSV_MARKER: &str = "# manifest ";

/// Extracts the manifest from a JSON output or from the header line of a
/// CSV output.
pub fn load_manifest(path: &Path) -> anyhow::Result<RunManifest> {
    let file = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut first = String::new();
    let mut reader = BufReader::new(file);
    reader.read_line(&mut first)?;
    if let Some(json) = first.strip_prefix(CSV_MARKER) {
        return serde_json::from_str(json.trim_end()).context("malformed manifest line");
    }
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))?;
    let manifest = value
        .get("manifest")
        .with_context(|| format!("{} has no manifest", path.display()))?;
    serde_json::from_value(manifest.clone()).context("malformed manifest")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
