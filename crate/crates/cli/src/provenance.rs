//! Sidecar JSON recording how an output file was produced.

use std::path::{Path, PathBuf};

use fracfield::io::write_json;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub parameters: Value,
    pub outputs: Vec<String>,
}

impl Provenance {
    pub fn new(command: &str, seed: Option<u64>, parameters: Value) -> Self {
        Self {
            tool: "fracfield",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_owned(),
            seed,
            parameters,
            outputs: Vec::new(),
        }
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        Ok(write_json(path, self)?)
    }
}

/// `data.csv` -> `data.json`; `fit.json` -> `fit.provenance.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    if out.extension().is_some_and(|e| e == "json") {
        out.with_extension("provenance.json")
    } else {
        out.with_extension("json")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_names() {
        assert_eq!(
            sidecar_path(Path::new("a/s.csv")),
            PathBuf::from("a/s.json")
        );
        assert_eq!(
            sidecar_path(Path::new("fit.json")),
            PathBuf::from("fit.provenance.json")
        );
        assert_eq!(sidecar_path(Path::new("out")), PathBuf::from("out.json"));
    }
}
