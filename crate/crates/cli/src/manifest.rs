//! Manifest records and output plumbing. Every run writes one manifest line
//! before its records: tool version, a hash of the resolved configuration,
//! and the seed when the subcommand draws randomness. Paths and endpoint
//! addresses stay out of the hash so a rerun against relocated files hashes
//! identically.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Serialize)]
struct ManifestBody<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    config_sha256: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct ManifestLine<'a> {
    manifest: ManifestBody<'a>,
}

pub(crate) fn config_sha256<T: Serialize>(resolved: &T) -> String {
    let json = serde_json::to_string(resolved).expect("resolved configs serialize");
    let digest = Sha256::digest(json.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        write!(hex, "{byte:02x}").expect("writing to a string");
    }
    hex
}

pub(crate) fn manifest_line<T: Serialize>(
    subcommand: &str,
    resolved: &T,
    seed: Option<u64>,
) -> String {
    let hash = config_sha256(resolved);
    let line = ManifestLine {
        manifest: ManifestBody {
            tool: "gar",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            config_sha256: &hash,
            seed,
        },
    };
    serde_json::to_string(&line).expect("manifest serializes")
}

/// Output records go to a file or, when no path was given, to stdout.
pub(crate) struct Sink {
    out: Box<dyn Write>,
}

impl Sink {
    /// Opens `path` for writing after checking it against every input path.
    pub(crate) fn open(path: Option<&Path>, inputs: &[&Path]) -> Result<Self, CliError> {
        match path {
            Some(p) => {
                ensure_distinct(p, inputs)?;
                let file = File::create(p)
                    .map_err(|e| CliError::Runtime(format!("create {}: {e}", p.display())))?;
                Ok(Self { out: Box::new(BufWriter::new(file)) })
            }
            None => Ok(Self { out: Box::new(std::io::stdout()) }),
        }
    }

    pub(crate) fn line(&mut self, line: &str) -> Result<(), CliError> {
        writeln!(self.out, "{line}").map_err(|e| CliError::Runtime(format!("write output: {e}")))
    }

    pub(crate) fn record<T: Serialize>(&mut self, record: &T) -> Result<(), CliError> {
        let line = serde_json::to_string(record)
            .map_err(|e| CliError::Runtime(format!("serialize record: {e}")))?;
        self.line(&line)
    }

    pub(crate) fn finish(mut self) -> Result<(), CliError> {
        self.out.flush().map_err(|e| CliError::Runtime(format!("flush output: {e}")))
    }
}

/// Loads JSONL records, skipping blank lines and manifest records so the
/// subcommands compose: one tool's output feeds the next directly.
pub(crate) fn load_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("read {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |e: &dyn std::fmt::Display| {
            CliError::Runtime(format!("{}:{}: {e}", path.display(), i + 1))
        };
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| at(&e))?;
        if value.as_object().is_some_and(|o| o.contains_key("manifest")) {
            continue;
        }
        records.push(serde_json::from_value(value).map_err(|e| at(&e))?);
    }
    Ok(records)
}

/// Rejects an output path that names an input, byte-for-byte or after
/// canonicalization when both sides resolve.
pub(crate) fn ensure_distinct(out: &Path, inputs: &[&Path]) -> Result<(), CliError> {
    for input in inputs {
        let same = out == *input
            || match (out.canonicalize(), input.canonicalize()) {
                (Ok(a), Ok(b)) => a == b,
                _ => false,
            };
        if same {
            return Err(CliError::Validation(format!(
                "output path {} equals an input path",
                out.display()
            )));
        }
    }
    Ok(())
}
