//! Artifact files: JSON documents carrying provenance, JSON-lines logs and
//! the overwrite policy.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use rarefsl::config::RunConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Bad flags, configuration or inputs; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Upstream {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub command: String,
    pub config: RunConfig,
    pub upstream: Vec<Upstream>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub task_seed: Option<u64>,
}

impl Provenance {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            tool: format!("rarefsl {}", env!("CARGO_PKG_VERSION")),
            command: command.into(),
            config: config.clone(),
            upstream: Vec::new(),
            task_seed: None,
        }
    }

    pub fn with_upstream(mut self, path: &Path) -> anyhow::Result<Self> {
        self.upstream.push(Upstream {
            path: path.to_string_lossy().into_owned(),
            sha256: file_sha256(path)?,
        });
        Ok(self)
    }

    pub fn with_task(mut self, seed: u64) -> Self {
        self.task_seed = Some(seed);
        self
    }
}

pub fn file_sha256(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Creates `dir` for a command's outputs. An existing directory is an error
/// unless `overwrite` is set, in which case it is emptied first.
pub fn prepare_dir(dir: &Path, overwrite: bool) -> anyhow::Result<()> {
    if dir.exists() {
        if !overwrite {
            return Err(UsageError(format!("{} already exists (pass --overwrite to replace it)", dir.display())).into());
        }
        fs::remove_dir_all(dir).with_context(|| format!("removing {}", dir.display()))?;
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

/// Serializes `value` with a `provenance` member added at the top level.
pub fn write_with_provenance<T: Serialize>(path: &Path, value: &T, prov: &Provenance, pretty: bool) -> anyhow::Result<()> {
    let mut doc = serde_json::to_value(value)?;
    let obj = doc.as_object_mut().context("artifact must serialize to a JSON object")?;
    obj.insert("provenance".into(), serde_json::to_value(prov)?);
    write_json(path, &doc, pretty)
}

fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> anyhow::Result<()> {
    let mut text = if pretty {
        serde_json::to_string_pretty(value)?
    } else {
        serde_json::to_string(value)?
    };
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json(path: &Path) -> anyhow::Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_provenance(doc: &Value, path: &Path) -> anyhow::Result<Provenance> {
    let prov = doc
        .get("provenance")
        .with_context(|| format!("{} has no provenance", path.display()))?;
    serde_json::from_value(prov.clone()).with_context(|| format!("provenance in {}", path.display()))
}

/// Append-only JSON-lines log, flushed per record.
pub struct JsonLines {
    file: fs::File,
}

impl JsonLines {
    pub fn create(path: &Path, append: bool) -> anyhow::Result<Self> {
        let file = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(Self { file })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> std::io::Result<()> {
        let line = serde_json::to_string(record)?;
        writeln!(self.file, "{line}")?;
        self.file.flush()
    }
}
