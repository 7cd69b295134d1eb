use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;

pub const CONFIG_COPY: &str = "config.json";
pub const MANIFEST: &str = "manifest.json";
pub const LOCK: &str = ".lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn now_rfc3339() -> String {
    humantime::format_rfc3339_seconds(SystemTime::now()).to_string()
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    let mut f = fs::File::create(&tmp).map_err(PipelineError::io(&tmp))?;
    f.write_all(bytes).map_err(PipelineError::io(&tmp))?;
    f.sync_all().map_err(PipelineError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(PipelineError::io(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Internal(e.to_string()))?;
    write_atomic(path, (text + "\n").as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::MissingArtifact(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::MissingArtifact(format!("{} is malformed: {e}", path.display())))
}

/// Exclusive ownership of a run directory for the lifetime of the value.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
        let path = dir.join(LOCK);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Locked(dir.display().to_string()))
            }
            Err(e) => Err(PipelineError::io(&path)(e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandEntry {
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: Option<String>,
    pub started: String,
    pub finished: String,
    pub status: String,
    /// Artifact name to path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    /// SHA-256 of `config.json` in the run directory.
    pub config_hash: Option<String>,
    pub commands: Vec<CommandEntry>,
}

impl RunManifest {
    pub fn load_or_new(dir: &Path) -> Self {
        read_json(&dir.join(MANIFEST)).unwrap_or(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: None,
            commands: Vec::new(),
        })
    }

    pub fn store(&self, dir: &Path) -> Result<(), PipelineError> {
        write_json(&dir.join(MANIFEST), self)
    }
}

/// Bookkeeping for one command invocation against a run directory.
pub struct CommandLog {
    pub entry: CommandEntry,
}

impl CommandLog {
    pub fn start(command: &str, args: Vec<String>, config_hash: Option<String>) -> Self {
        Self {
            entry: CommandEntry {
                command: command.into(),
                args,
                config_hash,
                started: now_rfc3339(),
                finished: String::new(),
                status: "running".into(),
                artifacts: BTreeMap::new(),
            },
        }
    }

    pub fn artifact(&mut self, name: &str, rel: impl Into<String>) {
        self.entry.artifacts.insert(name.into(), rel.into());
    }

    /// Appends the entry to the directory's manifest.
    pub fn finish<T>(
        mut self,
        dir: &Path,
        result: &Result<T, PipelineError>,
        run_config_hash: Option<String>,
    ) -> Result<(), PipelineError> {
        self.entry.finished = now_rfc3339();
        self.entry.status = match result {
            Ok(_) => "ok".into(),
            Err(e) => format!("error: {e}"),
        };
        let mut m = RunManifest::load_or_new(dir);
        if run_config_hash.is_some() {
            m.config_hash = run_config_hash;
        }
        m.commands.push(self.entry);
        m.store(dir)
    }
}

pub fn relative(base: &Path, path: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}
