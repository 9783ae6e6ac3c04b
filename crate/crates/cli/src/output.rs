//! Output files held in memory until a command succeeds, then written
//! atomically, each next to a `<name>.provenance.json`.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::spec::ExperimentSpec;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
struct Provenance<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    output: FileDigest,
    inputs: &'a [FileDigest],
    notes: &'a [(String, String)],
    spec: &'a serde_json::Value,
}

/// The files produced by one command.
#[derive(Clone, Debug)]
pub struct Artifacts {
    command: String,
    seed: u64,
    spec: serde_json::Value,
    inputs: Vec<FileDigest>,
    notes: Vec<(String, String)>,
    files: Vec<(String, Vec<u8>)>,
    pub warnings: Vec<String>,
}

impl Artifacts {
    pub fn new(command: &str, spec: &ExperimentSpec) -> Self {
        Artifacts {
            command: command.to_string(),
            seed: spec.seed,
            spec: spec.provenance_value(),
            inputs: Vec::new(),
            notes: Vec::new(),
            files: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Records the hash of an input file.
    pub fn input(&mut self, path: &Path) -> Result<String> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256: sha256.clone() });
        Ok(sha256)
    }

    /// Adds a key-value note to every provenance file, such as the solver used.
    pub fn note(&mut self, key: &str, value: impl Into<String>) {
        self.notes.push((key.to_string(), value.into()));
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(bayes_actor::Error::from)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|f| f.0 == name).map(|f| f.1.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|f| f.0.as_str())
    }

    /// Writes every file and its provenance into `dir`, returning the paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let provenance = Provenance {
                tool: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
                command: &self.command,
                seed: self.seed,
                output: FileDigest { path: name.clone(), sha256: sha256_hex(bytes) },
                inputs: &self.inputs,
                notes: &self.notes,
                spec: &self.spec,
            };
            let mut prov = serde_json::to_vec_pretty(&provenance).map_err(bayes_actor::Error::from)?;
            prov.push(b'\n');
            let path = dir.join(name);
            write_atomic(&path, bytes)?;
            write_atomic(&dir.join(format!("{name}.provenance.json")), &prov)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}
