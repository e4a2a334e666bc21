//! Run manifests written next to every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rsig_core::metrics::fingerprint;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: PathBuf,
    /// FNV-1a digest of the contents; absent for files holding wall-clock data.
    pub digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config: Option<ExperimentConfig>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, argv: &[String]) -> Self {
        Self {
            tool: "rsig".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: argv.to_vec(),
            config: None,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn with_config(mut self, cfg: &ExperimentConfig) -> Self {
        let seeds = [
            ("data.seed", cfg.data.seed),
            ("data.split_seed", cfg.data.split_seed),
            ("rs.seed", cfg.rs.seed),
            ("generator.seed", cfg.generator.seed),
            ("training.batch_seed", cfg.training.batch_seed),
            ("training.noise_seed", cfg.training.noise_seed),
            ("evaluation.seed", cfg.evaluation.seed),
        ];
        self.seeds.extend(seeds.iter().map(|(k, v)| (k.to_string(), *v)));
        self.config = Some(cfg.clone());
        self
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.into(), value);
        self
    }

    pub fn input(mut self, path: &Path) -> Result<Self, CliError> {
        self.inputs.push(entry(path, true)?);
        Ok(self)
    }

    pub fn output(mut self, path: &Path) -> Result<Self, CliError> {
        self.outputs.push(entry(path, true)?);
        Ok(self)
    }

    pub fn volatile_output(mut self, path: &Path) -> Result<Self, CliError> {
        self.outputs.push(entry(path, false)?);
        Ok(self)
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(CliError::runtime)?;
        std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }
}

fn entry(path: &Path, digest: bool) -> Result<FileEntry, CliError> {
    let digest = if digest {
        let bytes = std::fs::read(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
        Some(fingerprint(&bytes))
    } else {
        None
    };
    Ok(FileEntry { path: path.to_path_buf(), digest })
}

/// `dir/model.json` becomes `dir/model.manifest.json`.
pub fn path_for(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    output.with_file_name(format!("{stem}.manifest.json"))
}
