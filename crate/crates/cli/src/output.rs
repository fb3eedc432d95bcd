//! Staged writes into the output tree.
//!
//! Every file is first written as `<name>.partial` and only renamed once the
//! whole command has succeeded. A failed command therefore leaves its
//! `.partial` files behind and never clobbers the outputs of an earlier run.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const PARTIAL_SUFFIX: &str = ".partial";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    /// Relative to the output directory, `/`-separated. External inputs keep only their file name.
    pub path: String,
    pub sha256: String,
}

/// Run record for one command. Holds nothing that varies between identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path.display(), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().expect("file path").to_os_string();
    name.push(PARTIAL_SUFFIX);
    path.with_file_name(name)
}

fn remove_stale_partials(dir: &Path) -> Result<(), CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir.display(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir.display(), e))?;
        let path = entry.path();
        if path.is_dir() {
            remove_stale_partials(&path)?;
        } else if path.to_string_lossy().ends_with(PARTIAL_SUFFIX) {
            fs::remove_file(&path).map_err(|e| CliError::io(path.display(), e))?;
        }
    }
    Ok(())
}

/// Output files of one command, living under `<root>/<command>/`.
pub struct Stage {
    root: PathBuf,
    command: String,
    pending: Vec<String>,
    inputs: Vec<FileDigest>,
    seeds: BTreeMap<String, u64>,
}

impl Stage {
    pub fn open(root: &Path, command: &str) -> Result<Self, CliError> {
        let dir = root.join(command);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(dir.display(), e))?;
        remove_stale_partials(&dir)?;
        Ok(Stage {
            root: root.to_path_buf(),
            command: command.to_string(),
            pending: Vec::new(),
            inputs: Vec::new(),
            seeds: BTreeMap::new(),
        })
    }

    fn final_path(&self, rel: &str) -> PathBuf {
        self.root.join(&self.command).join(rel)
    }

    pub fn write_with<F>(&mut self, rel: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
    {
        let target = self.final_path(rel);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent.display(), e))?;
        }
        let tmp = partial_path(&target);
        let file = File::create(&tmp).map_err(|e| CliError::io(tmp.display(), e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| CliError::io(tmp.display(), e))?;
        self.pending.push(rel.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(
        &mut self,
        rel: &str,
        value: &T,
    ) -> Result<(), CliError> {
        self.write_with(rel, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(fsu_demand::Error::from)?;
            w.write_all(b"\n").map_err(|e| CliError::io(rel, e))
        })
    }

    /// Records an artifact from the output tree as an input of this command.
    pub fn input(&mut self, rel: &str) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        self.inputs.push(FileDigest {
            path: rel.to_string(),
            sha256: sha256_file(&path)?,
        });
        Ok(path)
    }

    /// Records a file outside the output tree under its file name only.
    pub fn external_input(&mut self, path: &Path) -> Result<(), CliError> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.inputs.push(FileDigest {
            path: name,
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// Moves every staged file into place, then writes the manifest.
    pub fn commit(self, config_sha256: &str) -> Result<Vec<PathBuf>, CliError> {
        let mut outputs = Vec::with_capacity(self.pending.len());
        let mut finals = Vec::with_capacity(self.pending.len() + 1);
        for rel in &self.pending {
            let target = self.final_path(rel);
            let tmp = partial_path(&target);
            outputs.push(FileDigest {
                path: format!("{}/{}", self.command, rel),
                sha256: sha256_file(&tmp)?,
            });
            fs::rename(&tmp, &target).map_err(|e| CliError::io(target.display(), e))?;
            finals.push(target);
        }
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let target = self.final_path(MANIFEST);
        let manifest = Manifest {
            command: self.command.clone(),
            version: fsu_demand::VERSION.to_string(),
            config_sha256: config_sha256.to_string(),
            seeds: self.seeds,
            inputs: self.inputs,
            outputs,
        };
        let tmp = partial_path(&target);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(fsu_demand::Error::from)?;
        text.push('\n');
        fs::write(&tmp, text).map_err(|e| CliError::io(tmp.display(), e))?;
        fs::rename(&tmp, &target).map_err(|e| CliError::io(target.display(), e))?;
        finals.push(target);
        Ok(finals)
    }
}
