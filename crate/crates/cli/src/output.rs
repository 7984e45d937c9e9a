//! Atomic output directories and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "run_manifest.json";

/// Staging directory next to the final one; renamed into place by
/// [`Staging::commit`] and removed on drop otherwise.
pub struct Staging {
    tmp: PathBuf,
    dest: PathBuf,
    done: bool,
}

impl Staging {
    pub fn new(dest: &Path) -> Result<Self> {
        let name = dest
            .file_name()
            .with_context(|| format!("invalid output path {}", dest.display()))?
            .to_string_lossy()
            .into_owned();
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        if dest.is_file() {
            bail!("output path {} is a file", dest.display());
        }
        let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        Ok(Self {
            tmp,
            dest: dest.to_path_buf(),
            done: false,
        })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.tmp.join(rel)
    }

    pub fn root(&self) -> &Path {
        &self.tmp
    }

    /// Replaces any previous output with the staged one.
    pub fn commit(mut self) -> Result<()> {
        let old = self.tmp.with_file_name(format!(
            ".{}.old-{}",
            self.dest.file_name().unwrap_or_default().to_string_lossy(),
            std::process::id()
        ));
        if self.dest.exists() {
            fs::rename(&self.dest, &old).with_context(|| format!("moving aside {}", self.dest.display()))?;
        }
        fs::rename(&self.tmp, &self.dest).with_context(|| format!("renaming into {}", self.dest.display()))?;
        self.done = true;
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("below root").to_path_buf());
        }
    }
    Ok(())
}

/// Relative paths of all files below `dir`, sorted.
pub fn files_below(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

/// SHA-256 of a file, or of a directory as the sorted (relative path,
/// file digest) list.
pub fn digest(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut h = Sha256::new();
        for rel in files_below(path)? {
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(digest(&path.join(&rel))?.as_bytes());
            h.update(b"\n");
        }
        Ok(hex(&h.finalize()))
    } else {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(hex(&Sha256::digest(&bytes)))
    }
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

/// Machine-readable record of one run. Timestamps live only here so the
/// primary outputs stay byte-identical across reruns.
pub struct Manifest {
    command: String,
    started_at: String,
    parameters: Value,
    inputs: Vec<FileDigest>,
    counts: BTreeMap<String, Value>,
}

impl Manifest {
    pub fn new(command: &str, parameters: impl Serialize) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            started_at: chrono::Utc::now().to_rfc3339(),
            parameters: serde_json::to_value(parameters)?,
            inputs: Vec::new(),
            counts: BTreeMap::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            bail!("input {} does not exist", path.display());
        }
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: digest(path)?,
        });
        Ok(())
    }

    pub fn count(&mut self, key: &str, value: impl Serialize) {
        self.counts.insert(key.to_string(), serde_json::to_value(value).expect("serializable count"));
    }

    /// Digests every staged file and writes the manifest into the stage.
    pub fn write(self, stage: &Staging) -> Result<()> {
        let outputs = files_below(stage.root())?
            .into_iter()
            .map(|rel| {
                Ok(FileDigest {
                    sha256: digest(&stage.path(&rel))?,
                    path: rel.to_string_lossy().replace('\\', "/"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let doc = serde_json::json!({
            "tool": "pcm",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "started_at": self.started_at,
            "finished_at": chrono::Utc::now().to_rfc3339(),
            "parameters": self.parameters,
            "inputs": self.inputs,
            "outputs": outputs,
            "counts": self.counts,
        });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        fs::write(stage.path(MANIFEST), text)?;
        Ok(())
    }
}
