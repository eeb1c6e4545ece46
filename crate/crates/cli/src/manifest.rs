//! Run manifests: hashes of every input and output of a CLI run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub library_version: String,
    pub config: Option<InputFile>,
    pub data: Option<InputFile>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub started: String,
    pub finished: String,
    /// Output files relative to the run directory, with their SHA-256.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn now() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    chrono::DateTime::from_timestamp(secs as i64, 0)
        .map(|t| t.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_default()
}

pub fn input(path: &Path) -> Result<InputFile> {
    Ok(InputFile {
        path: fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()),
        sha256: sha256_file(path)?,
    })
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            walk(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("walked below root").to_path_buf());
        }
    }
    Ok(())
}

/// Hash every file below `dir` except the manifest itself.
pub fn hash_outputs(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    let mut out = BTreeMap::new();
    for rel in files {
        let key = rel.to_string_lossy().replace('\\', "/");
        if key == MANIFEST {
            continue;
        }
        out.insert(key, sha256_file(&dir.join(&rel))?);
    }
    Ok(out)
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.join(MANIFEST), text)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Differences between a run directory and its manifest.
pub fn verify(dir: &Path) -> Result<Vec<String>> {
    let manifest = RunManifest::read(dir)?;
    let mut problems = Vec::new();
    for (label, file) in [("config", &manifest.config), ("data", &manifest.data)] {
        if let Some(f) = file {
            match sha256_file(&f.path) {
                Ok(h) if h == f.sha256 => {}
                Ok(_) => problems.push(format!("{label} {} changed", f.path.display())),
                Err(_) => problems.push(format!("{label} {} is missing", f.path.display())),
            }
        }
    }
    let actual = hash_outputs(dir)?;
    for (name, hash) in &manifest.outputs {
        match actual.get(name) {
            Some(h) if h == hash => {}
            Some(_) => problems.push(format!("output {name} changed")),
            None => problems.push(format!("output {name} is missing")),
        }
    }
    for name in actual.keys() {
        if !manifest.outputs.contains_key(name) {
            problems.push(format!("output {name} is not listed"));
        }
    }
    Ok(problems)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_changed_missing_and_extra_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("a.csv"), "x\n1\n").unwrap();
        fs::write(dir.path().join("sub/b.bin"), [1u8, 2, 3]).unwrap();
        let m = RunManifest {
            command: "test".into(),
            library_version: "0".into(),
            config: None,
            data: None,
            seed: None,
            threads: 1,
            started: now(),
            finished: now(),
            outputs: hash_outputs(dir.path()).unwrap(),
        };
        m.write(dir.path()).unwrap();
        assert_eq!(m.outputs.len(), 2);
        assert!(verify(dir.path()).unwrap().is_empty());

        fs::write(dir.path().join("a.csv"), "x\n2\n").unwrap();
        fs::remove_file(dir.path().join("sub/b.bin")).unwrap();
        fs::write(dir.path().join("c.txt"), "new").unwrap();
        let problems = verify(dir.path()).unwrap();
        assert_eq!(problems.len(), 3, "{problems:?}");
    }
}
