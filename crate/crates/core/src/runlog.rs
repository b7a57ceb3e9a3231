//! Machine-readable record of one pipeline step.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::patchset::{INDEX_FILE, META_FILE, TRANSFORM_FILE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub tool: String,
    pub version: String,
    pub step: String,
    /// RFC 3339, UTC. The only field that differs between identical runs.
    pub started: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    /// Resolved settings of the step.
    pub settings: serde_json::Value,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a file, streamed.
pub fn digest_file(path: &Path) -> std::io::Result<InputDigest> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(InputDigest {
        path: path.to_path_buf(),
        bytes,
        sha256: hex(&hasher.finalize()),
    })
}

/// Digests for a file, or for the small descriptive files of a patch store
/// directory (the record file itself can be tens of gigabytes).
pub fn digest_input(path: &Path) -> std::io::Result<Vec<InputDigest>> {
    if !path.is_dir() {
        return Ok(vec![digest_file(path)?]);
    }
    let mut out = Vec::new();
    for name in [META_FILE, INDEX_FILE, TRANSFORM_FILE] {
        let p = path.join(name);
        if p.is_file() {
            out.push(digest_file(&p)?);
        }
    }
    if out.is_empty() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for f in files {
            out.push(digest_file(&f)?);
        }
    }
    Ok(out)
}

impl RunLog {
    pub fn new(step: &str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            step: step.to_string(),
            started: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            settings: serde_json::Value::Null,
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input(mut self, path: &Path) -> std::io::Result<Self> {
        self.inputs.extend(digest_input(path)?);
        Ok(self)
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    pub fn settings<T: Serialize>(mut self, value: &T) -> serde_json::Result<Self> {
        self.settings = serde_json::to_value(value)?;
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)
    }
}

/// Where a step's log goes: inside an output directory, or beside an
/// output file.
pub fn log_path(output: &Path, step: &str) -> PathBuf {
    if output.is_dir() {
        output.join(format!("{step}.log.json"))
    } else {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".log.json");
        output.with_file_name(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        std::fs::write(&p, b"abc").unwrap();
        let d = digest_file(&p).unwrap();
        assert_eq!(d.bytes, 3);
        assert_eq!(
            d.sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn log_round_trip_and_placement() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.bin");
        std::fs::write(&input, [1u8, 2, 3]).unwrap();
        let log = RunLog::new("train")
            .seed("rng_seed", 7)
            .input(&input)
            .unwrap()
            .output(&dir.path().join("model.bin"));
        let path = log_path(&dir.path().join("model.bin"), "train");
        assert_eq!(path.file_name().unwrap(), "model.bin.log.json");
        log.write(&path).unwrap();
        let back: RunLog = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, log);
        assert_eq!(log_path(dir.path(), "folds"), dir.path().join("folds.log.json"));
    }
}
