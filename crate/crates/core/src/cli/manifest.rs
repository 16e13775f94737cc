use std::collections::BTreeMap;
use std::fs::File;
use std::hash::Hasher;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MANIFEST_FILE: &str = "manifest.json";

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// FNV-1a of a file's bytes as 16 lowercase hex digits.
pub fn file_digest(path: &Path) -> io::Result<String> {
    let mut f = File::open(path)?;
    let mut h = FnvHasher::default();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.write(&buf[..n]);
    }
    Ok(format!("{:016x}", h.finish()))
}

/// Seconds since the epoch. `SOURCE_DATE_EPOCH` pins the clock so that
/// repeated runs produce identical manifests.
fn now() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: Value,
    /// Input name to file digest.
    pub inputs: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub started: u64,
    pub finished: Option<u64>,
}

impl RunManifest {
    pub fn begin(command: &str, config: Value, seeds: Vec<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            inputs: BTreeMap::new(),
            seeds,
            started: now(),
            finished: None,
        }
    }

    pub fn add_input(&mut self, name: &str, path: &Path) -> io::Result<()> {
        self.inputs.insert(name.to_string(), file_digest(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()
    }

    /// Stamps the end time and rewrites the manifest.
    pub fn finish(&mut self, dir: &Path) -> io::Result<()> {
        self.finished = Some(now());
        self.write(dir)
    }

    pub fn read(dir: &Path) -> io::Result<Self> {
        let f = File::open(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_reader(io::BufReader::new(f))?)
    }
}
