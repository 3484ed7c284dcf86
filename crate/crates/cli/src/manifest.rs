use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Record of one command run: what went in, what came out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub timings_secs: BTreeMap<String, f64>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = std::fs::File::open(path).map_err(|e| coldstart::Error::Io { path: path.into(), source: e })?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| coldstart::Error::Io { path: path.into(), source: e })?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

/// Files under `path` (or `path` itself), sorted.
fn files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let entries = std::fs::read_dir(path).map_err(|e| coldstart::Error::Io { path: path.into(), source: e })?;
    for e in entries {
        let p = e.map_err(|e| coldstart::Error::Io { path: path.into(), source: e })?.path();
        out.extend(files(&p)?);
    }
    out.sort();
    Ok(out)
}

pub struct Recorder {
    manifest: RunManifest,
    started: Instant,
}

impl Recorder {
    pub fn new(command: &str, config: &BTreeMap<String, String>, seed: u64) -> Self {
        let manifest = RunManifest {
            command: command.to_string(),
            config: config.clone(),
            seeds: BTreeMap::from([("seed".to_string(), seed)]),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            timings_secs: BTreeMap::new(),
        };
        Recorder { manifest, started: Instant::now() }
    }

    fn hash_into(map: &mut BTreeMap<String, String>, path: &Path) -> Result<(), CliError> {
        for f in files(path)? {
            if f.extension().is_some_and(|e| e == "json") && f.to_string_lossy().ends_with(".manifest.json") {
                continue;
            }
            map.insert(f.display().to_string(), sha256_file(&f)?);
        }
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        Self::hash_into(&mut self.manifest.inputs, path)
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        Self::hash_into(&mut self.manifest.outputs, path)
    }

    pub fn lap(&mut self, name: &str, since: Instant) {
        self.manifest.timings_secs.insert(name.to_string(), since.elapsed().as_secs_f64());
    }

    /// Writes the manifest to `path`, or to stderr when no path is given.
    pub fn finish(mut self, path: Option<&Path>) -> Result<RunManifest, CliError> {
        self.manifest.timings_secs.insert("total".into(), self.started.elapsed().as_secs_f64());
        let text = serde_json::to_string_pretty(&self.manifest)?;
        match path {
            Some(p) => std::fs::write(p, text + "\n").map_err(|e| coldstart::Error::Io { path: p.into(), source: e })?,
            None => eprintln!("{text}"),
        }
        Ok(self.manifest)
    }
}
