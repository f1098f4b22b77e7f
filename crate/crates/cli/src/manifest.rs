//! Per-run manifest: what ran, with which config and inputs, what it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use anyhow::{Context, Result};
use mrlrec::digest::fnv1a64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MANIFEST_FILE: &str = "manifest.json";

static ARGV: OnceLock<Vec<String>> = OnceLock::new();

/// Records the arguments that reproduce this run (program name excluded).
pub fn set_argv(argv: Vec<String>) {
    let _ = ARGV.set(argv);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments that re-run the command.
    pub argv: Vec<String>,
    pub config: Value,
    /// Input path → 64-bit FNV-1a of its bytes, as 16 hex digits.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    /// Output path → digest, computed after the command finished.
    pub outputs: BTreeMap<String, String>,
    pub timings_ms: BTreeMap<String, u64>,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:016x}", fnv1a64(&bytes)))
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        Self {
            manifest: RunManifest {
                command: command.to_owned(),
                argv: ARGV.get().cloned().unwrap_or_default(),
                config: Value::Null,
                inputs: BTreeMap::new(),
                seed,
                outputs: BTreeMap::new(),
                timings_ms: BTreeMap::new(),
            },
            started: Instant::now(),
        }
    }

    pub fn config<S: Serialize>(&mut self, config: &S) -> Result<()> {
        self.manifest.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path)?;
        self.manifest.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Digests every regular file directly inside `dir` that `keep` accepts.
    pub fn input_dir(&mut self, dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<()> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && keep(p))
            .collect();
        paths.sort();
        for p in paths {
            self.input(&p)?;
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path)?;
        self.manifest.outputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn timing(&mut self, name: &str, ms: u64) {
        self.manifest.timings_ms.insert(name.to_owned(), ms);
    }

    /// Serializes with sorted keys and writes to `path`.
    pub fn finish(mut self, path: &Path) -> Result<RunManifest> {
        self.timing("total", self.started.elapsed().as_millis() as u64);
        let value = serde_json::to_value(&self.manifest)?;
        write_json(path, &value)?;
        Ok(self.manifest)
    }
}

/// Writes pretty JSON. Objects go through `serde_json::Value`, whose maps are
/// ordered, so keys come out sorted.
pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let value = serde_json::to_value(value)?;
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Manifest location for a command writing `out`: inside it when it is a
/// directory, otherwise next to it as `<out>.manifest.json`.
pub fn manifest_path_for(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join(MANIFEST_FILE)
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Recomputes every input digest recorded in `manifest` and lists the
/// paths whose contents changed or vanished.
pub fn stale_inputs(manifest: &RunManifest) -> Vec<String> {
    manifest
        .inputs
        .iter()
        .filter(|(p, d)| file_digest(Path::new(p)).ok().as_ref() != Some(*d))
        .map(|(p, _)| p.clone())
        .collect()
}
