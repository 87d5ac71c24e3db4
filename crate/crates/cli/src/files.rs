use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use advsteg_core::wavio::{read_wav, AudioClip};
use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A WAV input with its identity and raw bytes.
pub struct Input {
    pub id: String,
    pub path: PathBuf,
    pub bytes: Vec<u8>,
    pub clip: AudioClip,
}

/// Expands files and directories (their `*.wav` entries) into a sorted,
/// de-duplicated list.
pub fn wav_paths(args: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for a in args {
        if a.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(a)
                .with_context(|| format!("listing {}", a.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(a.clone());
        }
    }
    out.dedup();
    Ok(out)
}

pub fn clip_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "clip".into())
}

pub fn read_input(path: &Path) -> Result<Input> {
    let id = clip_id(path);
    let bytes = fs::read(path).with_context(|| format!("clip {id}: reading {}", path.display()))?;
    let clip = read_wav(&bytes).with_context(|| format!("clip {id}: {}", path.display()))?;
    Ok(Input { id, path: path.to_path_buf(), bytes, clip })
}

/// Reads every input before any work starts; ids must be unique.
pub fn read_inputs(paths: &[PathBuf]) -> Result<Vec<Input>> {
    if paths.is_empty() {
        bail!("no input WAV files");
    }
    let inputs = paths.iter().map(|p| read_input(p)).collect::<Result<Vec<_>>>()?;
    let mut seen = BTreeMap::new();
    for i in &inputs {
        if let Some(prev) = seen.insert(i.id.clone(), i.path.clone()) {
            bail!("clip id {} is used by both {} and {}", i.id, prev.display(), i.path.display());
        }
    }
    Ok(inputs)
}

/// Collects outputs in memory and writes them all at the end. Each file is
/// written to a temporary name and renamed; if any write fails, files
/// already placed by this set are removed.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, path: PathBuf, value: &T) {
        let mut s = serde_json::to_string_pretty(value).expect("serializable");
        s.push('\n');
        self.add(path, s.into_bytes());
    }

    /// `(path, sha256)` of every pending file.
    pub fn digests(&self) -> BTreeMap<String, String> {
        self.files.iter().map(|(p, b)| (p.display().to_string(), sha256_hex(b))).collect()
    }

    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut placed: Vec<PathBuf> = Vec::new();
        for (path, bytes) in &self.files {
            if let Err(e) = write_atomic(path, bytes) {
                for p in &placed {
                    let _ = fs::remove_file(p);
                }
                return Err(e);
            }
            placed.push(path.clone());
        }
        Ok(placed)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().with_context(|| format!("{} is not a file path", path.display()))?;
    let tmp = dir.join(format!(".{}.partial", name.to_string_lossy()));
    let result = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

/// `out.wav` → `out.wav.manifest.json`
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config_digest: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Per-clip seeds, key digest and similar.
    pub details: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>, config_digest: String) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config_digest,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            details: serde_json::Value::Null,
        }
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.insert(path.display().to_string(), sha256_hex(bytes));
    }
}
