//! On-disk library of trained fields, keyed by a content hash of the problem.
//!
//! Layout:
//!
//! ```text
//! <root>/<key hex>/<entry id>/manifest.json
//! <root>/<key hex>/<entry id>/params.bin
//! ```
//!
//! `params.bin` holds little-endian `f64` values: the parameters, the Adam
//! first moments, the Adam second moments, then the step counter as one
//! float. Entries are written into a hidden staging directory and renamed
//! into place, so readers never observe a partial entry.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::approx::Architecture;
use crate::mesh::Grid;
use crate::operators::BoundaryProblem;

pub const CACHE_FORMAT: u32 = 1;

const MANIFEST: &str = "manifest.json";
const PARAMS: &str = "params.bin";
const STAGING_PREFIX: &str = ".staging-";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache I/O error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("refusing to cache a non-finite sobolev norm")]
    NonFiniteNorm,
    #[error("corrupt cache entry {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CacheError + '_ {
    move |source| CacheError::Io { path: path.to_path_buf(), source }
}

/// 256-bit content hash (lowercase hex) of the canonical problem text and the
/// grid resolution.
pub fn cache_key(problem: &BoundaryProblem, grid: &Grid) -> String {
    let mut hasher = Sha256::new();
    hasher.update(problem.canonical().as_bytes());
    let res: Vec<String> = grid.resolution().iter().map(|n| n.to_string()).collect();
    hasher.update(format!("\ngrid:{}", res.join("x")).as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub architecture: Architecture,
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    /// Final total loss of the saved parameters.
    pub sobolev_norm: f64,
    pub grid_resolution: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    architecture: Architecture,
    sobolev_norm: f64,
    grid_resolution: Vec<usize>,
    timestamp: u64,
    param_count: usize,
}

/// Summary of one key for listings.
#[derive(Debug, Clone, PartialEq)]
pub struct KeySummary {
    pub key: String,
    pub entries: usize,
    pub best_norm: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CacheStore {
    root: PathBuf,
}

static COUNTER: AtomicU64 = AtomicU64::new(0);

fn unique_id() -> String {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    format!("{nanos:032}-{:08x}-{:04}", std::process::id(), COUNTER.fetch_add(1, Ordering::Relaxed))
}

impl CacheStore {
    /// Opens (and creates if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(CacheStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_dirs(&self, key: &str) -> Result<Vec<PathBuf>, CacheError> {
        let dir = self.root.join(key);
        let read = match fs::read_dir(&dir) {
            Ok(r) => r,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(CacheError::Io { path: dir, source: e }),
        };
        let mut out = Vec::new();
        for item in read {
            let item = item.map_err(io_err(&dir))?;
            let name = item.file_name();
            if name.to_string_lossy().starts_with(STAGING_PREFIX) {
                continue;
            }
            if item.path().is_dir() {
                out.push(item.path());
            }
        }
        out.sort();
        Ok(out)
    }

    fn read_manifest(dir: &Path) -> Result<Manifest, CacheError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| CacheError::Corrupt { path: path.clone(), message: e.to_string() })?;
        if manifest.format != CACHE_FORMAT {
            return Err(CacheError::Corrupt { path, message: format!("unknown format {}", manifest.format) });
        }
        Ok(manifest)
    }

    fn read_entry(dir: &Path) -> Result<CacheEntry, CacheError> {
        let manifest = Self::read_manifest(dir)?;
        let path = dir.join(PARAMS);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let n = manifest.param_count;
        if manifest.architecture.param_count() != n || bytes.len() != (3 * n + 1) * 8 {
            return Err(CacheError::Corrupt {
                path,
                message: format!("expected {} floats, found {} bytes", 3 * n + 1, bytes.len()),
            });
        }
        let floats: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let step = floats[3 * n];
        if !(step >= 0.0) || step.fract() != 0.0 {
            return Err(CacheError::Corrupt { path, message: format!("bad step counter {step}") });
        }
        Ok(CacheEntry {
            architecture: manifest.architecture,
            params: floats[..n].to_vec(),
            m: floats[n..2 * n].to_vec(),
            v: floats[2 * n..3 * n].to_vec(),
            step: step as u64,
            sobolev_norm: manifest.sobolev_norm,
            grid_resolution: manifest.grid_resolution,
        })
    }

    /// Best (lowest norm) entry for `key` with a matching architecture.
    /// Unreadable entries are skipped with a warning.
    pub fn lookup(&self, key: &str, architecture: &Architecture) -> Result<Option<CacheEntry>, CacheError> {
        let mut best: Option<(f64, PathBuf)> = None;
        for dir in self.entry_dirs(key)? {
            match Self::read_manifest(&dir) {
                Ok(m) if &m.architecture == architecture => {
                    if best.as_ref().map_or(true, |(n, _)| m.sobolev_norm < *n) {
                        best = Some((m.sobolev_norm, dir));
                    }
                }
                Ok(_) => {}
                Err(e) => log::warn!("skipping cache entry: {e}"),
            }
        }
        let Some((_, dir)) = best else { return Ok(None) };
        match Self::read_entry(&dir) {
            Ok(entry) => Ok(Some(entry)),
            Err(e) => {
                log::warn!("skipping cache entry: {e}");
                // fall back to the remaining entries
                let mut rest: Vec<CacheEntry> = Vec::new();
                for other in self.entry_dirs(key)? {
                    if other == dir {
                        continue;
                    }
                    if let Ok(entry) = Self::read_entry(&other) {
                        if &entry.architecture == architecture {
                            rest.push(entry);
                        }
                    }
                }
                Ok(rest.into_iter().min_by(|a, b| a.sobolev_norm.total_cmp(&b.sobolev_norm)))
            }
        }
    }

    /// Adds an entry for `key`; earlier entries are kept.
    pub fn save(&self, key: &str, entry: &CacheEntry) -> Result<PathBuf, CacheError> {
        if !entry.sobolev_norm.is_finite() {
            return Err(CacheError::NonFiniteNorm);
        }
        let n = entry.params.len();
        assert_eq!(entry.m.len(), n, "first moment length");
        assert_eq!(entry.v.len(), n, "second moment length");
        let key_dir = self.root.join(key);
        fs::create_dir_all(&key_dir).map_err(io_err(&key_dir))?;
        let id = unique_id();
        let staging = key_dir.join(format!("{STAGING_PREFIX}{id}"));
        fs::create_dir(&staging).map_err(io_err(&staging))?;

        let manifest = Manifest {
            format: CACHE_FORMAT,
            architecture: entry.architecture.clone(),
            sobolev_norm: entry.sobolev_norm,
            grid_resolution: entry.grid_resolution.clone(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            param_count: n,
        };
        let manifest_path = staging.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;

        let mut bytes = Vec::with_capacity((3 * n + 1) * 8);
        for x in entry.params.iter().chain(&entry.m).chain(&entry.v) {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        bytes.extend_from_slice(&(entry.step as f64).to_le_bytes());
        let params_path = staging.join(PARAMS);
        fs::write(&params_path, bytes).map_err(io_err(&params_path))?;

        let final_dir = key_dir.join(id);
        fs::rename(&staging, &final_dir).map_err(io_err(&final_dir))?;
        Ok(final_dir)
    }

    /// Keys with their entry counts and best norms, sorted by key.
    pub fn list(&self) -> Result<Vec<KeySummary>, CacheError> {
        let mut out = Vec::new();
        let read = fs::read_dir(&self.root).map_err(io_err(&self.root))?;
        for item in read {
            let item = item.map_err(io_err(&self.root))?;
            let name = item.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') || !item.path().is_dir() {
                continue;
            }
            let dirs = self.entry_dirs(&name)?;
            let best_norm = dirs
                .iter()
                .filter_map(|d| Self::read_manifest(d).ok())
                .map(|m| m.sobolev_norm)
                .min_by(f64::total_cmp);
            if !dirs.is_empty() {
                out.push(KeySummary { key: name, entries: dirs.len(), best_norm });
            }
        }
        out.sort_by(|a, b| a.key.cmp(&b.key));
        Ok(out)
    }

    /// Removes every key. Each key directory is renamed out of view before
    /// deletion.
    pub fn clear(&self) -> Result<usize, CacheError> {
        let mut removed = 0;
        let read = fs::read_dir(&self.root).map_err(io_err(&self.root))?;
        for item in read {
            let item = item.map_err(io_err(&self.root))?;
            let name = item.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') || !item.path().is_dir() {
                continue;
            }
            let trash = self.root.join(format!(".trash-{}", unique_id()));
            fs::rename(item.path(), &trash).map_err(io_err(&trash))?;
            fs::remove_dir_all(&trash).map_err(io_err(&trash))?;
            removed += 1;
        }
        Ok(removed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems;

    fn entry(norm: f64, params: Vec<f64>) -> CacheEntry {
        let n = params.len();
        CacheEntry {
            architecture: Architecture::Mlp { layers: vec![1, 1] },
            params,
            m: vec![0.5; n],
            v: vec![0.25; n],
            step: 17,
            sobolev_norm: norm,
            grid_resolution: vec![10],
        }
    }

    #[test]
    fn empty_store_has_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::open(dir.path()).unwrap();
        assert_eq!(store.lookup("abc", &Architecture::Mlp { layers: vec![1, 1] }).unwrap(), None);
        assert!(store.list().unwrap().is_empty());
    }

    #[test]
    fn lookup_returns_lowest_norm() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::open(dir.path()).unwrap();
        store.save("k", &entry(0.5, vec![1.0, 2.0])).unwrap();
        store.save("k", &entry(0.2, vec![3.0, 4.0])).unwrap();
        let got = store.lookup("k", &Architecture::Mlp { layers: vec![1, 1] }).unwrap().unwrap();
        assert_eq!(got.sobolev_norm, 0.2);
        assert_eq!(got.params, vec![3.0, 4.0]);
        let listing = store.list().unwrap();
        assert_eq!(listing, vec![KeySummary { key: "k".into(), entries: 2, best_norm: Some(0.2) }]);
    }

    #[test]
    fn architecture_mismatch_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::open(dir.path()).unwrap();
        store.save("k", &entry(0.5, vec![1.0, 2.0])).unwrap();
        assert_eq!(store.lookup("k", &Architecture::Mlp { layers: vec![1, 4, 1] }).unwrap(), None);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::open(dir.path()).unwrap();
        let mut e = entry(0.1 + 0.2, vec![std::f64::consts::PI, -1e-300]);
        e.m[1] = f64::MIN_POSITIVE;
        store.save("k", &e).unwrap();
        let got = store.lookup("k", &e.architecture).unwrap().unwrap();
        assert_eq!(got.sobolev_norm.to_bits(), e.sobolev_norm.to_bits());
        assert_eq!(got, e);
    }

    #[test]
    fn staging_and_corrupt_entries_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::open(dir.path()).unwrap();
        store.save("k", &entry(0.4, vec![1.0, 2.0])).unwrap();
        // interrupted write: staging directory with a better norm
        let staging = dir.path().join("k").join(".staging-interrupted");
        fs::create_dir(&staging).unwrap();
        fs::write(staging.join(MANIFEST), "{\"format\": 1, \"sobolev_norm\": 0.0").unwrap();
        // complete manifest whose params are truncated
        let broken = store.save("k", &entry(0.1, vec![5.0, 6.0])).unwrap();
        fs::write(broken.join(PARAMS), [0u8; 7]).unwrap();
        let got = store.lookup("k", &Architecture::Mlp { layers: vec![1, 1] }).unwrap().unwrap();
        assert_eq!(got.sobolev_norm, 0.4);
        assert_eq!(store.list().unwrap()[0].entries, 2);
    }

    #[test]
    fn clear_removes_everything() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::open(dir.path()).unwrap();
        store.save("a", &entry(0.4, vec![1.0, 2.0])).unwrap();
        store.save("b", &entry(0.4, vec![1.0, 2.0])).unwrap();
        assert_eq!(store.clear().unwrap(), 2);
        assert!(store.list().unwrap().is_empty());
    }

    #[test]
    fn non_finite_norm_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::open(dir.path()).unwrap();
        assert!(matches!(store.save("k", &entry(f64::NAN, vec![1.0, 2.0])), Err(CacheError::NonFiniteNorm)));
    }

    #[test]
    fn keys_are_stable_and_discriminating() {
        let g = Grid::new(crate::mesh::Domain::interval("t", 0.0, 1.0).unwrap(), &[100]).unwrap();
        let a = cache_key(&problems::legendre(3).problem, &g);
        let b = cache_key(&problems::legendre(3).problem, &g);
        let c = cache_key(&problems::legendre(4).problem, &g);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
        assert!(a.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));

        let mut reordered = problems::legendre(3).problem;
        reordered.operator.terms.reverse();
        reordered.conditions.reverse();
        assert_eq!(cache_key(&reordered, &g), a);

        let g50 = Grid::new(crate::mesh::Domain::interval("t", 0.0, 1.0).unwrap(), &[50]).unwrap();
        assert_ne!(cache_key(&problems::legendre(3).problem, &g50), a);
    }
}
