//! Run artifacts: the binary trajectory file, OBJ frames, CSV tables and the
//! run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::AppError;
use crate::mesh::{write_obj, TriMesh};

const MAGIC: &[u8; 4] = b"DFCL";
const VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AppError + '_ {
    move |source| AppError::Io { path: path.to_path_buf(), source }
}

/// Writes frame-major positions: magic `DFCL`, then little-endian `u32`
/// version, `u64` values per frame `m`, `u64` frame count, then the `f64` data.
pub fn write_trajectory<W: Write>(mut out: W, frames: &[Vec<f64>]) -> std::io::Result<()> {
    let m = frames.first().map_or(0, Vec::len);
    assert!(frames.iter().all(|f| f.len() == m), "frames must have equal length");
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(m as u64).to_le_bytes())?;
    out.write_all(&(frames.len() as u64).to_le_bytes())?;
    for f in frames {
        for x in f {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_trajectory<R: Read>(mut input: R) -> Result<Vec<Vec<f64>>, AppError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| AppError::Trajectory(e.to_string()))?;
    if bytes.len() < 24 || &bytes[..4] != MAGIC {
        return Err(AppError::Trajectory("missing DFCL header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(AppError::Trajectory(format!("unsupported version {version}")));
    }
    let m = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let frames = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let body = &bytes[24..];
    if Some(body.len()) != m.checked_mul(frames).and_then(|n| n.checked_mul(8)) {
        return Err(AppError::Trajectory(format!("expected {frames} frames of {m} values, found {} bytes", body.len())));
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(if m == 0 { vec![Vec::new(); frames] } else { values.chunks(m).map(<[f64]>::to_vec).collect() })
}

/// Identifies a run: configuration hash, crate version, seeds and the hash of
/// every file written.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub config: String,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub files: Vec<FileEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl Manifest {
    pub fn new(command: &str, config_toml: &str, seeds: Vec<u64>) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: sha256_hex(config_toml.as_bytes()),
            config: config_toml.into(),
            seeds,
            threads: rayon::current_num_threads(),
            files: Vec::new(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output directory of a run; every file written through it is recorded in
/// the manifest.
pub struct OutputDir {
    root: PathBuf,
    manifest: Manifest,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>, manifest: Manifest) -> Result<Self, AppError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `relative` with the bytes produced by `fill` and records its hash.
    pub fn write_with(&mut self, relative: &str, fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<PathBuf, AppError> {
        let path = self.root.join(relative);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let mut bytes = Vec::new();
        fill(&mut bytes).map_err(io_err(&path))?;
        let mut file = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        file.write_all(&bytes).and_then(|_| file.flush()).map_err(io_err(&path))?;
        self.manifest.files.push(FileEntry { path: relative.into(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
        Ok(path)
    }

    pub fn write_frame(&mut self, frame: usize, mesh: &TriMesh<f64>, x: &[f64]) -> Result<PathBuf, AppError> {
        self.write_with(&format!("frames/frame_{frame:05}.obj"), |w| write_obj(w, &mesh.triangles, x, frame))
    }

    /// Writes `manifest.json` and returns its path.
    pub fn finish(self) -> Result<PathBuf, AppError> {
        let path = self.root.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(path)
    }
}
