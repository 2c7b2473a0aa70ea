//! On-disk eigensystem cache.
//!
//! Layout: one UTF-8 JSON header line terminated by `\n`, then raw
//! little-endian `f64` values: the `dim` energies followed by the basis as
//! interleaved `(re, im)` pairs in row-major order. The header carries the
//! dimension, the model descriptor the spectrum belongs to, and the SHA-256 of
//! the binary payload.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Eigensystem;
use crate::error::{Error, Result};

const FORMAT: &str = "ethkick-eigensystem";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigensystemHeader {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub model: serde_json::Value,
    /// Hex SHA-256 of the binary payload.
    pub hash: String,
    pub residual: f64,
}

fn payload(eig: &Eigensystem) -> Vec<u8> {
    let d = eig.dim();
    let mut out = Vec::with_capacity(8 * (d + 2 * d * d));
    for e in eig.energies() {
        out.extend_from_slice(&e.to_le_bytes());
    }
    let v = eig.basis();
    for i in 0..d {
        for j in 0..d {
            out.extend_from_slice(&v[(i, j)].re.to_le_bytes());
            out.extend_from_slice(&v[(i, j)].im.to_le_bytes());
        }
    }
    out
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn cache_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Cache { path: path.to_path_buf(), reason: reason.into() }
}

/// Writes `eig` atomically (temp file + rename).
pub fn write_eigensystem(path: &Path, model: &serde_json::Value, eig: &Eigensystem) -> Result<()> {
    let body = payload(eig);
    let header = EigensystemHeader {
        format: FORMAT.to_string(),
        version: VERSION,
        dim: eig.dim(),
        model: model.clone(),
        hash: hex(&Sha256::digest(&body)),
        residual: eig.residual(),
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("eig"),
        std::process::id()
    ));
    {
        let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
        serde_json::to_writer(&mut f, &header)?;
        f.write_all(b"\n")?;
        f.write_all(&body)?;
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_eigensystem(path: &Path) -> Result<(EigensystemHeader, Eigensystem)> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: EigensystemHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| cache_err(path, format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(cache_err(path, format!("unsupported format {} v{}", header.format, header.version)));
    }
    let d = header.dim;
    if d == 0 {
        return Err(cache_err(path, "zero dimension"));
    }
    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    if body.len() != 8 * (d + 2 * d * d) {
        return Err(cache_err(path, format!("payload has {} bytes, expected {}", body.len(), 8 * (d + 2 * d * d))));
    }
    if hex(&Sha256::digest(&body)) != header.hash {
        return Err(cache_err(path, "payload hash mismatch"));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let energies: Vec<f64> = values.by_ref().take(d).collect();
    let mut basis = Mat::<C64>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let re = values.next().expect("length checked");
            let im = values.next().expect("length checked");
            basis[(i, j)] = C64::new(re, im);
        }
    }
    let eig = Eigensystem::from_parts(energies, basis, header.residual)
        .map_err(|e| cache_err(path, e.to_string()))?;
    Ok((header, eig))
}

/// Directory of eigensystem files keyed by the hash of a model descriptor.
#[derive(Clone, Debug)]
pub struct EigenCache {
    dir: PathBuf,
}

impl EigenCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Cache file for a descriptor. `serde_json::Value` keeps object keys
    /// sorted, so the serialized form is canonical.
    pub fn path_for(&self, model: &serde_json::Value) -> PathBuf {
        let key = hex(&Sha256::digest(model.to_string().as_bytes()));
        self.dir.join(format!("eig-{}.bin", &key[..16]))
    }

    pub fn load(&self, model: &serde_json::Value) -> Result<Option<Eigensystem>> {
        let path = self.path_for(model);
        if !path.exists() {
            return Ok(None);
        }
        let (header, eig) = read_eigensystem(&path)?;
        if &header.model != model {
            log::warn!("cache key collision at {}; ignoring entry", path.display());
            return Ok(None);
        }
        Ok(Some(eig))
    }

    pub fn store(&self, model: &serde_json::Value, eig: &Eigensystem) -> Result<PathBuf> {
        let path = self.path_for(model);
        write_eigensystem(&path, model, eig)?;
        Ok(path)
    }

    /// Headers of every readable entry, sorted by file name.
    pub fn list(&self) -> Result<Vec<(PathBuf, EigensystemHeader)>> {
        let mut out = Vec::new();
        if !self.dir.exists() {
            return Ok(out);
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_cache_file(p))
            .collect();
        paths.sort();
        for p in paths {
            let mut line = String::new();
            BufReader::new(fs::File::open(&p)?).read_line(&mut line)?;
            match serde_json::from_str(line.trim_end()) {
                Ok(h) => out.push((p, h)),
                Err(e) => log::warn!("skipping {}: {e}", p.display()),
            }
        }
        Ok(out)
    }

    /// Removes every cache entry; returns how many files were deleted.
    pub fn clear(&self) -> Result<usize> {
        if !self.dir.exists() {
            return Ok(0);
        }
        let mut removed = 0;
        for entry in fs::read_dir(&self.dir)? {
            let p = entry?.path();
            if is_cache_file(&p) {
                fs::remove_file(&p)?;
                removed += 1;
            }
        }
        Ok(removed)
    }
}

fn is_cache_file(p: &Path) -> bool {
    p.file_name()
        .and_then(|s| s.to_str())
        .is_some_and(|s| s.starts_with("eig-") && s.ends_with(".bin"))
}
