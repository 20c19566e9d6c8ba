//! Trained k-means codebooks and the `SVCQ` file format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "SVCQ" | u32 version=1 | u32 k | u32 dim | u64 seed | k × u64 counts | k × dim × f32 centers
//! ```
//!
//! Free-form tags (for example the SSL layer the features came from) live in
//! a JSON sidecar next to the file, `<path>.meta.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{read_file, write_file};

pub const MAGIC: [u8; 4] = *b"SVCQ";
pub const VERSION: u32 = 1;
const FIXED_HEADER: usize = 4 + 4 + 4 + 4 + 8;

/// 64-bit content hash of a codebook's center bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CodebookId(pub u64);

impl CodebookId {
    pub fn of_centers(centers: &[f32]) -> Self {
        let mut hasher = Sha256::new();
        for c in centers {
            hasher.update(c.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut first = [0u8; 8];
        first.copy_from_slice(&digest[..8]);
        CodebookId(u64::from_be_bytes(first))
    }
}

impl fmt::Display for CodebookId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for CodebookId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 16 {
            return Err(Error::Invalid(format!("codebook id '{s}' is not 16 hex digits")));
        }
        u64::from_str_radix(s, 16)
            .map(CodebookId)
            .map_err(|_| Error::Invalid(format!("codebook id '{s}' is not 16 hex digits")))
    }
}

impl Serialize for CodebookId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CodebookId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `k` centers of dimension `dim`, with cumulative per-center assignment
/// counts from mini-batch training.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    centers: Vec<f32>,
    counts: Vec<u64>,
    seed: u64,
    meta: BTreeMap<String, String>,
}

impl Codebook {
    pub fn new(dim: usize, centers: Vec<f32>, counts: Vec<u64>, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("codebook dimension must be positive".into()));
        }
        if centers.is_empty() || centers.len() % dim != 0 {
            return Err(Error::LengthMismatch(format!(
                "{} center values do not form k >= 1 rows of dim {dim}",
                centers.len()
            )));
        }
        let k = centers.len() / dim;
        if counts.len() != k {
            return Err(Error::LengthMismatch(format!(
                "{} counts for {k} centers",
                counts.len()
            )));
        }
        if let Some(i) = centers.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "center {} has a non-finite value in column {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Self {
            k,
            dim,
            centers,
            counts,
            seed,
            meta: BTreeMap::new(),
        })
    }

    /// Codebook with zero counts from row-major centers.
    pub fn from_centers(dim: usize, centers: Vec<f32>) -> Result<Self> {
        let k = if dim == 0 { 0 } else { centers.len() / dim };
        Self::new(dim, centers, vec![0; k], 0)
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut centers = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.as_ref().len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.as_ref().len(),
                });
            }
            centers.extend_from_slice(r.as_ref());
        }
        Self::from_centers(dim, centers)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centers(&self) -> &[f32] {
        &self.centers
    }

    pub(crate) fn centers_mut(&mut self) -> &mut [f32] {
        &mut self.centers
    }

    pub fn center(&self, i: usize) -> &[f32] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub(crate) fn counts_mut(&mut self) -> &mut [u64] {
        &mut self.counts
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn set_tag(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    pub fn id(&self) -> CodebookId {
        CodebookId::of_centers(&self.centers)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FIXED_HEADER + self.k * 8 + self.centers.len() * 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for c in &self.counts {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for v in &self.centers {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses the binary part of a codebook file. Tags are not part of it.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::CodebookFormat(msg);
        if bytes.len() < FIXED_HEADER {
            return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let k = u32_at(8) as usize;
        let dim = u32_at(12) as usize;
        let seed = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        if k == 0 || dim == 0 {
            return Err(bad(format!("k={k}, dim={dim}; both must be positive")));
        }
        let expected = k
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(k * 8))
            .and_then(|n| n.checked_add(FIXED_HEADER))
            .ok_or_else(|| bad(format!("k={k} x dim={dim} overflows")))?;
        if bytes.len() != expected {
            return Err(bad(format!(
                "file is {} bytes, k={k} dim={dim} needs {expected}",
                bytes.len()
            )));
        }
        let counts_end = FIXED_HEADER + k * 8;
        let counts = bytes[FIXED_HEADER..counts_end]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let centers = bytes[counts_end..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Codebook::new(dim, centers, counts, seed).map_err(|e| bad(e.to_string()))
    }

    /// Writes the codebook file and its metadata sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_file(path, &self.to_bytes())?;
        let sidecar = CodebookSidecar {
            codebook_id: self.id(),
            k: self.k,
            dim: self.dim,
            tags: self.meta.clone(),
        };
        let mut json = serde_json::to_vec_pretty(&sidecar)?;
        json.push(b'\n');
        write_file(&sidecar_path(path), &json)
    }

    /// Reads a codebook file, plus its sidecar tags when one exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut codebook = Self::from_bytes(&read_file(path)?).map_err(|e| e.in_file(path))?;
        let meta_path = sidecar_path(path);
        if meta_path.exists() {
            let sidecar = CodebookSidecar::from_json(&read_file(&meta_path)?)
                .map_err(|e| e.in_file(&meta_path))?;
            if sidecar.codebook_id != codebook.id() {
                return Err(Error::CodebookMismatch {
                    expected: sidecar.codebook_id.to_string(),
                    found: codebook.id().to_string(),
                }
                .in_file(&meta_path));
            }
            codebook.meta = sidecar.tags;
        }
        Ok(codebook)
    }
}

/// JSON sidecar written beside a codebook file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookSidecar {
    pub codebook_id: CodebookId,
    pub k: usize,
    pub dim: usize,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

impl CodebookSidecar {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

/// `<path>.meta.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}
