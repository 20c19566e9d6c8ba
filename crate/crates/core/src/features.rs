//! Frame-level feature matrices, F0 tracks and speaker embeddings, and their
//! `.npy` load/save routines.
//!
//! Everything is validated at load time; a value that made it into one of
//! these types is finite and has a consistent shape.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::npy;

/// `n_frames × dim` row-major `f32` features, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(n_frames: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("feature dimension must be positive".into()));
        }
        if n_frames.checked_mul(dim) != Some(data.len()) {
            return Err(Error::LengthMismatch(format!(
                "{} values cannot form a {n_frames}x{dim} matrix",
                data.len()
            )));
        }
        check_finite(&data, dim)?;
        Ok(Self {
            n_frames,
            dim,
            data,
        })
    }

    /// A matrix with no frames.
    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(0, dim, Vec::new())
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or(Error::Empty("no rows"))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, data)
    }

    // Used by code that has already validated its values.
    pub(crate) fn from_trusted(n_frames: usize, dim: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(n_frames * dim, data.len());
        Self {
            n_frames,
            dim,
            data,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.n_frames == 0
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        npy::encode_f32(&[self.n_frames, self.dim], &self.data)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (shape, data) = npy::decode_f32(bytes)?;
        match shape[..] {
            [n_frames, dim] => Self::new(n_frames, dim, data),
            _ => Err(Error::Shape {
                expected: "2",
                found: shape,
            }),
        }
    }
}

/// Per-frame fundamental frequency in Hz; `0` marks an unvoiced frame.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    hz: Vec<f32>,
}

impl F0Track {
    pub fn new(hz: Vec<f32>) -> Result<Self> {
        for (frame, &value) in hz.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { frame, column: 0 });
            }
            if value < 0.0 {
                return Err(Error::NegativeF0 { frame, value });
            }
        }
        Ok(Self { hz })
    }

    pub(crate) fn from_trusted(hz: Vec<f32>) -> Self {
        Self { hz }
    }

    pub fn n_frames(&self) -> usize {
        self.hz.len()
    }

    pub fn hz(&self) -> &[f32] {
        &self.hz
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.hz
    }

    pub fn voiced_frames(&self) -> usize {
        self.hz.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        npy::encode_f32(&[self.hz.len()], &self.hz)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (shape, data) = npy::decode_f32(bytes)?;
        if shape.len() != 1 {
            return Err(Error::Shape {
                expected: "1",
                found: shape,
            });
        }
        Self::new(data)
    }
}

/// Fixed-length speaker vector from an external speaker encoder.
///
/// The all-zeros vector is allowed: it is the "empty speaker" sentinel and is
/// rejected only where a direction is required (cosine similarity).
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    values: Vec<f32>,
}

impl SpeakerEmbedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("speaker embedding dimension must be positive".into()));
        }
        check_finite(&values, values.len())?;
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_empty_speaker(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        npy::encode_f32(&[self.values.len()], &self.values)
    }

    /// Accepts `(D,)` or `(1, D)` arrays.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut all = embeddings_from_bytes(bytes)?;
        if all.len() != 1 {
            return Err(Error::Invalid(format!(
                "expected a single embedding, file holds {}",
                all.len()
            )));
        }
        Ok(all.remove(0))
    }
}

/// Decodes one embedding per row of an `(N, D)` array, or a single `(D,)` vector.
pub fn embeddings_from_bytes(bytes: &[u8]) -> Result<Vec<SpeakerEmbedding>> {
    let (shape, data) = npy::decode_f32(bytes)?;
    match shape[..] {
        [_] => Ok(vec![SpeakerEmbedding::new(data)?]),
        [_, dim] if dim > 0 => data
            .chunks_exact(dim)
            .map(|row| SpeakerEmbedding::new(row.to_vec()))
            .collect(),
        _ => Err(Error::Shape {
            expected: "1 or 2",
            found: shape,
        }),
    }
}

fn check_finite(data: &[f32], dim: usize) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFinite {
            frame: i / dim,
            column: i % dim,
        }),
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    FeatureMatrix::from_bytes(&read_file(path)?).map_err(|e| e.in_file(path))
}

pub fn save_matrix(matrix: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    npy::write_f32(&mut w, &[matrix.n_frames, matrix.dim], &matrix.data)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_f0(path: impl AsRef<Path>) -> Result<F0Track> {
    let path = path.as_ref();
    F0Track::from_bytes(&read_file(path)?).map_err(|e| e.in_file(path))
}

pub fn save_f0(track: &F0Track, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &track.to_bytes())
}

pub fn load_embedding(path: impl AsRef<Path>) -> Result<SpeakerEmbedding> {
    let path = path.as_ref();
    SpeakerEmbedding::from_bytes(&read_file(path)?).map_err(|e| e.in_file(path))
}

/// Loads every embedding stored in a file (one per row for 2-D arrays).
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Vec<SpeakerEmbedding>> {
    let path = path.as_ref();
    embeddings_from_bytes(&read_file(path)?).map_err(|e| e.in_file(path))
}

pub fn save_embedding(embedding: &SpeakerEmbedding, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &embedding.to_bytes())
}
