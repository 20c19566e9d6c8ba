//! Sharded feature collections and seeded batch streaming.
//!
//! A manifest is a UTF-8 text file listing one `.npy` feature shard per line,
//! relative to the manifest's directory. Batches are drawn by a seeded global
//! permutation of frame indices; shards are read lazily, in windows, so a
//! batch never holds more than its own frames plus one read window.

use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::npy::{self, ElementType};
use crate::seed::{self, Purpose};

/// Upper bound on a single shard read.
const READ_WINDOW_BYTES: usize = 8 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardEntry {
    pub path: PathBuf,
    pub n_frames: usize,
    pub dim: usize,
    /// Byte offset of the first frame within the file.
    pub data_offset: u64,
}

impl ShardEntry {
    /// Reads and checks the header of a feature shard.
    pub fn probe(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let header = npy::read_header(&mut BufReader::new(file)).map_err(|e| e.in_file(&path))?;
        let check = || -> Result<(usize, usize)> {
            if header.element_type != ElementType::F32 {
                return Err(Error::UnsupportedElementType(header.element_type.descr().into()));
            }
            let (n_frames, dim) = match header.shape[..] {
                [n, d] => (n, d),
                _ => {
                    return Err(Error::Shape {
                        expected: "2",
                        found: header.shape.clone(),
                    })
                }
            };
            if dim == 0 {
                return Err(Error::Invalid("feature dimension must be positive".into()));
            }
            let payload = header.payload_len()? as u64;
            let found = file_len.saturating_sub(header.data_offset as u64);
            if found != payload {
                return Err(Error::Payload {
                    expected: payload,
                    found,
                });
            }
            Ok((n_frames, dim))
        };
        let (n_frames, dim) = check().map_err(|e| e.in_file(&path))?;
        Ok(Self {
            path,
            n_frames,
            dim,
            data_offset: header.data_offset as u64,
        })
    }
}

/// Ordered list of feature shards sharing one dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardManifest {
    entries: Vec<ShardEntry>,
    /// `starts[i]` is the global index of shard `i`'s first frame.
    starts: Vec<u64>,
    total_frames: u64,
    dim: usize,
}

impl ShardManifest {
    pub fn new(entries: Vec<ShardEntry>) -> Result<Self> {
        let dim = entries
            .first()
            .map(|e| e.dim)
            .ok_or_else(|| Error::Manifest("no shards listed".into()))?;
        let mut starts = Vec::with_capacity(entries.len());
        let mut total = 0u64;
        for e in &entries {
            if e.dim != dim {
                return Err(Error::Manifest(format!(
                    "{} has dim {}, expected {dim}",
                    e.path.display(),
                    e.dim
                )));
            }
            starts.push(total);
            total += e.n_frames as u64;
        }
        Ok(Self {
            entries,
            starts,
            total_frames: total,
            dim,
        })
    }

    /// Probes each shard's header; the shards are not read.
    pub fn from_paths<P: Into<PathBuf>>(paths: impl IntoIterator<Item = P>) -> Result<Self> {
        let entries = paths
            .into_iter()
            .map(ShardEntry::probe)
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    /// Loads a manifest file. Relative shard paths resolve against the
    /// manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = std::str::from_utf8(&text)
            .map_err(|_| Error::Manifest("not UTF-8".into()).in_file(path))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let lines = parse_manifest(text).map_err(|e| e.in_file(path))?;
        Self::from_paths(lines.into_iter().map(|p| base.join(p)))
    }

    pub fn entries(&self) -> &[ShardEntry] {
        &self.entries
    }

    pub fn total_frames(&self) -> u64 {
        self.total_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Shard index and local row for a global frame index.
    fn locate(&self, global: u64) -> (usize, usize) {
        let shard = self.starts.partition_point(|&s| s <= global) - 1;
        (shard, (global - self.starts[shard]) as usize)
    }
}

/// Splits manifest text into shard paths. Blank lines and lines starting
/// with `#` are skipped; surrounding whitespace is trimmed.
pub fn parse_manifest(text: &str) -> Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(PathBuf::from)
        .collect();
    if paths.is_empty() {
        return Err(Error::Manifest("no shards listed".into()));
    }
    Ok(paths)
}

/// The frame order for one epoch: a seeded permutation of `0..total`.
pub fn epoch_permutation(total: u64, seed: u64, epoch: u64) -> Vec<u64> {
    let mut order: Vec<u64> = (0..total).collect();
    order.shuffle(&mut seed::rng(seed, Purpose::Shuffle, epoch));
    order
}

/// One epoch of batches. Every frame appears exactly once; all batches hold
/// `batch_size` frames except possibly the last.
pub fn stream_batches(manifest: &ShardManifest, batch_size: usize, seed: u64) -> Result<BatchStream<'_>> {
    BatchStream::new(manifest, batch_size, seed, false)
}

/// Single-consumer iterator over shuffled batches.
pub struct BatchStream<'a> {
    manifest: &'a ShardManifest,
    batch_size: usize,
    seed: u64,
    cycle: bool,
    epoch: u64,
    order: Vec<u64>,
    pos: usize,
    window: Vec<u8>,
    failed: bool,
}

impl<'a> BatchStream<'a> {
    fn new(manifest: &'a ShardManifest, batch_size: usize, seed: u64, cycle: bool) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(Self {
            manifest,
            batch_size,
            seed,
            cycle,
            epoch: 0,
            order: epoch_permutation(manifest.total_frames, seed, 0),
            pos: 0,
            window: Vec::new(),
            failed: false,
        })
    }

    /// Endless stream: each epoch is a fresh permutation.
    pub fn cycling(manifest: &'a ShardManifest, batch_size: usize, seed: u64) -> Result<Self> {
        Self::new(manifest, batch_size, seed, true)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn gather(&mut self, frames: &[u64]) -> Result<FeatureMatrix> {
        let dim = self.manifest.dim;
        let row_bytes = dim * 4;
        let mut data = vec![0f32; frames.len() * dim];

        let mut wanted: Vec<(u64, usize)> = frames.iter().copied().zip(0..).collect();
        wanted.sort_unstable();

        let window_rows = (READ_WINDOW_BYTES / row_bytes).max(1);
        let mut i = 0;
        while i < wanted.len() {
            let (shard_idx, _) = self.manifest.locate(wanted[i].0);
            let shard = &self.manifest.entries[shard_idx];
            let shard_start = self.manifest.starts[shard_idx];
            let shard_end = shard_start + shard.n_frames as u64;
            let mut file = File::open(&shard.path).map_err(|e| Error::io(&shard.path, e))?;

            while i < wanted.len() && wanted[i].0 < shard_end {
                let first = (wanted[i].0 - shard_start) as usize;
                let rows = window_rows.min(shard.n_frames - first);
                self.window.resize(rows * row_bytes, 0);
                file.seek(SeekFrom::Start(shard.data_offset + (first * row_bytes) as u64))
                    .and_then(|_| file.read_exact(&mut self.window))
                    .map_err(|e| Error::io(&shard.path, e))?;
                let window_end = shard_start + (first + rows) as u64;
                while i < wanted.len() && wanted[i].0 < window_end {
                    let (global, slot) = wanted[i];
                    let local = (global - shard_start) as usize;
                    let src = &self.window[(local - first) * row_bytes..][..row_bytes];
                    let dst = &mut data[slot * dim..(slot + 1) * dim];
                    for (col, (d, b)) in dst.iter_mut().zip(src.chunks_exact(4)).enumerate() {
                        *d = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                        if !d.is_finite() {
                            return Err(Error::NonFinite { frame: local, column: col }.in_file(&shard.path));
                        }
                    }
                    i += 1;
                }
            }
        }
        Ok(FeatureMatrix::from_trusted(frames.len(), dim, data))
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Result<FeatureMatrix>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.order.is_empty() {
            return None;
        }
        if self.pos >= self.order.len() {
            if !self.cycle {
                return None;
            }
            self.epoch += 1;
            self.order = epoch_permutation(self.manifest.total_frames, self.seed, self.epoch);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let frames = std::mem::take(&mut self.order);
        let batch = self.gather(&frames[self.pos..end]);
        self.order = frames;
        self.pos = end;
        if batch.is_err() {
            self.failed = true;
        }
        Some(batch)
    }
}
