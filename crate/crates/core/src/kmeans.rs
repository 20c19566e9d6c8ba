//! Mini-batch k-means at very large batch sizes.
//!
//! Each iteration assigns a batch to its nearest centers and blends every
//! center toward the mean of its assigned frames with a per-center learning
//! rate `η = n_c / (counts[c] + n_c)`. With zero counts and the whole dataset
//! as the batch this is exactly one Lloyd step.
//!
//! Results are bit-identical for any number of rayon worker threads.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use crate::codebook::Codebook;
use crate::distance::{self, CenterIndex};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::manifest::{BatchStream, ShardManifest};
use crate::seed::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMethod {
    #[default]
    KMeansPlusPlus,
    /// `k` distinct frames drawn uniformly.
    RandomSample,
}

/// What to do with a center that receives no frames in a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmptyCenterPolicy {
    /// Move it onto the batch frame farthest from its assigned center.
    #[default]
    ReseedFromBatch,
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainConfig {
    pub k: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub init: InitMethod,
    /// Frames sampled for initialization. Capped at the number available.
    pub init_subsample: usize,
    pub seed: u64,
    pub empty_center_policy: EmptyCenterPolicy,
}

impl TrainConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            batch_size: 65_536,
            iterations: 100,
            init: InitMethod::default(),
            init_subsample: k.max(100_000),
            seed: 0,
            empty_center_policy: EmptyCenterPolicy::default(),
        }
    }

    pub fn validate(&self, available_frames: u64) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.k > u32::MAX as usize {
            return Err(Error::Config(format!("k={} does not fit in a u32 token", self.k)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.init_subsample < self.k {
            return Err(Error::Config(format!(
                "init_subsample={} is smaller than k={}",
                self.init_subsample, self.k
            )));
        }
        if available_frames < self.k as u64 {
            return Err(Error::TooFewFrames {
                available: available_frames,
                k: self.k,
            });
        }
        Ok(())
    }
}

/// Nearest-center index and Euclidean distance for each frame of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub indices: Vec<u32>,
    pub distances: Vec<f64>,
}

impl Assignment {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Mean squared distance to the assigned centers.
    pub fn inertia(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.distances.iter().map(|d| d * d).sum::<f64>() / self.len() as f64
    }

    pub fn mean_distance(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.distances.iter().sum::<f64>() / self.len() as f64
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Maps every frame to its nearest center (lowest index on ties).
pub fn assign_batch(batch: &FeatureMatrix, codebook: &Codebook) -> Result<Assignment> {
    check_dim(codebook.dim(), batch.dim())?;
    let n = batch.n_frames();
    let mut indices = vec![0u32; n];
    let mut distances = vec![0f64; n];
    CenterIndex::new(codebook.centers(), codebook.dim()).assign(
        batch.as_slice(),
        &mut indices,
        &mut distances,
    );
    distances.par_iter_mut().for_each(|d| *d = d.sqrt());
    Ok(Assignment { indices, distances })
}

/// Chooses `config.k` distinct initial centers from a seeded subsample of
/// at most `config.init_subsample` frames. Counts start at zero.
pub fn init_centers(data: &FeatureMatrix, config: &TrainConfig) -> Result<Codebook> {
    config.validate(data.n_frames() as u64)?;
    let dim = data.dim();
    let n = data.n_frames();

    let rows: Vec<usize> = if n > config.init_subsample {
        let mut rng = seed::rng(config.seed, Purpose::InitSubsample, 0);
        let mut picked = index::sample(&mut rng, n, config.init_subsample).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..n).collect()
    };

    let mut rng = seed::rng(config.seed, Purpose::InitSelect, 0);
    let chosen = match config.init {
        InitMethod::RandomSample => random_sample(data, &rows, config.k, &mut rng)?,
        InitMethod::KMeansPlusPlus => kmeans_plus_plus(data, &rows, config.k, &mut rng)?,
    };
    let mut centers = Vec::with_capacity(config.k * dim);
    for r in chosen {
        centers.extend_from_slice(data.row(r));
    }
    Codebook::new(dim, centers, vec![0; config.k], config.seed)
}

fn row_key(row: &[f32]) -> Vec<u32> {
    // -0.0 and 0.0 are the same point
    row.iter().map(|&v| if v == 0.0 { 0 } else { v.to_bits() }).collect()
}

fn count_distinct(data: &FeatureMatrix, rows: &[usize]) -> usize {
    rows.iter()
        .map(|&r| row_key(data.row(r)))
        .collect::<HashSet<_>>()
        .len()
}

fn random_sample(data: &FeatureMatrix, rows: &[usize], k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let mut order = rows.to_vec();
    order.shuffle(rng);
    let mut seen = HashSet::with_capacity(k);
    let mut chosen = Vec::with_capacity(k);
    for r in order {
        if seen.insert(row_key(data.row(r))) {
            chosen.push(r);
            if chosen.len() == k {
                return Ok(chosen);
            }
        }
    }
    Err(Error::TooFewDistinctFrames {
        distinct: chosen.len(),
        k,
    })
}

fn kmeans_plus_plus(data: &FeatureMatrix, rows: &[usize], k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let mut chosen = Vec::with_capacity(k);
    let first = rows[rng.random_range(0..rows.len())];
    chosen.push(first);
    let mut weights: Vec<f64> = vec![f64::INFINITY; rows.len()];
    let mut latest = first;
    while chosen.len() < k {
        let c = data.row(latest);
        weights.par_iter_mut().zip(rows.par_iter()).for_each(|(w, &r)| {
            let d = f64::from(distance::sq_dist_f32(data.row(r), c));
            if d < *w {
                *w = d;
            }
        });
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::TooFewDistinctFrames {
                distinct: count_distinct(data, rows),
                k,
            });
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        // pick is set: total > 0 means some weight is positive
        latest = rows[pick.expect("positive weight")];
        chosen.push(latest);
    }
    Ok(chosen)
}

/// Summary of one [`minibatch_update`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UpdateStats {
    /// Centers that received at least one frame.
    pub updated: usize,
    /// Empty centers moved onto batch frames.
    pub reseeded: usize,
}

/// Blends each center toward the mean of its assigned batch frames.
///
/// For a center with `n_c` assigned frames and batch mean `m_c`,
/// `center ← (1 − η)·center + η·m_c` with `η = n_c / (counts[c] + n_c)`, then
/// `counts[c] += n_c`. Sums are accumulated in `f64`. Centers with no frames
/// are left alone or reseeded according to `policy`; reseeding keeps the
/// center's count so the count total always equals the frames consumed.
pub fn minibatch_update(
    codebook: &mut Codebook,
    batch: &FeatureMatrix,
    assignment: &Assignment,
    policy: EmptyCenterPolicy,
) -> Result<UpdateStats> {
    check_dim(codebook.dim(), batch.dim())?;
    if assignment.len() != batch.n_frames() {
        return Err(Error::LengthMismatch(format!(
            "assignment covers {} frames, batch has {}",
            assignment.len(),
            batch.n_frames()
        )));
    }
    let (k, dim) = (codebook.k(), codebook.dim());
    if let Some(&bad) = assignment.indices.iter().find(|&&i| i as usize >= k) {
        return Err(Error::Invalid(format!("assignment index {bad} >= k={k}")));
    }

    // Bucket frame indices by center, ascending within each bucket.
    let mut starts = vec![0usize; k + 1];
    for &c in &assignment.indices {
        starts[c as usize + 1] += 1;
    }
    for c in 0..k {
        starts[c + 1] += starts[c];
    }
    let mut members = vec![0usize; assignment.len()];
    let mut fill = starts.clone();
    for (frame, &c) in assignment.indices.iter().enumerate() {
        members[fill[c as usize]] = frame;
        fill[c as usize] += 1;
    }

    let counts = codebook.counts().to_vec();
    codebook
        .centers_mut()
        .par_chunks_mut(dim)
        .enumerate()
        .for_each_init(
            || vec![0f64; dim],
            |sum, (c, center)| {
                let frames = &members[starts[c]..starts[c + 1]];
                if frames.is_empty() {
                    return;
                }
                sum.iter_mut().for_each(|s| *s = 0.0);
                for &f in frames {
                    for (s, &v) in sum.iter_mut().zip(batch.row(f)) {
                        *s += f64::from(v);
                    }
                }
                let n_c = frames.len() as f64;
                let eta = n_c / (counts[c] as f64 + n_c);
                for (x, s) in center.iter_mut().zip(sum.iter()) {
                    let mean = s / n_c;
                    *x = ((1.0 - eta) * f64::from(*x) + eta * mean) as f32;
                }
            },
        );

    let mut stats = UpdateStats::default();
    let mut empty = Vec::new();
    for c in 0..k {
        let n_c = (starts[c + 1] - starts[c]) as u64;
        if n_c == 0 {
            empty.push(c);
        } else {
            codebook.counts_mut()[c] += n_c;
            stats.updated += 1;
        }
    }

    if policy == EmptyCenterPolicy::ReseedFromBatch && !empty.is_empty() && !batch.is_empty() {
        // Farthest frames first; ties by lower frame index.
        let mut order: Vec<usize> = (0..batch.n_frames()).collect();
        order.sort_by(|&a, &b| {
            assignment.distances[b]
                .total_cmp(&assignment.distances[a])
                .then(a.cmp(&b))
        });
        for (&c, &frame) in empty.iter().zip(order.iter()) {
            if assignment.distances[frame] <= 0.0 {
                // every remaining frame already sits on a center
                break;
            }
            codebook.centers_mut()[c * dim..(c + 1) * dim].copy_from_slice(batch.row(frame));
            stats.reseeded += 1;
        }
    }
    Ok(stats)
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// 1-based iteration number.
    pub iter: usize,
    /// Mean squared distance of the batch to its assigned centers, measured
    /// before the update.
    pub inertia: f64,
    pub frames_seen: u64,
    pub seconds: f64,
}

impl IterationRecord {
    pub const CSV_HEADER: &'static str = "iter,inertia,frames_seen,seconds";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{}",
            self.iter,
            crate::fmt::significant(self.inertia, 6),
            self.frames_seen,
            crate::fmt::significant(self.seconds, 6)
        )
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub codebook: Codebook,
    pub log: Vec<IterationRecord>,
}

/// The codebook [`train`] starts from: [`init_centers`] over a seeded
/// subsample of `init_subsample` frames.
pub fn initial_codebook(manifest: &ShardManifest, config: &TrainConfig) -> Result<Codebook> {
    config.validate(manifest.total_frames())?;
    let subsample_len = (config.init_subsample as u64).min(manifest.total_frames()) as usize;
    let init_seed = config.seed ^ 0x1A17_5EED;
    let subsample = BatchStream::cycling(manifest, subsample_len, init_seed)?
        .next()
        .expect("cycling stream over a non-empty manifest")?;
    init_centers(&subsample, config)
}

/// Trains a codebook over the frames of `manifest`.
pub fn train(manifest: &ShardManifest, config: &TrainConfig) -> Result<Trained> {
    train_with_progress(manifest, config, |_| {})
}

/// [`train`], calling `progress` after every iteration.
pub fn train_with_progress(
    manifest: &ShardManifest,
    config: &TrainConfig,
    mut progress: impl FnMut(&IterationRecord),
) -> Result<Trained> {
    let started = Instant::now();
    let mut codebook = initial_codebook(manifest, config)?;

    let mut batches = BatchStream::cycling(manifest, config.batch_size, config.seed)?;
    let mut log = Vec::with_capacity(config.iterations);
    let mut frames_seen = 0u64;
    for iter in 1..=config.iterations {
        let batch = batches.next().expect("cycling stream is endless")?;
        let assignment = assign_batch(&batch, &codebook)?;
        minibatch_update(&mut codebook, &batch, &assignment, config.empty_center_policy)?;
        frames_seen += batch.n_frames() as u64;
        let record = IterationRecord {
            iter,
            inertia: assignment.inertia(),
            frames_seen,
            seconds: started.elapsed().as_secs_f64(),
        };
        progress(&record);
        log.push(record);
    }
    Ok(Trained { codebook, log })
}
