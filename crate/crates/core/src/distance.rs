//! Nearest-center search and pairwise center distances.
//!
//! Assignment screens all centers with the expansion
//! `‖x − c‖² = ‖x‖² − 2x·c + ‖c‖²`, computing the `x·c` block with an `f32`
//! GEMM over fixed-size frame chunks. Every center whose screened value lies
//! within the rounding-error bound of the best one is then re-scored exactly
//! in `f64`, so the returned index is the true argmin (lowest index on ties)
//! and never depends on chunking or thread count.

use rayon::prelude::*;

/// Frames per GEMM chunk. Fixed so results never depend on the thread count.
const CHUNK_ROWS: usize = 128;
/// Above this magnitude the f32 expansion may overflow; fall back to exact.
const FAST_PATH_LIMIT: f64 = 1e15;
const BLOCK: usize = 64;

/// Squared Euclidean distance accumulated in `f64`.
#[inline]
pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            let d = f64::from(x[l]) - f64::from(y[l]);
            acc[l] += d * d;
        }
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = f64::from(*x) - f64::from(*y);
        acc[0] += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Squared distance in `f32`, for k-means++ weights where speed matters
/// more than the last bits.
#[inline]
pub(crate) fn sq_dist_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = x - y;
        tail += d * d;
    }
    acc.iter().sum::<f32>() + tail
}

fn norm_sq(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum()
}

/// Centers prepared for repeated nearest-center queries.
pub(crate) struct CenterIndex<'a> {
    centers: &'a [f32],
    dim: usize,
    k: usize,
    norms_sq: Vec<f32>,
    max_norm: f64,
}

impl<'a> CenterIndex<'a> {
    pub(crate) fn new(centers: &'a [f32], dim: usize) -> Self {
        let norms: Vec<f64> = centers.chunks_exact(dim).map(norm_sq).collect();
        let max_norm = norms.iter().copied().fold(0.0f64, f64::max).sqrt();
        Self {
            centers,
            dim,
            k: norms.len(),
            norms_sq: norms.iter().map(|&n| n as f32).collect(),
            max_norm,
        }
    }

    /// Nearest center index and exact squared distance for every row of
    /// `data`, written into `indices` / `sq_dists`.
    pub(crate) fn assign(&self, data: &[f32], indices: &mut [u32], sq_dists: &mut [f64]) {
        let dim = self.dim;
        debug_assert_eq!(data.len(), indices.len() * dim);
        data.par_chunks(CHUNK_ROWS * dim)
            .zip(indices.par_chunks_mut(CHUNK_ROWS))
            .zip(sq_dists.par_chunks_mut(CHUNK_ROWS))
            .for_each_init(Vec::new, |scratch, ((rows, idx), dist)| {
                self.assign_chunk(rows, idx, dist, scratch)
            });
    }

    fn assign_chunk(&self, rows: &[f32], idx: &mut [u32], dist: &mut [f64], dots: &mut Vec<f32>) {
        let (dim, k) = (self.dim, self.k);
        let m = idx.len();
        dots.clear();
        dots.resize(m * k, 0.0);
        // dots = rows (m × dim) · centersᵀ (dim × k)
        unsafe {
            matrixmultiply::sgemm(
                m,
                dim,
                k,
                1.0,
                rows.as_ptr(),
                dim as isize,
                1,
                self.centers.as_ptr(),
                1,
                dim as isize,
                0.0,
                dots.as_mut_ptr(),
                k as isize,
                1,
            );
        }
        // Forward error of each screened value ‖c‖² − 2x·c is at most
        // (dim + 3)·u·(‖x‖ + ‖c‖)²; EPSILON = 2u leaves a factor of two.
        let gamma = (dim as f64 + 4.0) * f64::from(f32::EPSILON);
        for (r, row) in rows.chunks_exact(dim).enumerate() {
            let reach = norm_sq(row).sqrt() + self.max_norm;
            let (best, best_sq) = if reach < FAST_PATH_LIMIT {
                let screened = &mut dots[r * k..(r + 1) * k];
                let mut lowest = f32::INFINITY;
                for (j, d) in screened.iter_mut().enumerate() {
                    *d = self.norms_sq[j] - 2.0 * *d;
                    lowest = lowest.min(*d);
                }
                let threshold = f64::from(lowest) + 2.0 * gamma * reach * reach;
                self.refine(row, screened.iter().map(|&s| f64::from(s) <= threshold))
            } else {
                self.refine(row, std::iter::repeat_n(true, k))
            };
            idx[r] = best as u32;
            dist[r] = best_sq;
        }
    }

    /// Exact argmin over the candidate centers, lowest index on ties.
    fn refine(&self, row: &[f32], candidates: impl Iterator<Item = bool>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (j, keep) in candidates.enumerate() {
            if keep {
                let d = sq_dist(row, &self.centers[j * self.dim..(j + 1) * self.dim]);
                if d < best.1 || best.0 == usize::MAX {
                    best = (j, d);
                }
            }
        }
        best
    }
}

/// For every center, the Euclidean distance to its nearest other center.
/// Requires `k >= 2`. Computed in `BLOCK × BLOCK` tiles.
pub(crate) fn nearest_neighbor_distances(centers: &[f32], dim: usize) -> Vec<f64> {
    let k = centers.len() / dim;
    let mut out = vec![f64::INFINITY; k];
    out.par_chunks_mut(BLOCK).enumerate().for_each(|(bi, nn)| {
        let i0 = bi * BLOCK;
        for j0 in (0..k).step_by(BLOCK) {
            let j1 = (j0 + BLOCK).min(k);
            for (di, best) in nn.iter_mut().enumerate() {
                let i = i0 + di;
                let a = &centers[i * dim..(i + 1) * dim];
                for j in j0..j1 {
                    if j != i {
                        let d = sq_dist(a, &centers[j * dim..(j + 1) * dim]);
                        if d < *best {
                            *best = d;
                        }
                    }
                }
            }
        }
    });
    out.iter_mut().for_each(|d| *d = d.sqrt());
    out
}

/// Euclidean distances of all unordered center pairs, row-major upper triangle.
pub(crate) fn all_pair_distances(centers: &[f32], dim: usize) -> Vec<f64> {
    let k = centers.len() / dim;
    (0..k)
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = &centers[i * dim..(i + 1) * dim];
            (i + 1..k).map(move |j| sq_dist(a, &centers[j * dim..(j + 1) * dim]).sqrt())
        })
        .collect()
}
