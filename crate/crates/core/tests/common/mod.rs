//! Reference implementations used as test oracles. Deliberately naive:
//! plain loops, f64 throughout, no shared code with the library.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use svcq::features::save_matrix;
use svcq::{FeatureMatrix, ShardManifest};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sq(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

pub fn dist(a: &[f32], b: &[f32]) -> f64 {
    sq(a, b).sqrt()
}

/// Exhaustive nearest center; the lowest index wins ties.
pub fn brute_nearest(x: &[f32], centers: &[f32], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centers.chunks_exact(dim).enumerate() {
        let d = sq(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// One Lloyd step: every center becomes the mean of its members. Centers
/// with no members stay where they are.
pub fn lloyd_step(data: &[f32], centers: &[f32], dim: usize) -> Vec<f64> {
    let k = centers.len() / dim;
    let mut sums = vec![0f64; k * dim];
    let mut counts = vec![0usize; k];
    for x in data.chunks_exact(dim) {
        let (c, _) = brute_nearest(x, centers, dim);
        counts[c] += 1;
        for j in 0..dim {
            sums[c * dim + j] += x[j] as f64;
        }
    }
    (0..k * dim)
        .map(|i| {
            let c = i / dim;
            if counts[c] == 0 {
                centers[i] as f64
            } else {
                sums[i] / counts[c] as f64
            }
        })
        .collect()
}

pub fn brute_amd(data: &[f32], centers: &[f32], dim: usize) -> f64 {
    let n = data.len() / dim;
    data.chunks_exact(dim).map(|x| brute_nearest(x, centers, dim).1.sqrt()).sum::<f64>() / n as f64
}

pub fn brute_pair_distances(centers: &[f32], dim: usize) -> Vec<f64> {
    let rows: Vec<&[f32]> = centers.chunks_exact(dim).collect();
    let mut out = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            out.push(dist(rows[i], rows[j]));
        }
    }
    out
}

pub fn brute_mdc(centers: &[f32], dim: usize) -> f64 {
    brute_pair_distances(centers, dim).into_iter().fold(f64::INFINITY, f64::min)
}

pub fn brute_nn(centers: &[f32], dim: usize) -> Vec<f64> {
    let rows: Vec<&[f32]> = centers.chunks_exact(dim).collect();
    (0..rows.len())
        .map(|i| {
            (0..rows.len())
                .filter(|&j| j != i)
                .map(|j| dist(rows[i], rows[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Sorts fully, then takes rank `floor(p·(n−1))`.
pub fn brute_qdc(centers: &[f32], dim: usize, p: f64) -> f64 {
    let mut nn = brute_nn(centers, dim);
    nn.sort_by(f64::total_cmp);
    nn[(p * (nn.len() - 1) as f64).floor() as usize]
}

/// Integer-Hz mode of the voiced frames, smallest bin on ties.
pub fn brute_mode(hz: &[f32]) -> f32 {
    let mut counts = std::collections::BTreeMap::<i64, usize>::new();
    for &f in hz.iter().filter(|&&f| f > 0.0) {
        *counts.entry((f as f64).round() as i64).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap();
    *counts.iter().find(|(_, &c)| c == best).unwrap().0 as f32
}

pub fn brute_cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn uniform(n: usize, dim: usize, r: &mut impl Rng) -> FeatureMatrix {
    let data = (0..n * dim).map(|_| r.random_range(-10.0f32..10.0)).collect();
    FeatureMatrix::new(n, dim, data).unwrap()
}

pub fn normal_vec(n: usize, r: &mut impl Rng) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

/// Gaussian mixture: `components` means in [-scale, scale]^dim, unit noise.
pub struct Mixture {
    pub dim: usize,
    pub means: Vec<f32>,
    pub sigma: f32,
}

impl Mixture {
    pub fn new(components: usize, dim: usize, scale: f32, sigma: f32, r: &mut impl Rng) -> Self {
        let means = (0..components * dim).map(|_| r.random_range(-scale..scale)).collect();
        Self { dim, means, sigma }
    }

    pub fn components(&self) -> usize {
        self.means.len() / self.dim
    }

    pub fn sample(&self, n: usize, r: &mut impl Rng) -> (FeatureMatrix, Vec<usize>) {
        let noise = Normal::new(0.0f32, self.sigma).unwrap();
        let mut data = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let c = r.random_range(0..self.components());
            labels.push(c);
            let m = &self.means[c * self.dim..(c + 1) * self.dim];
            data.extend(m.iter().map(|&v| v + noise.sample(r)));
        }
        (FeatureMatrix::new(n, self.dim, data).unwrap(), labels)
    }
}

/// Writes `data` as `shards` npy files plus a manifest in `dir`.
pub fn write_shards(dir: &Path, data: &FeatureMatrix, shards: usize) -> (PathBuf, ShardManifest) {
    let dim = data.dim();
    let per = data.n_frames().div_ceil(shards);
    let mut listing = String::new();
    for (i, chunk) in data.as_slice().chunks(per * dim).enumerate() {
        let name = format!("shard{i:03}.npy");
        let m = FeatureMatrix::new(chunk.len() / dim, dim, chunk.to_vec()).unwrap();
        save_matrix(&m, dir.join(&name)).unwrap();
        listing.push_str(&name);
        listing.push('\n');
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, listing).unwrap();
    let manifest = ShardManifest::load(&path).unwrap();
    (path, manifest)
}
