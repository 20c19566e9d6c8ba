mod common;

use std::collections::HashSet;

use common::*;
use svcq::kmeans::{
    assign_batch, init_centers, initial_codebook, minibatch_update, train, EmptyCenterPolicy, InitMethod,
    TrainConfig,
};
use svcq::npy;
use svcq::manifest::{epoch_permutation, stream_batches, BatchStream};
use svcq::{decode, encode, quantization_error, Codebook, Error, FeatureMatrix, ShardManifest};
use tempfile::TempDir;

fn config(k: usize, batch_size: usize, iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size,
        iterations,
        seed,
        ..TrainConfig::new(k)
    }
}

fn row_key(row: &[f32]) -> Vec<u32> {
    row.iter().map(|v| v.to_bits()).collect()
}

/// Frame `i` holds the value `i` in every column so frames are identifiable.
fn numbered(n: usize, dim: usize) -> FeatureMatrix {
    let data = (0..n).flat_map(|i| std::iter::repeat_n(i as f32, dim)).collect();
    FeatureMatrix::new(n, dim, data).unwrap()
}

#[test]
fn batch_sizes_partition_an_epoch() {
    let dir = TempDir::new().unwrap();
    let (_, m) = write_shards(dir.path(), &numbered(10, 3), 3);
    let sizes: Vec<usize> = stream_batches(&m, 4, 1).unwrap().map(|b| b.unwrap().n_frames()).collect();
    assert_eq!(sizes, [4, 4, 2]);
}

#[test]
fn one_batch_over_two_shards_follows_the_permutation() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let all = numbered(8, 2);
    svcq::features::save_matrix(&FeatureMatrix::new(3, 2, all.as_slice()[..6].to_vec()).unwrap(), d.join("a.npy"))
        .unwrap();
    svcq::features::save_matrix(&FeatureMatrix::new(5, 2, all.as_slice()[6..].to_vec()).unwrap(), d.join("b.npy"))
        .unwrap();
    let m = ShardManifest::from_paths([d.join("a.npy"), d.join("b.npy")]).unwrap();
    let batches: Vec<FeatureMatrix> = stream_batches(&m, 8, 42).unwrap().map(Result::unwrap).collect();
    assert_eq!(batches.len(), 1);
    let order = epoch_permutation(8, 42, 0);
    let mut sorted = order.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..8).collect::<Vec<u64>>());
    for (row, &frame) in batches[0].rows().zip(&order) {
        assert_eq!(row, all.row(frame as usize));
    }
}

#[test]
fn every_frame_once_per_epoch_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let data = numbered(1037, 5);
    let (_, m) = write_shards(dir.path(), &data, 7);
    for batch_size in [1, 10, 100, 1037, 5000] {
        let collect = |seed| -> Vec<Vec<u32>> {
            stream_batches(&m, batch_size, seed)
                .unwrap()
                .flat_map(|b| b.unwrap().rows().map(row_key).collect::<Vec<_>>())
                .collect()
        };
        let a = collect(3);
        assert_eq!(a.len(), 1037);
        let unique: HashSet<_> = a.iter().cloned().collect();
        assert_eq!(unique.len(), 1037);
        assert_eq!(a, collect(3));
        if batch_size > 1 {
            assert_ne!(a, collect(4));
        }
    }
}

#[test]
fn cycling_stream_reshuffles_each_epoch() {
    let dir = TempDir::new().unwrap();
    let (_, m) = write_shards(dir.path(), &numbered(50, 2), 2);
    let mut s = BatchStream::cycling(&m, 20, 9).unwrap();
    let batches: Vec<FeatureMatrix> = (0..6).map(|_| s.next().unwrap().unwrap()).collect();
    // a batch never straddles two epochs
    assert_eq!(
        batches.iter().map(FeatureMatrix::n_frames).collect::<Vec<_>>(),
        [20, 20, 10, 20, 20, 10]
    );
    let epoch = |bs: &[FeatureMatrix]| -> Vec<u32> { bs.iter().flat_map(|b| b.rows().map(|r| r[0] as u32)).collect() };
    let (first, second) = (epoch(&batches[..3]), epoch(&batches[3..]));
    let mut sorted = first.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..50).collect::<Vec<u32>>());
    let mut sorted2 = second.clone();
    sorted2.sort_unstable();
    assert_eq!(sorted2, sorted);
    assert_ne!(first, second);
}

#[test]
fn corrupt_shard_reported_mid_stream() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    std::fs::write(d.join("good.npy"), npy::encode_f32(&[10, 2], &[1.0; 20])).unwrap();
    let mut bad = vec![2.0f32; 20];
    bad[11] = f32::NAN; // frame 5, column 1
    std::fs::write(d.join("bad.npy"), npy::encode_f32(&[10, 2], &bad)).unwrap();
    let m = ShardManifest::from_paths([d.join("good.npy"), d.join("bad.npy")]).unwrap();
    let mut stream = stream_batches(&m, 20, 0).unwrap();
    let msg = stream.next().unwrap().unwrap_err().to_string();
    assert!(msg.contains("bad.npy") && msg.contains("frame 5"), "{msg}");
    assert!(stream.next().is_none());
}

#[test]
fn random_sample_init_with_k_equal_n_is_a_permutation() {
    let data = numbered(25, 3);
    let cfg = TrainConfig {
        init: InitMethod::RandomSample,
        ..config(25, 25, 1, 5)
    };
    let cb = init_centers(&data, &cfg).unwrap();
    let mut got: Vec<Vec<u32>> = cb.centers().chunks(3).map(row_key).collect();
    let mut want: Vec<Vec<u32>> = data.rows().map(row_key).collect();
    got.sort();
    want.sort();
    assert_eq!(got, want);
    assert!(cb.counts().iter().all(|&c| c == 0));
}

#[test]
fn init_needs_enough_distinct_frames() {
    let data = FeatureMatrix::from_rows(&[[0.0f32, 0.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0]]).unwrap();
    for init in [InitMethod::KMeansPlusPlus, InitMethod::RandomSample] {
        let cfg = TrainConfig { init, ..config(3, 4, 1, 0) };
        assert!(matches!(
            init_centers(&data, &cfg),
            Err(Error::TooFewDistinctFrames { distinct: 2, k: 3 })
        ));
    }
}

#[test]
fn kmeans_plus_plus_splits_two_clouds() {
    let mut rows = vec![[0.0f32, 0.0]; 100];
    rows.extend(vec![[10.0f32, 10.0]; 100]);
    let data = FeatureMatrix::from_rows(&rows).unwrap();
    let mut ok = 0;
    for seed in 0..50 {
        let cb = init_centers(&data, &config(2, 200, 1, seed)).unwrap();
        if cb.center(0) != cb.center(1) {
            ok += 1;
        }
    }
    assert!(ok >= 48, "{ok}/50");
}

#[test]
fn recovers_three_separated_clouds() {
    let dir = TempDir::new().unwrap();
    let means = [[0.0f32, 0.0], [10.0, 0.0], [0.0, 10.0]];
    let mix = Mixture {
        dim: 2,
        means: means.concat(),
        sigma: 0.1,
    };
    let (data, _) = mix.sample(3000, &mut rng(1));
    let (_, m) = write_shards(dir.path(), &data, 3);
    let trained = train(&m, &config(3, 512, 50, 2)).unwrap();
    for mean in &means {
        let best = trained
            .codebook
            .centers()
            .chunks(2)
            .map(|c| dist(c, mean))
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.05, "{mean:?}: {best}");
    }
    assert_eq!(trained.log.len(), 50);
}

#[test]
fn one_full_batch_iteration_is_init_plus_lloyd() {
    let dir = TempDir::new().unwrap();
    let (data, _) = Mixture::new(6, 4, 5.0, 1.0, &mut rng(3)).sample(900, &mut rng(4));
    let (_, m) = write_shards(dir.path(), &data, 2);
    for init in [InitMethod::KMeansPlusPlus, InitMethod::RandomSample] {
        let cfg = TrainConfig {
            init,
            empty_center_policy: EmptyCenterPolicy::Keep,
            ..config(10, 900, 1, 8)
        };
        let start = initial_codebook(&m, &cfg).unwrap();
        let expected = lloyd_step(data.as_slice(), start.centers(), 4);
        let trained = train(&m, &cfg).unwrap().codebook;
        let scale = expected.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for (&got, &want) in trained.centers().iter().zip(&expected) {
            assert!((got as f64 - want).abs() <= 1e-5 * scale);
        }
    }
}

#[test]
fn full_batch_inertia_descends() {
    let dir = TempDir::new().unwrap();
    let (data, _) = Mixture::new(12, 3, 5.0, 1.0, &mut rng(7)).sample(1200, &mut rng(8));
    let (_, m) = write_shards(dir.path(), &data, 1);
    let cfg = TrainConfig {
        empty_center_policy: EmptyCenterPolicy::Keep,
        ..config(12, 1200, 15, 1)
    };
    let log = train(&m, &cfg).unwrap().log;
    // the full batch in a different order, so allow summation-order rounding
    assert!(log[1].inertia <= log[0].inertia * (1.0 + 1e-12));
    assert!(log.last().unwrap().inertia <= log[0].inertia);
}

#[test]
fn counts_equal_frames_consumed() {
    let dir = TempDir::new().unwrap();
    let (data, _) = Mixture::new(40, 4, 5.0, 1.0, &mut rng(9)).sample(1000, &mut rng(10));
    let (_, m) = write_shards(dir.path(), &data, 3);
    for policy in [EmptyCenterPolicy::ReseedFromBatch, EmptyCenterPolicy::Keep] {
        let cfg = TrainConfig {
            empty_center_policy: policy,
            ..config(64, 333, 17, 4)
        };
        let trained = train(&m, &cfg).unwrap();
        let last = trained.log.last().unwrap();
        // four iterations per epoch of 1000 frames: 333, 333, 333, 1
        assert_eq!(last.frames_seen, 4 * 1000 + 333);
        assert_eq!(trained.codebook.counts().iter().sum::<u64>(), last.frames_seen);
    }
}

#[test]
fn reseed_moves_empty_centers_onto_the_batch() {
    // center 1 is far from everything and gets no frames
    let mut cb = Codebook::from_rows(&[[0.0f32, 0.0], [1000.0, 1000.0], [5.0, 0.0]]).unwrap();
    let batch = FeatureMatrix::from_rows(&[[0.0f32, 0.1], [0.1, 0.0], [5.0, 0.2], [9.0, 9.0]]).unwrap();
    let a = assign_batch(&batch, &cb).unwrap();
    let stats = minibatch_update(&mut cb, &batch, &a, EmptyCenterPolicy::ReseedFromBatch).unwrap();
    assert_eq!(stats.reseeded, 1);
    assert_eq!(cb.center(1), &[9.0, 9.0]);
    assert_eq!(cb.counts().iter().sum::<u64>(), 4);
}

#[test]
fn identical_across_thread_counts_and_runs() {
    let dir = TempDir::new().unwrap();
    let (data, _) = Mixture::new(30, 16, 4.0, 1.0, &mut rng(21)).sample(6000, &mut rng(22));
    let (_, m) = write_shards(dir.path(), &data, 4);
    let cfg = config(48, 1500, 8, 77);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&m, &cfg).unwrap().codebook.to_bytes())
    };
    let one = run(1);
    assert_eq!(one, run(2));
    assert_eq!(one, run(8));
    assert_eq!(one, run(1));

    let cb = Codebook::from_bytes(&one).unwrap();
    let assign = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| assign_batch(&data, &cb).unwrap())
    };
    let a1 = assign(1);
    let a8 = assign(8);
    assert_eq!(a1.indices, a8.indices);
    assert_eq!(a1.distances, a8.distances);
}

#[test]
fn encode_of_decode_is_identity_on_tokens() {
    let mut r = rng(30);
    let data = uniform(500, 6, &mut r);
    let cb = Codebook::from_centers(6, uniform(40, 6, &mut r).into_vec()).unwrap();
    let t1 = encode(&data, &cb).unwrap();
    let t2 = encode(&decode(&t1, &cb).unwrap(), &cb).unwrap();
    assert_eq!(t1, t2);
}

#[test]
fn duplicate_centers_decode_back_to_the_lowest_index() {
    let cb = Codebook::from_rows(&[[1.0f32, 1.0], [2.0, 2.0], [1.0, 1.0]]).unwrap();
    let t = svcq::TokenSequence::new(vec![2, 1, 0], cb.id());
    let again = encode(&decode(&t, &cb).unwrap(), &cb).unwrap();
    assert_eq!(again.tokens(), [0, 1, 0]);
    // from then on the cycle is stable
    assert_eq!(encode(&decode(&again, &cb).unwrap(), &cb).unwrap(), again);
}

#[test]
fn quantization_error_falls_with_k() {
    let dir = TempDir::new().unwrap();
    let mix = Mixture::new(100, 8, 5.0, 1.0, &mut rng(40));
    let (data, _) = mix.sample(8000, &mut rng(41));
    let (eval, _) = mix.sample(2000, &mut rng(42));
    let (_, m) = write_shards(dir.path(), &data, 2);
    let errs: Vec<f64> = [8, 32, 128]
        .iter()
        .map(|&k| quantization_error(&eval, &train(&m, &config(k, 2000, 20, 1)).unwrap().codebook).unwrap())
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}
