//! Clustering-based discrete speech units.
//!
//! `svcq` trains large-batch mini-batch k-means codebooks over frame-level
//! self-supervised speech features, turns feature matrices into token
//! sequences and back, scores codebooks with nearest-center distance metrics
//! (AMD, MDC, QDC), and prepares the non-neural side of a singing voice
//! conversion run: F0 mode shifting and speaker cosine-similarity scoring.
//!
//! All artifacts live in plain binary files: feature matrices, F0 tracks,
//! token sequences and speaker embeddings use the `.npy` array container
//! (little-endian `<f4`/`<u4`, C order), codebooks use a small `SVCQ` file
//! with an optional JSON sidecar.

pub mod codebook;
pub mod conversion;
mod distance;
pub mod error;
pub mod features;
pub mod fmt;
pub mod kmeans;
pub mod manifest;
pub mod metrics;
pub mod npy;
pub mod quantizer;
mod seed;

pub use codebook::{Codebook, CodebookId};
pub use conversion::{
    cosine_similarity, evaluate_similarity, f0_mode, f0_shift, prepare_conversion,
    ConversionInput, SimilarityResult,
};
pub use error::{Error, Result};
pub use features::{F0Track, FeatureMatrix, SpeakerEmbedding};
pub use kmeans::{
    assign_batch, init_centers, minibatch_update, train, Assignment, EmptyCenterPolicy,
    InitMethod, TrainConfig, Trained,
};
pub use manifest::{stream_batches, BatchStream, ShardManifest};
pub use metrics::{amd, mdc, qdc, report, ClusterQualityReport};
pub use quantizer::{decode, encode, quantization_error, TokenSequence};
