#![no_main]

use libfuzzer_sys::fuzz_target;
use svcq::features::embeddings_from_bytes;
use svcq::npy;
use svcq::quantizer::tokens_from_bytes;
use svcq::{F0Track, FeatureMatrix, SpeakerEmbedding};

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = FeatureMatrix::from_bytes(data) {
        // other writers pad headers differently, so compare after re-encoding
        let canonical = m.to_bytes();
        assert_eq!(FeatureMatrix::from_bytes(&canonical).unwrap().to_bytes(), canonical);
    }
    if let Ok(t) = F0Track::from_bytes(data) {
        assert!(t.hz().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
    let _ = SpeakerEmbedding::from_bytes(data);
    let _ = embeddings_from_bytes(data);
    let _ = tokens_from_bytes(data);
    let _ = npy::decode_f32(data);
    let _ = npy::decode_u32(data);
});
