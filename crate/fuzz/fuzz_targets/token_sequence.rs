#![no_main]

use libfuzzer_sys::fuzz_target;
use svcq::TokenSequence;

// First byte splits the input into the array bytes and the sidecar JSON.
fuzz_target!(|data: &[u8]| {
    let Some((&split, rest)) = data.split_first() else {
        return;
    };
    let at = (split as usize * rest.len()) / 255;
    let (array, json) = rest.split_at(at);
    if let Ok(t) = TokenSequence::from_bytes(array, json) {
        assert_eq!(t.n_frames(), t.tokens().len());
    }
});
