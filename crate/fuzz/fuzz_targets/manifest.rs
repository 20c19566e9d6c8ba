#![no_main]

use libfuzzer_sys::fuzz_target;
use svcq::manifest::parse_manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(paths) = parse_manifest(text) {
            assert!(!paths.is_empty());
        }
    }
});
