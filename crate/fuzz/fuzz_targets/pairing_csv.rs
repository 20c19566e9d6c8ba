#![no_main]

use libfuzzer_sys::fuzz_target;
use std::path::Path;
use svcq::conversion::parse_pairing_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rows) = parse_pairing_csv(text, Path::new("base")) {
            assert!(!rows.is_empty());
        }
    }
});
