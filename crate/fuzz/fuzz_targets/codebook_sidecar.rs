#![no_main]

use libfuzzer_sys::fuzz_target;
use svcq::codebook::CodebookSidecar;

fuzz_target!(|data: &[u8]| {
    let _ = CodebookSidecar::from_json(data);
});
