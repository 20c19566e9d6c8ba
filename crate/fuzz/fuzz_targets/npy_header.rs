#![no_main]

use libfuzzer_sys::fuzz_target;
use svcq::npy;

fuzz_target!(|data: &[u8]| {
    if let Ok(header) = npy::parse_header(data) {
        // a header we accept must survive re-encoding
        let again = npy::encode_header(header.element_type, &header.shape);
        let reparsed = npy::parse_header(&again).expect("re-encoded header parses");
        assert_eq!(reparsed.shape, header.shape);
        assert_eq!(reparsed.element_type, header.element_type);
    }
    let _ = npy::read_header(&mut &data[..]);
});
