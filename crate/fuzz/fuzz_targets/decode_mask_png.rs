#![no_main]

use libfuzzer_sys::fuzz_target;
use slrnet::maskio::{decode_mask, encode_mask};

fuzz_target!(|data: &[u8]| {
    if let Ok(mask) = decode_mask(data) {
        let bytes = encode_mask(&mask).expect("decoded mask encodes");
        assert_eq!(decode_mask(&bytes).expect("round trip"), mask);
    }
});
