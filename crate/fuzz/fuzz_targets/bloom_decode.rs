#![no_main]

use bmtd::BloomVector;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(bv) = BloomVector::from_bytes(data) {
        // anything accepted must re-encode to the same bytes
        assert_eq!(bv.to_bytes(), data);
        assert!(bv.ones() <= bv.len() as u64);
    }
});
