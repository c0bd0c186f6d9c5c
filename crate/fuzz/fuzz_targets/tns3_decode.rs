#![no_main]

use libfuzzer_sys::fuzz_target;
use trpca_core::io::{decode_tns3, encode_tns3};

fuzz_target!(|data: &[u8]| {
    // Anything that decodes must re-encode to the same bytes.
    if let Ok(t) = decode_tns3(data) {
        assert!(t.is_finite());
        assert_eq!(encode_tns3(&t), data);
    }
});
