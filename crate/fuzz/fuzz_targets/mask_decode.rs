#![no_main]

use libfuzzer_sys::fuzz_target;
use trpca_core::io::{decode_tns3, validate_mask};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode_tns3(data) {
        let binary = t.data().iter().all(|&v| v == 0.0 || v == 1.0);
        assert_eq!(validate_mask(&t).is_ok(), binary);
    }
});
