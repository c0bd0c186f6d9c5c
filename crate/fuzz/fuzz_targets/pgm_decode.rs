#![no_main]

use libfuzzer_sys::fuzz_target;
use trpca_core::io::{decode_pgm, frames_to_tensor};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_pgm(data) {
        assert_eq!(img.samples.len(), img.width * img.height);
        assert!(img.samples.iter().all(|&s| s <= img.maxval));
        let t = frames_to_tensor(&[img]).expect("a decoded frame stacks");
        assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
