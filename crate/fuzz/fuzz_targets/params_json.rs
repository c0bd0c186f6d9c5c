#![no_main]

use libfuzzer_sys::fuzz_target;
use trpca_core::io::parse_params;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = parse_params(text) {
        doc.hyper().validate().expect("accepted documents hold valid parameters");
        let again = serde_json::to_string(&doc).unwrap();
        assert_eq!(parse_params(&again).unwrap(), doc);
    }
});
