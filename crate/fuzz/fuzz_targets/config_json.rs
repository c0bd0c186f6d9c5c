#![no_main]

use libfuzzer_sys::fuzz_target;
use trpca_core::datagen::InstanceMeta;
use trpca_core::experiment::ExperimentSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = serde_json::from_str::<ExperimentSpec>(text) {
        // Validation must reject bad grids without panicking.
        let _ = spec.validate();
    }
    let _ = serde_json::from_str::<InstanceMeta>(text);
});
