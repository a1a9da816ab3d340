#![no_main]

use libfuzzer_sys::fuzz_target;
use ovcd::synth::SceneSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = serde_json::from_slice::<SceneSpec>(data) {
        let _ = spec.validate();
    }
});
