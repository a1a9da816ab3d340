#![no_main]

use libfuzzer_sys::fuzz_target;
use ovcd::tensorio::PairManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = PairManifest::from_json_str(text) {
        let back = PairManifest::from_json_str(&m.to_json_string()).expect("round trip");
        assert_eq!(back, m);
    }
});
