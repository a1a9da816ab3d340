#![no_main]

use libfuzzer_sys::fuzz_target;
use ovcd::tensorio::npy;

fuzz_target!(|data: &[u8]| {
    if let Ok(arr) = npy::decode(data) {
        // whatever decodes must survive a round trip through the writer
        let again = npy::decode(&npy::encode(&arr)).expect("re-decode");
        assert_eq!(npy::encode(&again), npy::encode(&arr));
    }
});
