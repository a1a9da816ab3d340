#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = ovcd::tensorio::decode_rgb_png(data) {
        assert_eq!(img.as_slice().len(), img.height() * img.width() * 3);
    }
});
