#![no_main]

use libfuzzer_sys::fuzz_target;
use ovcd::pipeline::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = PipelineConfig::from_json_str(text) {
        let back = PipelineConfig::from_json_str(&cfg.to_json_string()).expect("round trip");
        assert_eq!(back.config_hash(), cfg.config_hash());
    }
});
