// Replays the checked-in fuzz seeds through the same entry points the fuzz
// targets exercise, so a stable toolchain still covers them.
use std::fs;
use std::path::PathBuf;

use ovcd::pipeline::PipelineConfig;
use ovcd::synth::SceneSpec;
use ovcd::tensorio::{decode_rgb_png, npy, PairManifest};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn npy_seeds() {
    let mut ok = 0;
    for (name, data) in seeds("npy_decode") {
        if let Ok(arr) = npy::decode(&data) {
            let again = npy::decode(&npy::encode(&arr)).unwrap();
            assert_eq!(npy::encode(&again), npy::encode(&arr), "{name}");
            ok += 1;
        }
    }
    assert!(ok >= 8);
    for bad in ["bad_magic.npy", "truncated.npy", "f8_unsupported.npy"] {
        let data = seeds("npy_decode").into_iter().find(|(n, _)| n == bad).unwrap().1;
        assert!(npy::decode(&data).is_err(), "{bad}");
    }
}

#[test]
fn manifest_seeds() {
    for (name, data) in seeds("manifest_parse") {
        let Ok(text) = std::str::from_utf8(&data) else { continue };
        let parsed = PairManifest::from_json_str(text);
        if name == "truncated.json" {
            assert!(parsed.is_err());
        }
        if let Ok(m) = parsed {
            assert_eq!(PairManifest::from_json_str(&m.to_json_string()).unwrap(), m, "{name}");
        }
    }
}

#[test]
fn config_seeds() {
    for (name, data) in seeds("config_parse") {
        let parsed = PipelineConfig::from_json_str(std::str::from_utf8(&data).unwrap());
        assert_eq!(parsed.is_err(), name == "bad_field.json", "{name}");
        if let Ok(cfg) = parsed {
            let back = PipelineConfig::from_json_str(&cfg.to_json_string()).unwrap();
            assert_eq!(back.config_hash(), cfg.config_hash(), "{name}");
        }
    }
}

#[test]
fn png_seeds() {
    for (name, data) in seeds("png_rgb_decode") {
        match decode_rgb_png(&data) {
            Ok(img) => assert_eq!(img.as_slice().len(), img.height() * img.width() * 3, "{name}"),
            Err(_) => assert_eq!(name, "truncated.png"),
        }
    }
}

#[test]
fn scene_spec_seeds() {
    for (name, data) in seeds("scene_spec_parse") {
        let spec: SceneSpec = serde_json::from_slice(&data).unwrap();
        assert_eq!(spec.validate().is_err(), name == "invalid_region.json", "{name}");
    }
}
