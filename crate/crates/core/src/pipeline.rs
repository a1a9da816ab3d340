//! End-to-end inference for one pair and one queried class.
//!
//! score stacks (both dates) → prompt-bank posterior delta → token gate →
//! gated fusion → clip → superpixel pooling on the average image →
//! 8-bit threshold → structural filter.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::consensus::{
    average_image, clip_unit, fuse, regional_pool, slic_segment, FusionConfig, SlicConfig,
    SuperpixelLabels,
};
use crate::decode::{quantize_and_threshold, struct_filter, ChangeMask, DecodeConfig};
use crate::error::{Error, Result};
use crate::eval::derive_class_gt;
use crate::geogate::{gate_from_tokens, upsample_gate};
use crate::grid::Grid;
use crate::posterior::{aggregate_prompt_deltas_with, CalibrationConfig, CompetitorSet, DeltaOptions};
use crate::score::{build_score_stack, RetentionConfig};
use crate::tensorio::{write_dense_array, DenseArray, PairBundle};

/// Stage removals used for ablation studies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Compare raw scores instead of calibrated posteriors.
    pub no_cpc: bool,
    /// Replace the token gate (see [`GateAblation`]).
    pub no_geogate: bool,
    /// Drop the additive gate term from fusion.
    pub no_additive: bool,
    /// Skip superpixel pooling.
    pub no_slic: bool,
    /// Skip morphology and component filtering.
    pub no_structfilter: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ablation {
    NoCpc,
    NoGeogate,
    NoAdditive,
    NoSlic,
    NoStructfilter,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::NoCpc,
        Ablation::NoGeogate,
        Ablation::NoAdditive,
        Ablation::NoSlic,
        Ablation::NoStructfilter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoCpc => "no_cpc",
            Ablation::NoGeogate => "no_geogate",
            Ablation::NoAdditive => "no_additive",
            Ablation::NoSlic => "no_slic",
            Ablation::NoStructfilter => "no_structfilter",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown ablation `{s}` (expected one of no_cpc, no_geogate, no_additive, no_slic, no_structfilter)"
                ))
            })
    }
}

impl Ablations {
    pub fn enable(&mut self, a: Ablation) {
        match a {
            Ablation::NoCpc => self.no_cpc = true,
            Ablation::NoGeogate => self.no_geogate = true,
            Ablation::NoAdditive => self.no_additive = true,
            Ablation::NoSlic => self.no_slic = true,
            Ablation::NoStructfilter => self.no_structfilter = true,
        }
    }

    pub fn active(&self) -> Vec<Ablation> {
        Ablation::ALL
            .into_iter()
            .filter(|&a| match a {
                Ablation::NoCpc => self.no_cpc,
                Ablation::NoGeogate => self.no_geogate,
                Ablation::NoAdditive => self.no_additive,
                Ablation::NoSlic => self.no_slic,
                Ablation::NoStructfilter => self.no_structfilter,
            })
            .collect()
    }
}

/// What replaces the token gate when it is ablated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateAblation {
    /// Constant gate of 1: fusion reduces to `delta + alpha`.
    #[default]
    ConstantOne,
    /// Gate 0 with zero strength and weight: fusion passes the delta through.
    Passthrough,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub retention: RetentionConfig,
    pub calibration: CalibrationConfig,
    pub competitors: CompetitorSet,
    pub fusion: FusionConfig,
    pub slic: SlicConfig,
    pub decode: DecodeConfig,
    pub ablations: Ablations,
    pub gate_ablation: GateAblation,
    /// Per-class prompt banks overriding the manifest's `classes`.
    pub prompt_banks: BTreeMap<String, Vec<usize>>,
}

impl PipelineConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.retention.validate()?;
        self.calibration.validate()?;
        self.fusion.validate()?;
        self.slic.validate()?;
        if let Some((name, _)) = self.prompt_banks.iter().find(|(_, p)| p.is_empty()) {
            return Err(Error::InvalidConfig(format!(
                "prompt bank for `{name}` is empty"
            )));
        }
        Ok(())
    }

    /// Stable short digest of the full configuration.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    fn effective_fusion(&self) -> FusionConfig {
        let mut f = self.fusion;
        if self.ablations.no_additive {
            f.additive_weight = 0.0;
        }
        if self.ablations.no_geogate && self.gate_ablation == GateAblation::Passthrough {
            f.additive_weight = 0.0;
            f.gate_strength = 0.0;
        }
        f
    }
}

/// Intermediate maps of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Stages {
    pub delta: Grid,
    pub gate: Grid,
    /// Fused score before clipping.
    pub fused: Grid,
    pub pooled: Grid,
    pub y0: ChangeMask,
    pub labels: Option<SuperpixelLabels>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub mask: ChangeMask,
    pub stages: Stages,
}

impl Detection {
    /// Writes `{pair_id}.{stage}.npy` for `delta`, `gate`, `fused`, `pooled` and `y0`.
    pub fn write_intermediates(&self, dir: &Path, pair_id: &str) -> Result<()> {
        let s = &self.stages;
        for (stage, grid) in [
            ("delta", &s.delta),
            ("gate", &s.gate),
            ("fused", &s.fused),
            ("pooled", &s.pooled),
        ] {
            write_dense_array(
                dir.join(format!("{pair_id}.{stage}.npy")),
                &DenseArray::from_grid(grid),
            )?;
        }
        write_dense_array(dir.join(format!("{pair_id}.y0.npy")), &s.y0.to_array())
    }
}

/// Run the full pipeline on a loaded pair for `class`.
pub fn run_detect(bundle: &PairBundle, class: &str, cfg: &PipelineConfig) -> Result<Detection> {
    let prompts: &[usize] = match cfg.prompt_banks.get(class) {
        Some(bank) => bank,
        None => bundle.prompt_set(class)?,
    };
    let k = bundle.vocabulary.len();
    if let Some(&p) = prompts.iter().find(|&&p| p >= k) {
        return Err(Error::IndexOutOfRange { index: p, len: k });
    }
    let (h, w) = (bundle.height, bundle.width);

    let stack_a = build_score_stack(&bundle.date_a, h, w, &cfg.retention)?;
    let stack_b = build_score_stack(&bundle.date_b, h, w, &cfg.retention)?;
    let delta = aggregate_prompt_deltas_with(
        &stack_a,
        &stack_b,
        prompts,
        &DeltaOptions {
            calibration: (!cfg.ablations.no_cpc).then_some(cfg.calibration),
            competitors: cfg.competitors,
        },
    )?;

    let gate = if cfg.ablations.no_geogate {
        match cfg.gate_ablation {
            GateAblation::ConstantOne => Grid::filled(h, w, 1.0),
            GateAblation::Passthrough => Grid::zeros(h, w),
        }
    } else {
        let coarse = gate_from_tokens(&bundle.date_a.tokens, &bundle.date_b.tokens)?;
        upsample_gate(&coarse, h, w)?
    };

    let fused = fuse(&delta, &gate, &cfg.effective_fusion())?;
    let clipped = clip_unit(&fused);

    let (pooled, labels) = if cfg.ablations.no_slic {
        (clipped, None)
    } else {
        let mean_image = average_image(&bundle.date_a.image, &bundle.date_b.image)?;
        let labels = slic_segment(&mean_image, &cfg.slic)?;
        (regional_pool(&clipped, &labels)?, Some(labels))
    };

    let y0 = quantize_and_threshold(&pooled, cfg.decode.tau_u8);
    let mask = if cfg.ablations.no_structfilter {
        y0.clone()
    } else {
        struct_filter(&y0, &cfg.decode)
    };

    Ok(Detection {
        mask,
        stages: Stages {
            delta,
            gate,
            fused,
            pooled,
            y0,
            labels,
        },
    })
}

/// Ground truth for `class` on one pair.
///
/// With both semantic maps and an id for `class`, a pixel is positive when it
/// changed and the class appears at either date; otherwise the binary change
/// map is used as is.
pub fn class_ground_truth(bundle: &PairBundle, class: &str) -> Result<ChangeMask> {
    let gt = bundle
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::MissingGroundTruth(bundle.pair_id.clone()))?;
    match (&gt.semantic_a, &gt.semantic_b, gt.class_ids.get(class)) {
        (Some(a), Some(b), Some(&id)) => derive_class_gt(a, b, &gt.change, id),
        _ => Ok(gt.change.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!("no_such".parse::<Ablation>().is_err());
    }

    #[test]
    fn config_defaults_and_hash_are_stable() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.calibration.rho, 1.5);
        assert_eq!(cfg.fusion.additive_weight, 0.1);
        assert_eq!(cfg.fusion.gate_strength, 0.7);
        assert_eq!(cfg.fusion.gate_exponent, 1.0);
        assert_eq!(cfg.retention.top_r, 30);
        assert_eq!(cfg.retention.confidence_threshold, 0.5);
        assert_eq!(cfg.config_hash(), PipelineConfig::default().config_hash());
        let mut other = cfg.clone();
        other.decode.tau_u8 = 100;
        assert_ne!(cfg.config_hash(), other.config_hash());
    }

    #[test]
    fn partial_config_falls_back_to_defaults() {
        let cfg = PipelineConfig::from_json_str(r#"{"decode": {"tau_u8": 90}}"#).unwrap();
        assert_eq!(cfg.decode.tau_u8, 90);
        assert_eq!(cfg.decode.opening_radius, 1);
        assert_eq!(cfg.fusion, FusionConfig::default());
        assert!(PipelineConfig::from_json_str(r#"{"fusion": {"alpha": 1}}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.ablations.no_slic = true;
        cfg.prompt_banks.insert("building".into(), vec![0, 2]);
        let back = PipelineConfig::from_json_str(&cfg.to_json_string()).unwrap();
        assert_eq!(back, cfg);
    }
}
