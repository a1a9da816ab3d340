use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// JSON description of one bi-temporal pair.
///
/// All file references are resolved relative to the manifest's directory.
///
/// ```json
/// {
///   "pair_id": "scene-0000",
///   "height": 64, "width": 64,
///   "vocabulary": ["building", "road", "tree", "water"],
///   "classes": { "building": [0] },
///   "date_a": {
///     "image": "a/image.npy",
///     "tokens": "a/tokens.npy",
///     "prompts": [
///       { "masks": "a/p0_masks.npy", "confidences": [0.91, 0.62], "dense": "a/p0_dense.npy" },
///       { "confidences": [] }
///     ]
///   },
///   "date_b": { ... },
///   "ground_truth": { "change": "gt/change.npy", "semantic_a": "gt/sem_a.npy",
///                     "semantic_b": "gt/sem_b.npy", "class_ids": { "building": 1 } }
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
    pub height: usize,
    pub width: usize,
    pub vocabulary: Vec<String>,
    /// Class name to prompt-bank indices into `vocabulary`.
    pub classes: BTreeMap<String, Vec<usize>>,
    pub date_a: DateEntry,
    pub date_b: DateEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateEntry {
    /// RGB image, `.png` or `(H, W, 3)` NPY.
    pub image: String,
    /// Geometry tokens, `(h, w, D)` float32 NPY.
    pub tokens: String,
    /// One entry per vocabulary prompt, in vocabulary order.
    pub prompts: Vec<PromptEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptEntry {
    /// Instance masks stacked as `(N, h, w)` float32 at native resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<String>,
    /// Per-instance confidences, `N` entries.
    #[serde(default)]
    pub confidences: Vec<f64>,
    /// Optional dense semantic response, 2-D float32.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthEntry {
    /// Binary change map; any nonzero value counts as changed.
    pub change: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_b: Option<String>,
    /// Class name to label value in the semantic maps.
    #[serde(default)]
    pub class_ids: BTreeMap<String, i32>,
}

impl PairManifest {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let manifest: PairManifest =
            serde_json::from_str(text).map_err(|e| Error::InvalidManifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
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
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn vocabulary_size(&self) -> usize {
        self.vocabulary.len()
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidManifest(m));
        if self.height == 0 || self.width == 0 {
            return bad(format!("image size {}x{} is empty", self.height, self.width));
        }
        let k = self.vocabulary.len();
        if k == 0 {
            return bad("vocabulary is empty".into());
        }
        for (name, prompts) in &self.classes {
            if prompts.is_empty() {
                return bad(format!("class `{name}` has an empty prompt set"));
            }
            if let Some(&p) = prompts.iter().find(|&&p| p >= k) {
                return bad(format!("class `{name}` references prompt {p} but K = {k}"));
            }
        }
        for (tag, date) in [("date_a", &self.date_a), ("date_b", &self.date_b)] {
            if date.prompts.len() != k {
                return bad(format!(
                    "{tag} lists {} prompts, vocabulary has {k}",
                    date.prompts.len()
                ));
            }
            for (i, p) in date.prompts.iter().enumerate() {
                if p.masks.is_none() && !p.confidences.is_empty() {
                    return bad(format!("{tag} prompt {i} has confidences but no masks"));
                }
                if p.masks.is_some() && p.confidences.is_empty() {
                    return bad(format!("{tag} prompt {i} has masks but no confidences"));
                }
                if let Some(c) = p.confidences.iter().find(|c| !c.is_finite()) {
                    return bad(format!("{tag} prompt {i} has non-finite confidence {c}"));
                }
            }
        }
        Ok(())
    }
}
