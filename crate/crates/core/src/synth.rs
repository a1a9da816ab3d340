//! Deterministic synthetic pairs with a planted concept change.
//!
//! A scene has one queried prompt whose evidence jumps from a low background
//! level to a confident instance inside a rectangle at date b, competitor
//! prompts with stable activations, optional low-frequency pseudo-change in
//! the queried score and image appearance, and token grids whose vectors are
//! rotated inside the rectangle.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)`, whose output
//! stream is specified independently of platform, so fixtures reproduce
//! byte-for-byte everywhere.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::decode::ChangeMask;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::score::upsample_bilinear;
use crate::tensorio::{
    write_dense_array, ArrayData, DateEntry, DenseArray, GroundTruthEntry, PairManifest,
    PromptEntry,
};

/// Name of the queried class in generated manifests.
pub const TARGET_CLASS: &str = "target";
/// Label value of the queried class in generated semantic maps.
pub const TARGET_LABEL: i32 = 1;

const BACKGROUND_SCORE: f64 = 0.05;
const PLANTED_CONFIDENCE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y && y < self.y + self.height && x >= self.x && x < self.x + self.width
    }

    fn contains_f(&self, y: f64, x: f64) -> bool {
        y >= self.y as f64
            && y < (self.y + self.height) as f64
            && x >= self.x as f64
            && x < (self.x + self.width) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Vocabulary size `K`.
    pub vocab_size: usize,
    pub token_depth: usize,
    pub token_height: usize,
    pub token_width: usize,
    pub planted_region: Rect,
    /// Vocabulary index of the queried prompt.
    pub queried_class: usize,
    /// Peak activation of the competitor prompts, in `[0, 1]`.
    pub competitor_strength: f64,
    /// Amplitude of low-frequency pseudo-change in the queried score outside
    /// the planted region and in image appearance.
    pub pseudo_change_noise: f64,
    /// Per-component std-dev of token noise outside the planted region.
    pub token_noise: f64,
    /// Rotation angle (radians) applied to tokens inside the planted region.
    pub token_change_magnitude: f64,
    /// Instance masks are stored at `ceil(H / n) × ceil(W / n)`.
    pub mask_downsample: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 64,
            width: 64,
            vocab_size: 4,
            token_depth: 8,
            token_height: 8,
            token_width: 8,
            planted_region: Rect {
                y: 16,
                x: 24,
                height: 24,
                width: 24,
            },
            queried_class: 0,
            competitor_strength: 0.3,
            pseudo_change_noise: 0.0,
            token_noise: 0.0,
            token_change_magnitude: std::f64::consts::PI,
            mask_downsample: 2,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::SpecInvalid(m.to_string()));
        if self.height == 0 || self.width == 0 {
            return bad("image size must be positive");
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be at least 1");
        }
        if self.queried_class >= self.vocab_size {
            return bad("queried_class must index the vocabulary");
        }
        if self.token_depth < 2 || self.token_height == 0 || self.token_width == 0 {
            return bad("token grid needs positive dims and depth >= 2");
        }
        let r = &self.planted_region;
        if r.height == 0 || r.width == 0 || r.y + r.height > self.height || r.x + r.width > self.width {
            return bad("planted_region must be non-empty and inside the image");
        }
        if !(0.0..=1.0).contains(&self.competitor_strength) {
            return bad("competitor_strength must lie in [0, 1]");
        }
        if !(self.pseudo_change_noise >= 0.0 && self.pseudo_change_noise.is_finite()) {
            return bad("pseudo_change_noise must be >= 0");
        }
        if !(self.token_noise >= 0.0 && self.token_noise.is_finite()) {
            return bad("token_noise must be >= 0");
        }
        if !self.token_change_magnitude.is_finite() {
            return bad("token_change_magnitude must be finite");
        }
        if self.mask_downsample == 0 {
            return bad("mask_downsample must be at least 1");
        }
        Ok(())
    }

    pub fn planted_mask(&self) -> ChangeMask {
        ChangeMask::from_fn(self.height, self.width, |y, x| {
            self.planted_region.contains(y, x)
        })
    }
}

/// A generated scene on disk.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub manifest_path: PathBuf,
    pub ground_truth: ChangeMask,
}

/// Smooth random field in `[0, 1]`: a coarse uniform grid resized bilinearly.
fn smooth_field(rng: &mut ChaCha8Rng, h: usize, w: usize, coarse: usize) -> Grid {
    let coarse = Grid::from_fn(coarse, coarse, |_, _| rng.gen::<f64>());
    upsample_bilinear(&coarse, h, w).expect("non-zero dims")
}

fn f32_array(shape: Vec<usize>, values: impl IntoIterator<Item = f64>) -> DenseArray {
    let data: Vec<f32> = values.into_iter().map(|v| v as f32).collect();
    DenseArray::new(shape, ArrayData::F32(data)).expect("consistent synthetic shape")
}

struct PromptArrays {
    masks: Option<DenseArray>,
    confidences: Vec<f64>,
    dense: Option<DenseArray>,
}

struct DateArrays {
    image: DenseArray,
    tokens: DenseArray,
    prompts: Vec<PromptArrays>,
}

/// Generate a scene into `out_dir` (created if needed).
pub fn gen_scene(spec: &SceneSpec, out_dir: impl AsRef<Path>) -> Result<SyntheticScene> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.height, spec.width);
    let region = spec.planted_region;
    let k = spec.vocab_size;
    let q = spec.queried_class;
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");

    // Images: base layout, planted object at date b, appearance drift.
    let background: [f64; 3] = [
        rng.gen_range(40.0..110.0),
        rng.gen_range(60.0..130.0),
        rng.gen_range(30.0..90.0),
    ];
    let patches: Vec<(Rect, [f64; 3])> = (0..3)
        .map(|_| {
            let ph = rng.gen_range(h / 8..=h / 3).max(1);
            let pw = rng.gen_range(w / 8..=w / 3).max(1);
            let rect = Rect {
                y: rng.gen_range(0..=h - ph),
                x: rng.gen_range(0..=w - pw),
                height: ph,
                width: pw,
            };
            let c = [
                rng.gen_range(20.0..140.0),
                rng.gen_range(20.0..140.0),
                rng.gen_range(20.0..140.0),
            ];
            (rect, c)
        })
        .collect();
    let roof: [f64; 3] = [
        rng.gen_range(200.0..250.0),
        rng.gen_range(180.0..230.0),
        rng.gen_range(160.0..220.0),
    ];
    let base_color = |y: usize, x: usize| -> [f64; 3] {
        patches
            .iter()
            .rev()
            .find(|(r, _)| r.contains(y, x))
            .map_or(background, |(_, c)| *c)
    };
    let pixel_noise = Normal::new(0.0, 2.0).expect("valid normal");
    let mut image_a = Vec::with_capacity(h * w * 3);
    let mut image_b = Vec::with_capacity(h * w * 3);
    let gain = 1.0 + 0.5 * spec.pseudo_change_noise * std_normal.sample(&mut rng);
    let shading = smooth_field(&mut rng, h, w, 3);
    for y in 0..h {
        for x in 0..w {
            let base = base_color(y, x);
            let after = if region.contains(y, x) { roof } else { base };
            for c in 0..3 {
                image_a.push((base[c] + pixel_noise.sample(&mut rng)).clamp(0.0, 255.0));
                let drift = 60.0 * spec.pseudo_change_noise * (shading.get(y, x) - 0.5);
                let v = after[c] * gain + drift + pixel_noise.sample(&mut rng);
                image_b.push(v.clamp(0.0, 255.0));
            }
        }
    }
    let to_u8 = |v: Vec<f64>| {
        DenseArray::new(
            vec![h, w, 3],
            ArrayData::U8(v.into_iter().map(|x| x.round() as u8).collect()),
        )
        .expect("consistent image shape")
    };

    // Tokens: shared base, rotated inside the region at date b.
    let (th, tw, d) = (spec.token_height, spec.token_width, spec.token_depth);
    let token_noise = Normal::new(0.0, spec.token_noise.max(0.0)).expect("valid normal");
    let mut tokens_a = Vec::with_capacity(th * tw * d);
    let mut tokens_b = Vec::with_capacity(th * tw * d);
    let (cos_t, sin_t) = (spec.token_change_magnitude.cos(), spec.token_change_magnitude.sin());
    for i in 0..th {
        for j in 0..tw {
            let base: Vec<f64> = (0..d).map(|_| std_normal.sample(&mut rng)).collect();
            let probe: Vec<f64> = (0..d).map(|_| std_normal.sample(&mut rng)).collect();
            let cy = (i as f64 + 0.5) * h as f64 / th as f64;
            let cx = (j as f64 + 0.5) * w as f64 / tw as f64;
            if region.contains_f(cy, cx) {
                // rotate within the plane spanned by `base` and a direction orthogonal to it
                let norm = base.iter().map(|v| v * v).sum::<f64>().sqrt();
                let unit: Vec<f64> = base.iter().map(|v| v / norm).collect();
                let proj: f64 = probe.iter().zip(&unit).map(|(p, u)| p * u).sum();
                let mut ortho: Vec<f64> = probe.iter().zip(&unit).map(|(p, u)| p - proj * u).collect();
                let on = ortho.iter().map(|v| v * v).sum::<f64>().sqrt();
                ortho.iter_mut().for_each(|v| *v /= on);
                tokens_a.extend(base.iter().copied());
                tokens_b.extend(
                    unit.iter()
                        .zip(&ortho)
                        .map(|(u, o)| norm * (cos_t * u + sin_t * o)),
                );
            } else {
                tokens_a.extend(base.iter().map(|&v| v + token_noise.sample(&mut rng)));
                tokens_b.extend(base.iter().map(|&v| v + token_noise.sample(&mut rng)));
            }
        }
    }

    // Concept evidence.
    let ds = spec.mask_downsample;
    let (mh, mw) = (h.div_ceil(ds), w.div_ceil(ds));
    let native_center = |i: usize, n_src: usize, n_dst: usize| (i as f64 + 0.5) * n_dst as f64 / n_src as f64;
    let rect_mask = |r: &Rect| -> Vec<f64> {
        let mut m = Vec::with_capacity(mh * mw);
        for i in 0..mh {
            for j in 0..mw {
                let inside = r.contains_f(native_center(i, mh, h), native_center(j, mw, w));
                m.push(if inside { 1.0 } else { 0.0 });
            }
        }
        m
    };
    let random_rect = |rng: &mut ChaCha8Rng| -> Rect {
        let rh = rng.gen_range(1..=h.div_ceil(3));
        let rw = rng.gen_range(1..=w.div_ceil(3));
        Rect {
            y: rng.gen_range(0..=h - rh),
            x: rng.gen_range(0..=w - rw),
            height: rh,
            width: rw,
        }
    };

    let pseudo_a = smooth_field(&mut rng, h, w, 4);
    let pseudo_b = smooth_field(&mut rng, h, w, 4);
    let queried_dense = |pseudo: &Grid| -> DenseArray {
        f32_array(
            vec![h, w],
            (0..h * w).map(|p| {
                let (y, x) = (p / w, p % w);
                if region.contains(y, x) {
                    BACKGROUND_SCORE
                } else {
                    (BACKGROUND_SCORE + spec.pseudo_change_noise * pseudo.get(y, x)).min(1.0)
                }
            }),
        )
    };

    let mut prompts_a = Vec::with_capacity(k);
    let mut prompts_b = Vec::with_capacity(k);
    for prompt in 0..k {
        // low-confidence distractors, identical at both dates, below the default threshold
        let distractors: Vec<(Rect, f64)> = (0..2)
            .map(|_| (random_rect(&mut rng), rng.gen_range(0.1..0.45)))
            .collect();
        if prompt == q {
            let mut masks_b = rect_mask(&region);
            let mut conf_b = vec![PLANTED_CONFIDENCE];
            let mut masks_a = Vec::new();
            let mut conf_a = Vec::new();
            for (r, c) in &distractors {
                masks_a.extend(rect_mask(r));
                conf_a.push(*c);
                masks_b.extend(rect_mask(r));
                conf_b.push(*c);
            }
            prompts_a.push(PromptArrays {
                masks: Some(f32_array(vec![conf_a.len(), mh, mw], masks_a)),
                confidences: conf_a,
                dense: Some(queried_dense(&pseudo_a)),
            });
            prompts_b.push(PromptArrays {
                masks: Some(f32_array(vec![conf_b.len(), mh, mw], masks_b)),
                confidences: conf_b,
                dense: Some(queried_dense(&pseudo_b)),
            });
        } else {
            let field = smooth_field(&mut rng, h, w, 3);
            let dense = f32_array(
                vec![h, w],
                field.as_slice().iter().map(|v| spec.competitor_strength * v),
            );
            let mut masks = Vec::new();
            let mut confs = Vec::new();
            for (r, c) in &distractors {
                masks.extend(rect_mask(r));
                confs.push(*c);
            }
            let strong = random_rect(&mut rng);
            masks.extend(rect_mask(&strong));
            confs.push(spec.competitor_strength);
            let entry = || PromptArrays {
                masks: Some(f32_array(vec![confs.len(), mh, mw], masks.iter().copied())),
                confidences: confs.clone(),
                dense: Some(dense.clone()),
            };
            prompts_a.push(entry());
            prompts_b.push(entry());
        }
    }

    let date_a = DateArrays {
        image: to_u8(image_a),
        tokens: f32_array(vec![th, tw, d], tokens_a),
        prompts: prompts_a,
    };
    let date_b = DateArrays {
        image: to_u8(image_b),
        tokens: f32_array(vec![th, tw, d], tokens_b),
        prompts: prompts_b,
    };

    let truth = spec.planted_mask();
    let sem_b: Vec<i32> = truth
        .as_slice()
        .iter()
        .map(|&v| if v != 0 { TARGET_LABEL } else { 0 })
        .collect();

    fs::create_dir_all(out_dir.join("a"))?;
    fs::create_dir_all(out_dir.join("b"))?;
    fs::create_dir_all(out_dir.join("gt"))?;
    let date_a_entry = write_date(out_dir, "a", &date_a)?;
    let date_b_entry = write_date(out_dir, "b", &date_b)?;
    write_dense_array(out_dir.join("gt/change.npy"), &truth.to_array())?;
    write_dense_array(
        out_dir.join("gt/sem_a.npy"),
        &DenseArray::new(vec![h, w], ArrayData::I32(vec![0; h * w]))?,
    )?;
    write_dense_array(
        out_dir.join("gt/sem_b.npy"),
        &DenseArray::new(vec![h, w], ArrayData::I32(sem_b))?,
    )?;

    let manifest = PairManifest {
        pair_id: Some(format!("synth-{:016x}", spec.seed)),
        height: h,
        width: w,
        vocabulary: (0..k).map(|i| format!("concept_{i}")).collect(),
        classes: BTreeMap::from([(TARGET_CLASS.to_string(), vec![q])]),
        date_a: date_a_entry,
        date_b: date_b_entry,
        ground_truth: Some(GroundTruthEntry {
            change: "gt/change.npy".into(),
            semantic_a: Some("gt/sem_a.npy".into()),
            semantic_b: Some("gt/sem_b.npy".into()),
            class_ids: BTreeMap::from([(TARGET_CLASS.to_string(), TARGET_LABEL)]),
        }),
    };
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, manifest.to_json_string() + "\n")?;

    Ok(SyntheticScene {
        manifest_path,
        ground_truth: truth,
    })
}

fn write_date(root: &Path, tag: &str, date: &DateArrays) -> Result<DateEntry> {
    let image = format!("{tag}/image.npy");
    let tokens = format!("{tag}/tokens.npy");
    write_dense_array(root.join(&image), &date.image)?;
    write_dense_array(root.join(&tokens), &date.tokens)?;
    let mut prompts = Vec::with_capacity(date.prompts.len());
    for (k, p) in date.prompts.iter().enumerate() {
        let mut entry = PromptEntry {
            confidences: p.confidences.clone(),
            ..Default::default()
        };
        if let Some(m) = &p.masks {
            let rel = format!("{tag}/p{k}_masks.npy");
            write_dense_array(root.join(&rel), m)?;
            entry.masks = Some(rel);
        }
        if let Some(d) = &p.dense {
            let rel = format!("{tag}/p{k}_dense.npy");
            write_dense_array(root.join(&rel), d)?;
            entry.dense = Some(rel);
        }
        prompts.push(entry);
    }
    Ok(DateEntry {
        image,
        tokens,
        prompts,
    })
}
