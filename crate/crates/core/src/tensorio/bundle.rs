use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::consensus::RgbImage;
use crate::decode::ChangeMask;
use crate::error::{Error, Result};
use crate::eval::LabelMap;
use crate::geogate::TokenGrid;
use crate::grid::Grid;
use crate::score::InstanceRecord;

use super::{clamp_unit_scores, read_dense_array, ArrayData, PairManifest};

/// Evidence for one prompt at one date.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEvidence {
    pub instances: Vec<InstanceRecord>,
    /// Absent dense branch behaves as an all-zero map.
    pub dense: Option<Grid>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DateBundle {
    pub prompts: Vec<PromptEvidence>,
    pub tokens: TokenGrid,
    pub image: RgbImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub change: ChangeMask,
    pub semantic_a: Option<LabelMap>,
    pub semantic_b: Option<LabelMap>,
    pub class_ids: BTreeMap<String, i32>,
}

/// Fully loaded, validated inputs of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBundle {
    pub pair_id: String,
    pub height: usize,
    pub width: usize,
    pub vocabulary: Vec<String>,
    pub classes: BTreeMap<String, Vec<usize>>,
    pub date_a: DateBundle,
    pub date_b: DateBundle,
    pub ground_truth: Option<GroundTruth>,
}

impl PairBundle {
    pub fn prompt_set(&self, class: &str) -> Result<&[usize]> {
        self.classes
            .get(class)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))
    }
}

/// Read and validate every file a manifest references.
///
/// `manifest_path` is the manifest file itself; relative references resolve
/// against its directory.
pub fn load_pair_bundle(manifest_path: impl AsRef<Path>) -> Result<PairBundle> {
    let manifest_path = manifest_path.as_ref();
    let manifest = PairManifest::from_path(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let default_id = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "pair".into());
    load_from_manifest(&manifest, base, default_id)
}

fn load_from_manifest(
    manifest: &PairManifest,
    base: &Path,
    default_id: String,
) -> Result<PairBundle> {
    manifest.validate()?;
    let (h, w) = (manifest.height, manifest.width);
    let resolve = |rel: &str| -> PathBuf { base.join(rel) };

    let load_date = |entry: &super::DateEntry, tag: &str| -> Result<DateBundle> {
        let mut prompts = Vec::with_capacity(entry.prompts.len());
        for (k, p) in entry.prompts.iter().enumerate() {
            let what = format!("{tag} prompt {k}");
            let mut confidences = p.confidences.clone();
            clamp_unit_scores(&mut confidences, &format!("{what} confidences"))?;
            let instances = match &p.masks {
                Some(rel) => load_instances(&resolve(rel), &confidences, &what)?,
                None => Vec::new(),
            };
            let dense = match &p.dense {
                Some(rel) => {
                    let arr = read_dense_array(resolve(rel))?;
                    arr.validate_finite()?;
                    let grid = arr.to_grid()?;
                    if grid.is_empty() {
                        return Err(Error::ZeroDimension);
                    }
                    let mut v = grid.into_vec();
                    clamp_unit_scores(&mut v, &format!("{what} dense map"))?;
                    let (dh, dw) = (arr.shape()[0], arr.shape()[1]);
                    Some(Grid::from_vec(dh, dw, v)?)
                }
                None => None,
            };
            prompts.push(PromptEvidence { instances, dense });
        }
        let tokens = TokenGrid::from_array(&read_dense_array(resolve(&entry.tokens))?)?;
        let image = load_rgb_image(&resolve(&entry.image))?;
        if image.dims() != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "{tag} image is {:?}, manifest declares {h}x{w}",
                image.dims()
            )));
        }
        Ok(DateBundle {
            prompts,
            tokens,
            image,
        })
    };

    let date_a = load_date(&manifest.date_a, "date_a")?;
    let date_b = load_date(&manifest.date_b, "date_b")?;
    if date_a.tokens.dims() != date_b.tokens.dims() {
        return Err(Error::ShapeMismatch(format!(
            "token grids differ between dates: {:?} vs {:?}",
            date_a.tokens.dims(),
            date_b.tokens.dims()
        )));
    }

    let ground_truth = match &manifest.ground_truth {
        Some(gt) => {
            let change = ChangeMask::from_array(&load_any_2d(&resolve(&gt.change))?)?;
            let sem = |rel: &Option<String>| -> Result<Option<LabelMap>> {
                rel.as_ref()
                    .map(|r| LabelMap::from_array(&load_any_2d(&resolve(r))?))
                    .transpose()
            };
            let semantic_a = sem(&gt.semantic_a)?;
            let semantic_b = sem(&gt.semantic_b)?;
            let dims_ok = change.dims() == (h, w)
                && semantic_a.as_ref().map_or(true, |s| s.dims() == (h, w))
                && semantic_b.as_ref().map_or(true, |s| s.dims() == (h, w));
            if !dims_ok {
                return Err(Error::ShapeMismatch(format!(
                    "ground truth maps must be {h}x{w}"
                )));
            }
            Some(GroundTruth {
                change,
                semantic_a,
                semantic_b,
                class_ids: gt.class_ids.clone(),
            })
        }
        None => None,
    };

    Ok(PairBundle {
        pair_id: manifest.pair_id.clone().unwrap_or(default_id),
        height: h,
        width: w,
        vocabulary: manifest.vocabulary.clone(),
        classes: manifest.classes.clone(),
        date_a,
        date_b,
        ground_truth,
    })
}

fn load_instances(path: &Path, confidences: &[f64], what: &str) -> Result<Vec<InstanceRecord>> {
    let arr = read_dense_array(path)?;
    let [n, mh, mw] = arr.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "{what}: instance masks must be (N, h, w), got {:?}",
            arr.shape()
        )));
    };
    let (n, mh, mw) = (*n, *mh, *mw);
    if n != confidences.len() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {n} masks but {} confidences",
            confidences.len()
        )));
    }
    if mh == 0 || mw == 0 {
        return Err(Error::ZeroDimension);
    }
    arr.validate_finite()?;
    let mut values = arr.to_f64_vec();
    clamp_unit_scores(&mut values, &format!("{what} masks"))?;
    values
        .chunks_exact(mh * mw)
        .zip(confidences)
        .map(|(chunk, &confidence)| {
            Ok(InstanceRecord {
                mask: Grid::from_vec(mh, mw, chunk.to_vec())?,
                confidence,
            })
        })
        .collect()
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .map_or(false, |e| e.eq_ignore_ascii_case("png"))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// 2-D array from NPY, or from a grayscale-converted PNG.
fn load_any_2d(path: &Path) -> Result<super::DenseArray> {
    if is_png(path) {
        let img = image::load_from_memory(&read_bytes(path)?)?.into_luma8();
        let (w, h) = img.dimensions();
        super::DenseArray::new(vec![h as usize, w as usize], ArrayData::U8(img.into_raw()))
    } else {
        let arr = read_dense_array(path)?;
        arr.validate_finite()?;
        Ok(arr)
    }
}

/// RGB image from an 8-bit PNG or an `(H, W, 3)` NPY array (uint8, or
/// float32 on the 0–255 scale).
pub fn load_rgb_image(path: &Path) -> Result<RgbImage> {
    if is_png(path) {
        return decode_rgb_png(&read_bytes(path)?);
    }
    let arr = read_dense_array(path)?;
    let [h, w, 3] = arr.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "RGB image must be (H, W, 3), got {:?}",
            arr.shape()
        )));
    };
    arr.validate_finite()?;
    let (h, w) = (*h, *w);
    let values = arr.to_f64_vec();
    if let Some(v) = values.iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(Error::ValueOutOfRange(format!(
            "RGB value {v} outside [0, 255]"
        )));
    }
    RgbImage::new(h, w, values)
}

/// Decode PNG bytes into an RGB image.
pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.into_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(f64::from).collect();
    RgbImage::new(h as usize, w as usize, data)
}
