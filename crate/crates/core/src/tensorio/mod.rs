//! File boundary between feature extraction and inference.
//!
//! Dense arrays travel as NPY files ([`npy`]); a JSON [`PairManifest`] ties the
//! per-date files of one image pair together and [`load_pair_bundle`] resolves
//! and validates everything into an immutable [`PairBundle`].

mod bundle;
mod manifest;
pub mod npy;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

pub use bundle::{
    decode_rgb_png, load_pair_bundle, load_rgb_image, DateBundle, GroundTruth, PairBundle,
    PromptEvidence,
};
pub use manifest::{DateEntry, GroundTruthEntry, PairManifest, PromptEntry};

/// Tolerance for score-like values slightly outside `[0, 1]`.
pub const SCORE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    U8,
    I32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    I32(Vec<i32>),
}

impl ArrayData {
    fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::U8(v) => v.len(),
            ArrayData::I32(v) => v.len(),
        }
    }
}

/// Row-major n-dimensional array with one of the supported element types.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: ArrayData,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {count} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar_f32(v: f32) -> Self {
        Self {
            shape: Vec::new(),
            data: ArrayData::F32(vec![v]),
        }
    }

    /// `f32` array of shape `(H, W)` from a grid.
    pub fn from_grid(grid: &Grid) -> Self {
        Self {
            shape: vec![grid.height(), grid.width()],
            data: ArrayData::F32(grid.as_slice().iter().map(|&v| v as f32).collect()),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &ArrayData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            ArrayData::F32(_) => DType::F32,
            ArrayData::U8(_) => DType::U8,
            ArrayData::I32(_) => DType::I32,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.len() == 0
    }

    pub fn byte_len(&self) -> usize {
        self.len() * self.dtype().size()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            ArrayData::F32(v) => Some(v),
            _ => None,
        }
    }

    /// Element values widened to `f64`, whatever the stored dtype.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::I32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// Rejects NaN and infinite float payloads.
    pub fn validate_finite(&self) -> Result<()> {
        if let ArrayData::F32(v) = &self.data {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::ValueOutOfRange(format!(
                    "non-finite value {} at flat index {i}",
                    v[i]
                )));
            }
        }
        Ok(())
    }

    /// Interprets a 2-D array as a grid.
    pub fn to_grid(&self) -> Result<Grid> {
        match self.shape[..] {
            [h, w] => Grid::from_vec(h, w, self.to_f64_vec()),
            _ => Err(Error::ShapeMismatch(format!(
                "expected a 2-D array, got shape {:?}",
                self.shape
            ))),
        }
    }
}

pub fn read_dense_array(path: impl AsRef<Path>) -> Result<DenseArray> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    npy::decode(&bytes)
}

pub fn write_dense_array(path: impl AsRef<Path>, arr: &DenseArray) -> Result<()> {
    fs::write(path, npy::encode(arr))?;
    Ok(())
}

/// Clamp score-like values into `[0, 1]`, tolerating exporter round-off of
/// up to [`SCORE_TOLERANCE`].
pub fn clamp_unit_scores(values: &mut [f64], what: &str) -> Result<()> {
    for v in values.iter_mut() {
        if !(-SCORE_TOLERANCE..=1.0 + SCORE_TOLERANCE).contains(v) {
            return Err(Error::ValueOutOfRange(format!(
                "{what}: value {v} outside [0, 1]"
            )));
        }
        *v = v.clamp(0.0, 1.0);
    }
    Ok(())
}
