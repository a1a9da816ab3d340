//! Geometry-token consistency gate.
//!
//! At each token-grid location the gate is the half cosine distance between
//! the two dates' token vectors, `G = (1 - cos) / 2`, so identical directions
//! give 0 and opposite directions give 1. The coarse gate is then bilinearly
//! resized to the image grid.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::score::upsample_bilinear;
use crate::tensorio::DenseArray;

/// Norms below this are treated as zero vectors.
pub const NEAR_ZERO_NORM: f64 = 1e-12;

/// `h × w` grid of `depth`-dimensional token vectors, row-major, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    height: usize,
    width: usize,
    depth: usize,
    data: Vec<f32>,
}

impl TokenGrid {
    pub fn new(height: usize, width: usize, depth: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || depth == 0 {
            return Err(Error::ZeroDimension);
        }
        if data.len() != height * width * depth {
            return Err(Error::ShapeMismatch(format!(
                "{} token values for a {height}x{width}x{depth} grid",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            depth,
            data,
        })
    }

    /// From a float32 `(h, w, D)` array.
    pub fn from_array(arr: &DenseArray) -> Result<Self> {
        let [h, w, d] = arr.shape() else {
            return Err(Error::ShapeMismatch(format!(
                "token grid must be 3-D (h, w, D), got {:?}",
                arr.shape()
            )));
        };
        let data = arr
            .as_f32()
            .ok_or_else(|| Error::UnsupportedDtype("token grids must be float32".into()))?;
        arr.validate_finite()?;
        Self::new(*h, *w, *d, data.to_vec())
    }

    pub fn to_array(&self) -> DenseArray {
        DenseArray::new(
            vec![self.height, self.width, self.depth],
            crate::tensorio::ArrayData::F32(self.data.clone()),
        )
        .expect("token grid shape is consistent")
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.depth)
    }

    pub fn token(&self, y: usize, x: usize) -> &[f32] {
        let start = (y * self.width + x) * self.depth;
        &self.data[start..start + self.depth]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Cosine similarity with the near-zero conventions: both vectors ~0 gives 1
/// (no evidence of change), exactly one ~0 gives 0 (uninformative).
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let a_zero = na.sqrt() < NEAR_ZERO_NORM;
    let b_zero = nb.sqrt() < NEAR_ZERO_NORM;
    match (a_zero, b_zero) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        // sqrt of the product keeps cos(v, v) == 1 and cos(v, -v) == -1 exactly
        _ => (dot / (na * nb).sqrt()).clamp(-1.0, 1.0),
    }
}

/// Token-resolution gate map, values in `[0, 1]`.
pub fn gate_from_tokens(a: &TokenGrid, b: &TokenGrid) -> Result<Grid> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "token grids {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let d = a.depth;
    let values = a
        .data
        .chunks_exact(d)
        .zip(b.data.chunks_exact(d))
        .map(|(ta, tb)| 0.5 * (1.0 - cosine_similarity(ta, tb)))
        .collect();
    Grid::from_vec(a.height, a.width, values)
}

/// Resize the gate to the image grid; output clamped to `[0, 1]`.
pub fn upsample_gate(gate: &Grid, height: usize, width: usize) -> Result<Grid> {
    let mut up = upsample_bilinear(gate, height, width)?;
    up.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(up)
}
