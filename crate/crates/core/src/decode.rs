//! Final mask inference: 8-bit quantization, thresholding and a structural
//! filter (opening, closing, small-component removal).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::tensorio::{ArrayData, DenseArray};

/// Component area threshold at 512×512; other sizes scale with pixel count.
pub const REFERENCE_MIN_AREA: usize = 32;
const REFERENCE_PIXELS: usize = 512 * 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub tau_u8: u8,
    pub opening_radius: usize,
    pub closing_radius: usize,
    /// `None` scales [`REFERENCE_MIN_AREA`] by image area (floored, at least 1).
    pub min_component_area: Option<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            tau_u8: 127,
            opening_radius: 1,
            closing_radius: 1,
            min_component_area: None,
        }
    }
}

impl DecodeConfig {
    pub fn min_area_for(&self, height: usize, width: usize) -> usize {
        self.min_component_area.unwrap_or_else(|| {
            let scaled = REFERENCE_MIN_AREA * height * width / REFERENCE_PIXELS;
            scaled.max(1)
        })
    }
}

/// Binary `H × W` mask with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ChangeMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    /// Any nonzero input value becomes 1.
    pub fn from_values(height: usize, width: usize, values: &[u8]) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} mask values for a {height}x{width} grid",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data: values.iter().map(|&v| u8::from(v != 0)).collect(),
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// From any 2-D array; nonzero means positive.
    pub fn from_array(arr: &DenseArray) -> Result<Self> {
        let [h, w] = arr.shape() else {
            return Err(Error::ShapeMismatch(format!(
                "mask must be 2-D, got {:?}",
                arr.shape()
            )));
        };
        let values: Vec<u8> = arr.to_f64_vec().iter().map(|&v| u8::from(v != 0.0)).collect();
        Self::from_values(*h, *w, &values)
    }

    pub fn to_array(&self) -> DenseArray {
        DenseArray::new(vec![self.height, self.width], ArrayData::U8(self.data.clone()))
            .expect("mask shape is consistent")
    }

    /// Values scaled to `{0, 255}` for image export.
    pub fn to_u8_image(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v * 255).collect()
    }

    /// 8-bit grayscale PNG with 0/255 pixels.
    pub fn write_png(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        image::save_buffer_with_format(
            path,
            &self.to_u8_image(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::L8,
            image::ImageFormat::Png,
        )?;
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = u8::from(v);
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Hex SHA-256 over the dims and the 0/1 bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        h.update(&self.data);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// 8-bit value of a unit-interval score: `floor(255 * s)`.
#[inline]
pub fn quantize_u8(s: f64) -> u8 {
    (255.0 * s).floor().clamp(0.0, 255.0) as u8
}

/// Positive where the quantized score strictly exceeds `tau_u8`.
pub fn quantize_and_threshold(pooled: &Grid, tau_u8: u8) -> ChangeMask {
    let (h, w) = pooled.dims();
    ChangeMask {
        height: h,
        width: w,
        data: pooled
            .as_slice()
            .iter()
            .map(|&s| u8::from(quantize_u8(s) > tau_u8))
            .collect(),
    }
}

/// Square min/max filter of half-width `radius`, separable. Out-of-image
/// pixels are neutral: 1 for erosion, 0 for dilation.
fn rank_filter(mask: &ChangeMask, radius: usize, erode: bool) -> ChangeMask {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = mask.dims();
    let pick = |acc: u8, v: u8| if erode { acc & v } else { acc | v };
    let init = u8::from(erode);

    let mut rows = vec![0u8; h * w];
    for y in 0..h {
        let line = &mask.data[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            rows[y * w + x] = line[lo..=hi].iter().fold(init, |a, &v| pick(a, v));
        }
    }
    let mut out = vec![0u8; h * w];
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).fold(init, |a, yy| pick(a, rows[yy * w + x]));
        }
    }
    ChangeMask {
        height: h,
        width: w,
        data: out,
    }
}

pub fn erode(mask: &ChangeMask, radius: usize) -> ChangeMask {
    rank_filter(mask, radius, true)
}

pub fn dilate(mask: &ChangeMask, radius: usize) -> ChangeMask {
    rank_filter(mask, radius, false)
}

pub fn opening(mask: &ChangeMask, radius: usize) -> ChangeMask {
    dilate(&erode(mask, radius), radius)
}

pub fn closing(mask: &ChangeMask, radius: usize) -> ChangeMask {
    erode(&dilate(mask, radius), radius)
}

/// 8-connected component ids of the positive pixels (0 = background,
/// components numbered from 1 in raster order) and each component's area.
pub fn label_components8(mask: &ChangeMask) -> (Vec<u32>, Vec<usize>) {
    let (h, w) = mask.dims();
    let mut ids = vec![0u32; h * w];
    let mut areas = vec![0usize];
    let mut stack = Vec::new();
    for start in 0..h * w {
        if mask.data[start] == 0 || ids[start] != 0 {
            continue;
        }
        let id = areas.len() as u32;
        ids[start] = id;
        stack.push(start);
        let mut area = 0;
        while let Some(p) = stack.pop() {
            area += 1;
            let (y, x) = (p / w, p % w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let q = ny * w + nx;
                    if mask.data[q] != 0 && ids[q] == 0 {
                        ids[q] = id;
                        stack.push(q);
                    }
                }
            }
        }
        areas.push(area);
    }
    (ids, areas)
}

/// Drop 8-connected components with fewer than `min_area` pixels.
pub fn remove_small_components(mask: &ChangeMask, min_area: usize) -> ChangeMask {
    if min_area <= 1 {
        return mask.clone();
    }
    let (ids, areas) = label_components8(mask);
    ChangeMask {
        height: mask.height,
        width: mask.width,
        data: ids
            .iter()
            .map(|&id| u8::from(id != 0 && areas[id as usize] >= min_area))
            .collect(),
    }
}

/// Opening, then closing, then small-component removal.
pub fn struct_filter(mask: &ChangeMask, cfg: &DecodeConfig) -> ChangeMask {
    let (h, w) = mask.dims();
    if h == 0 || w == 0 {
        return mask.clone();
    }
    let opened = opening(mask, cfg.opening_radius);
    let closed = closing(&opened, cfg.closing_radius);
    remove_small_components(&closed, cfg.min_area_for(h, w))
}
