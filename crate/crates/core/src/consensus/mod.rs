//! Gated fusion of the semantic delta with the geometry gate, clipping, and
//! superpixel-mean pooling on the average of the two dates' images.

mod slic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub use slic::{rgb_to_lab, slic_segment, SlicConfig, SuperpixelLabels};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Weight of the additive gate term.
    pub additive_weight: f64,
    /// How strongly the gate modulates the delta, in `[0, 1]`.
    pub gate_strength: f64,
    /// Exponent applied to the gate.
    pub gate_exponent: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            additive_weight: 0.1,
            gate_strength: 0.7,
            gate_exponent: 1.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.additive_weight >= 0.0 && self.additive_weight.is_finite()) {
            return Err(Error::InvalidConfig("additive_weight must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.gate_strength) {
            return Err(Error::InvalidConfig("gate_strength must lie in [0, 1]".into()));
        }
        if !(self.gate_exponent >= 0.0 && self.gate_exponent.is_finite()) {
            return Err(Error::InvalidConfig("gate_exponent must be >= 0".into()));
        }
        Ok(())
    }
}

/// Scalar fusion kernel: `delta * ((1 - beta) + beta * g^gamma) + alpha * g^gamma`.
#[inline]
pub fn fuse_value(delta: f64, gate: f64, cfg: &FusionConfig) -> f64 {
    let g = gate.powf(cfg.gate_exponent);
    delta * ((1.0 - cfg.gate_strength) + cfg.gate_strength * g) + cfg.additive_weight * g
}

pub fn fuse(delta: &Grid, gate: &Grid, cfg: &FusionConfig) -> Result<Grid> {
    delta.zip_map(gate, |d, g| fuse_value(d, g, cfg))
}

/// Clamp to `[0, 1]`; only the upper bound can bind for fused scores.
pub fn clip_unit(score: &Grid) -> Grid {
    score.map(|v| v.clamp(0.0, 1.0))
}

/// Interleaved RGB image with `f64` channels on the 0–255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "{} channel values for a {height}x{width} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rounds and saturates to 8 bits.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Channel-wise mean of two images, kept in floating point.
pub fn average_image(a: &RgbImage, b: &RgbImage) -> Result<RgbImage> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "images {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| 0.5 * (x + y))
        .collect();
    RgbImage::new(a.height, a.width, data)
}

/// Replace each pixel with the mean of its superpixel.
pub fn regional_pool(score: &Grid, labels: &SuperpixelLabels) -> Result<Grid> {
    if score.dims() != labels.dims() {
        return Err(Error::ShapeMismatch(format!(
            "score {:?} vs labels {:?}",
            score.dims(),
            labels.dims()
        )));
    }
    let n = labels.region_count();
    let mut sums = vec![0.0f64; n];
    let mut counts = vec![0usize; n];
    for (&l, &v) in labels.as_slice().iter().zip(score.as_slice()) {
        sums[l as usize] += v;
        counts[l as usize] += 1;
    }
    let mut means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    // second pass: corrected two-pass mean, makes pooling a constant region exact
    let mut residuals = vec![0.0f64; n];
    for (&l, &v) in labels.as_slice().iter().zip(score.as_slice()) {
        residuals[l as usize] += v - means[l as usize];
    }
    for ((m, r), &c) in means.iter_mut().zip(&residuals).zip(&counts) {
        if c > 0 {
            *m += r / c as f64;
        }
    }
    let (h, w) = score.dims();
    Grid::from_vec(
        h,
        w,
        labels.as_slice().iter().map(|&l| means[l as usize]).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_scalar_cases() {
        let cfg = FusionConfig::default();
        assert!((fuse_value(0.5, 0.0, &cfg) - 0.15).abs() < 1e-15);
        assert!((fuse_value(0.5, 1.0, &cfg) - 0.6).abs() < 1e-15);
        assert_eq!(fuse_value(0.0, 0.0, &cfg), 0.0);
        assert!((fuse_value(1.0, 1.0, &cfg) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_make_fusion_identity() {
        let cfg = FusionConfig {
            additive_weight: 0.0,
            gate_strength: 0.0,
            gate_exponent: 1.0,
        };
        for d in [0.0, 0.13, 0.5, 1.0] {
            for g in [0.0, 0.4, 1.0] {
                assert_eq!(fuse_value(d, g, &cfg), d);
            }
        }
    }

    #[test]
    fn clip_cases() {
        let g = Grid::from_vec(1, 4, vec![1.1, 0.6, 0.0, -0.2]).unwrap();
        assert_eq!(clip_unit(&g).as_slice(), &[1.0, 0.6, 0.0, 0.0]);
    }

    #[test]
    fn average_image_cases() {
        let a = RgbImage::new(1, 1, vec![0.0, 255.0, 10.0]).unwrap();
        let b = RgbImage::new(1, 1, vec![255.0, 0.0, 10.0]).unwrap();
        let m = average_image(&a, &b).unwrap();
        assert_eq!(m.pixel(0, 0), [127.5, 127.5, 10.0]);
        assert_eq!(m, average_image(&b, &a).unwrap());
        assert_eq!(average_image(&a, &a).unwrap(), a);
        let c = RgbImage::new(1, 2, vec![0.0; 6]).unwrap();
        assert!(average_image(&a, &c).is_err());
    }

    #[test]
    fn pooling_cases() {
        let labels = SuperpixelLabels::from_raw(1, 4, vec![0, 0, 0, 1]).unwrap();
        let score = Grid::from_vec(1, 4, vec![0.2, 0.4, 0.6, 0.9]).unwrap();
        let pooled = regional_pool(&score, &labels).unwrap();
        for v in &pooled.as_slice()[..3] {
            assert!((v - 0.4).abs() < 1e-15);
        }
        assert_eq!(pooled.get(0, 3), 0.9);
        assert_eq!(regional_pool(&pooled, &labels).unwrap(), pooled);

        let flat = Grid::filled(1, 4, 0.3);
        assert_eq!(regional_pool(&flat, &labels).unwrap(), flat);
    }

    #[test]
    fn config_ranges_checked() {
        assert!(FusionConfig::default().validate().is_ok());
        let bad = FusionConfig {
            gate_strength: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
