//! SLIC superpixels (Achanta et al.), computed in CIELAB.
//!
//! Grid-seeded centers are nudged to the lowest-gradient pixel of their 3×3
//! neighborhood, then refined by local k-means in a `2s × 2s` window with the
//! combined distance `sqrt(d_lab² + (m / s)² · d_xy²)`. Afterwards undersized
//! fragments are merged into their largest 4-adjacent neighbor so every label
//! is a single 4-connected region, and labels are renumbered in raster order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{ArrayData, DenseArray};

use super::RgbImage;

/// Segment count used at 512×512; other sizes scale with pixel count.
pub const REFERENCE_SEGMENTS: usize = 256;
const REFERENCE_PIXELS: usize = 512 * 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicConfig {
    /// Requested superpixel count; `None` scales [`REFERENCE_SEGMENTS`] by image area.
    pub n_segments: Option<usize>,
    pub compactness: f64,
    pub iterations: usize,
    /// Fragments smaller than this fraction of the mean segment area get merged.
    pub min_region_fraction: f64,
}

impl Default for SlicConfig {
    fn default() -> Self {
        Self {
            n_segments: None,
            compactness: 10.0,
            iterations: 10,
            min_region_fraction: 0.25,
        }
    }
}

impl SlicConfig {
    pub fn with_segments(n: usize) -> Self {
        Self {
            n_segments: Some(n),
            ..Self::default()
        }
    }

    pub fn segments_for(&self, height: usize, width: usize) -> usize {
        self.n_segments.unwrap_or_else(|| {
            let scaled = REFERENCE_SEGMENTS as f64 * (height * width) as f64 / REFERENCE_PIXELS as f64;
            (scaled.round() as usize).max(1)
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_segments == Some(0) {
            return Err(Error::InvalidConfig("n_segments must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.compactness >= 0.0 && self.compactness.is_finite()) {
            return Err(Error::InvalidConfig("compactness must be >= 0".into()));
        }
        if !(self.min_region_fraction >= 0.0 && self.min_region_fraction.is_finite()) {
            return Err(Error::InvalidConfig("min_region_fraction must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-pixel region ids, contiguous in `0..region_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelLabels {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    count: usize,
}

impl SuperpixelLabels {
    /// Wraps an existing labelling; ids must cover `0..n` without gaps.
    pub fn from_raw(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for a {height}x{width} grid",
                labels.len()
            )));
        }
        let count = labels.iter().max().map_or(0, |&m| m as usize + 1);
        let mut seen = vec![false; count];
        labels.iter().for_each(|&l| seen[l as usize] = true);
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidConfig("superpixel labels are not contiguous".into()));
        }
        Ok(Self {
            height,
            width,
            labels,
            count,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn region_count(&self) -> usize {
        self.count
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.labels
    }

    /// int32 `(H, W)` array for debugging dumps.
    pub fn to_array(&self) -> DenseArray {
        DenseArray::new(
            vec![self.height, self.width],
            ArrayData::I32(self.labels.iter().map(|&l| l as i32).collect()),
        )
        .expect("label shape is consistent")
    }
}

/// sRGB (0–255, D65) to CIELAB.
pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    fn linearize(c: f64) -> f64 {
        let c = (c / 255.0).clamp(0.0, 1.0);
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    fn f(t: f64) -> f64 {
        if t > 216.0 / 24389.0 {
            t.cbrt()
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    }
    let [r, g, b] = rgb.map(linearize);
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let (fx, fy, fz) = (f(x / 0.950_47), f(y), f(z / 1.088_83));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Debug, Clone, Copy)]
struct Center {
    lab: [f64; 3],
    y: f64,
    x: f64,
}

fn lab_dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

pub fn slic_segment(image: &RgbImage, cfg: &SlicConfig) -> Result<SuperpixelLabels> {
    cfg.validate()?;
    let (h, w) = image.dims();
    let pixels = h * w;
    if pixels == 0 {
        return Err(Error::ZeroDimension);
    }
    let n = cfg.segments_for(h, w);
    if n > pixels {
        return Err(Error::TooManySegments {
            requested: n,
            pixels,
        });
    }

    let lab: Vec<[f64; 3]> = image
        .as_slice()
        .chunks_exact(3)
        .map(|p| rgb_to_lab([p[0], p[1], p[2]]))
        .collect();

    let step = (pixels as f64 / n as f64).sqrt();
    let mut centers = seed_centers(&lab, h, w, n, step);
    let spatial = (cfg.compactness / step).powi(2);
    let radius = step.ceil() as isize;

    let mut labels = vec![u32::MAX; pixels];
    let mut dist = vec![f64::INFINITY; pixels];
    for _ in 0..cfg.iterations {
        labels.fill(u32::MAX);
        dist.fill(f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let (cy, cx) = (c.y.round() as isize, c.x.round() as isize);
            let y0 = (cy - radius).max(0) as usize;
            let y1 = ((cy + radius) as usize).min(h - 1);
            let x0 = (cx - radius).max(0) as usize;
            let x1 = ((cx + radius) as usize).min(w - 1);
            for y in y0..=y1 {
                let dy = y as f64 - c.y;
                for x in x0..=x1 {
                    let p = y * w + x;
                    let dx = x as f64 - c.x;
                    let d = lab_dist2(&lab[p], &c.lab) + spatial * (dx * dx + dy * dy);
                    // strict: at equal distance the lower center index keeps the pixel
                    if d < dist[p] {
                        dist[p] = d;
                        labels[p] = k as u32;
                    }
                }
            }
        }
        update_centers(&mut centers, &labels, &lab, w);
    }

    // pixels no window reached fall back to the globally nearest center
    for p in 0..pixels {
        if labels[p] == u32::MAX {
            let (y, x) = ((p / w) as f64, (p % w) as f64);
            let mut best = (f64::INFINITY, 0u32);
            for (k, c) in centers.iter().enumerate() {
                let d = lab_dist2(&lab[p], &c.lab)
                    + spatial * ((y - c.y).powi(2) + (x - c.x).powi(2));
                if d < best.0 {
                    best = (d, k as u32);
                }
            }
            labels[p] = best.1;
        }
    }

    let min_size = cfg.min_region_fraction * pixels as f64 / n as f64;
    let merged = enforce_connectivity(&labels, h, w, min_size);
    SuperpixelLabels::from_raw(h, w, merged)
}

fn seed_centers(lab: &[[f64; 3]], h: usize, w: usize, n: usize, step: f64) -> Vec<Center> {
    let rows = ((h as f64 / step).round() as usize).clamp(1, h);
    let cols = ((n as f64 / rows as f64).round() as usize).clamp(1, w);

    let gradient = |y: usize, x: usize| -> f64 {
        let l = |yy: usize, xx: usize| &lab[yy * w + xx];
        let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        lab_dist2(l(y, xp), l(y, xm)) + lab_dist2(l(yp, x), l(ym, x))
    };

    let mut centers = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let gy = ((i as f64 + 0.5) * h as f64 / rows as f64) as usize;
        for j in 0..cols {
            let gx = ((j as f64 + 0.5) * w as f64 / cols as f64) as usize;
            let (mut by, mut bx) = (gy, gx);
            let mut best = gradient(gy, gx);
            for y in gy.saturating_sub(1)..=(gy + 1).min(h - 1) {
                for x in gx.saturating_sub(1)..=(gx + 1).min(w - 1) {
                    let g = gradient(y, x);
                    if g < best {
                        best = g;
                        (by, bx) = (y, x);
                    }
                }
            }
            centers.push(Center {
                lab: lab[by * w + bx],
                y: by as f64,
                x: bx as f64,
            });
        }
    }
    centers
}

fn update_centers(centers: &mut [Center], labels: &[u32], lab: &[[f64; 3]], w: usize) {
    let mut acc = vec![[0.0f64; 6]; centers.len()];
    for (p, &l) in labels.iter().enumerate() {
        if l == u32::MAX {
            continue;
        }
        let a = &mut acc[l as usize];
        a[0] += lab[p][0];
        a[1] += lab[p][1];
        a[2] += lab[p][2];
        a[3] += (p / w) as f64;
        a[4] += (p % w) as f64;
        a[5] += 1.0;
    }
    for (c, a) in centers.iter_mut().zip(&acc) {
        if a[5] > 0.0 {
            let n = a[5];
            c.lab = [a[0] / n, a[1] / n, a[2] / n];
            c.y = a[3] / n;
            c.x = a[4] / n;
        }
    }
}

/// 4-connected components of equal labels, numbered in raster order.
fn components4(labels: &[u32], h: usize, w: usize) -> (Vec<u32>, Vec<usize>) {
    let mut comp = vec![u32::MAX; labels.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..labels.len() {
        if comp[start] != u32::MAX {
            continue;
        }
        let id = sizes.len() as u32;
        let value = labels[start];
        comp[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(p) = stack.pop() {
            size += 1;
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if comp[q] == u32::MAX && labels[q] == value {
                    comp[q] = id;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        sizes.push(size);
    }
    (comp, sizes)
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        let next = parent[i as usize];
        parent[i as usize] = parent[next as usize];
        i = next;
    }
    i
}

fn enforce_connectivity(labels: &[u32], h: usize, w: usize, min_size: f64) -> Vec<u32> {
    let (comp, mut sizes) = components4(labels, h, w);
    let n = sizes.len();

    let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); n];
    for p in 0..comp.len() {
        let (y, x) = (p / w, p % w);
        let a = comp[p];
        let mut link = |b: u32| {
            if a != b {
                adjacency[a as usize].push(b);
                adjacency[b as usize].push(a);
            }
        };
        if x + 1 < w {
            link(comp[p + 1]);
        }
        if y + 1 < h {
            link(comp[p + w]);
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }

    let mut parent: Vec<u32> = (0..n as u32).collect();
    loop {
        let mut changed = false;
        for c in 0..n as u32 {
            if find(&mut parent, c) != c || (sizes[c as usize] as f64) >= min_size {
                continue;
            }
            let mut best: Option<(usize, u32)> = None;
            let neighbors = std::mem::take(&mut adjacency[c as usize]);
            for &nb in &neighbors {
                let r = find(&mut parent, nb);
                if r == c {
                    continue;
                }
                let s = sizes[r as usize];
                if best.map_or(true, |(bs, br)| s > bs || (s == bs && r < br)) {
                    best = Some((s, r));
                }
            }
            match best {
                Some((_, target)) => {
                    parent[c as usize] = target;
                    sizes[target as usize] += sizes[c as usize];
                    adjacency[target as usize].extend(neighbors);
                    changed = true;
                }
                None => adjacency[c as usize] = neighbors,
            }
        }
        if !changed {
            break;
        }
    }

    let mut remap = vec![u32::MAX; n];
    let mut next = 0u32;
    comp.iter()
        .map(|&c| {
            let r = find(&mut parent, c) as usize;
            if remap[r] == u32::MAX {
                remap[r] = next;
                next += 1;
            }
            remap[r]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(h: usize, w: usize, rgb: [f64; 3]) -> RgbImage {
        RgbImage::from_fn(h, w, |_, _| rgb)
    }

    #[test]
    fn lab_reference_points() {
        let white = rgb_to_lab([255.0; 3]);
        assert!((white[0] - 100.0).abs() < 1e-3 && white[1].abs() < 1e-2 && white[2].abs() < 1e-2);
        let black = rgb_to_lab([0.0; 3]);
        assert!(black.iter().all(|v| v.abs() < 1e-9));
        // skimage.color.rgb2lab([[[1, 0, 0]]]) -> (53.2408, 80.0925, 67.2032)
        let red = rgb_to_lab([255.0, 0.0, 0.0]);
        assert!((red[0] - 53.2408).abs() < 1e-3);
        assert!((red[1] - 80.0925).abs() < 1e-2);
        assert!((red[2] - 67.2032).abs() < 1e-2);
    }

    #[test]
    fn one_segment_labels_everything_zero() {
        let img = uniform(13, 29, [10.0, 200.0, 30.0]);
        let l = slic_segment(&img, &SlicConfig::with_segments(1)).unwrap();
        assert_eq!(l.region_count(), 1);
        assert!(l.as_slice().iter().all(|&v| v == 0));
    }

    #[test]
    fn uniform_image_tiles_evenly() {
        let img = uniform(64, 64, [120.0; 3]);
        let l = slic_segment(&img, &SlicConfig::with_segments(16)).unwrap();
        // skimage.segmentation.slic gives 16 regions here as well
        assert!((8..=24).contains(&l.region_count()), "{}", l.region_count());
    }

    #[test]
    fn two_tone_boundary_follows_edge() {
        let img = RgbImage::from_fn(64, 64, |_, x| {
            if x < 32 {
                [30.0, 60.0, 200.0]
            } else {
                [255.0, 255.0, 255.0]
            }
        });
        let l = slic_segment(&img, &SlicConfig::with_segments(2)).unwrap();
        assert_eq!(l.region_count(), 2);
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(l.get(y, x), if x < 32 { 0 } else { 1 });
            }
        }
    }

    #[test]
    fn too_many_segments() {
        let img = uniform(4, 4, [0.0; 3]);
        assert!(matches!(
            slic_segment(&img, &SlicConfig::with_segments(17)),
            Err(Error::TooManySegments { .. })
        ));
    }

    #[test]
    fn default_segment_count_scales_with_area() {
        let cfg = SlicConfig::default();
        assert_eq!(cfg.segments_for(512, 512), 256);
        assert_eq!(cfg.segments_for(256, 256), 64);
        assert_eq!(cfg.segments_for(1, 1), 1);
    }

    #[test]
    fn labels_must_be_contiguous() {
        assert!(SuperpixelLabels::from_raw(1, 3, vec![0, 2, 2]).is_err());
        assert!(SuperpixelLabels::from_raw(1, 3, vec![1, 0, 1]).is_ok());
    }
}
