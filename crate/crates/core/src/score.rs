//! Per-prompt dense concept scores.
//!
//! For prompt `k` at date `t` the score at pixel `x` is the larger of the best
//! confidence-weighted instance mask value and the dense-branch response:
//! `S(x) = max(max_i conf_i * mask_i(x), dense(x))`, with an empty instance set
//! contributing 0 and a missing dense branch treated as all-zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::tensorio::DateBundle;

/// One retained detection: a soft mask at native resolution and its confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub mask: Grid,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetentionConfig {
    pub confidence_threshold: f64,
    pub top_r: usize,
}

impl Default for RetentionConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.5,
            top_r: 30,
        }
    }
}

impl RetentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_r == 0 {
            return Err(Error::InvalidConfig("top_r must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::InvalidConfig(
                "confidence_threshold must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Keep instances with `confidence >= threshold`, best first, at most `top_r`.
///
/// The sort is stable, so equal confidences keep their input order.
pub fn filter_instances<'a>(
    instances: &'a [InstanceRecord],
    cfg: &RetentionConfig,
) -> Vec<&'a InstanceRecord> {
    let mut kept: Vec<&InstanceRecord> = instances
        .iter()
        .filter(|r| r.confidence >= cfg.confidence_threshold)
        .collect();
    kept.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    kept.truncate(cfg.top_r);
    kept
}

/// Source taps for one output coordinate along one axis.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

/// Half-pixel-center sampling positions: `src = (dst + 0.5) * (n_src / n_dst) - 0.5`,
/// clamped to `[0, n_src - 1]`.
fn axis_taps(n_src: usize, n_dst: usize) -> Vec<Tap> {
    let scale = n_src as f64 / n_dst as f64;
    let last = (n_src - 1) as f64;
    (0..n_dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(n_src - 1);
            Tap {
                lo,
                hi,
                frac: s - lo as f64,
            }
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Precomputed bilinear resampling from one grid size to another.
#[derive(Debug, Clone)]
pub struct Resampler {
    src: (usize, usize),
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

impl Resampler {
    pub fn new(src: (usize, usize), dst: (usize, usize)) -> Result<Self> {
        if src.0 == 0 || src.1 == 0 || dst.0 == 0 || dst.1 == 0 {
            return Err(Error::ZeroDimension);
        }
        Ok(Self {
            src,
            rows: axis_taps(src.0, dst.0),
            cols: axis_taps(src.1, dst.1),
        })
    }

    /// Calls `f(flat_index, value)` for every output pixel in raster order.
    fn for_each(&self, grid: &Grid, mut f: impl FnMut(usize, f64)) {
        debug_assert_eq!(grid.dims(), self.src);
        let src = grid.as_slice();
        let sw = self.src.1;
        let mut idx = 0;
        for r in &self.rows {
            let top = &src[r.lo * sw..(r.lo + 1) * sw];
            let bottom = &src[r.hi * sw..(r.hi + 1) * sw];
            for c in &self.cols {
                let upper = lerp(top[c.lo], top[c.hi], c.frac);
                let lower = lerp(bottom[c.lo], bottom[c.hi], c.frac);
                f(idx, lerp(upper, lower, r.frac));
                idx += 1;
            }
        }
    }

    pub fn apply(&self, grid: &Grid) -> Result<Grid> {
        if grid.dims() != self.src {
            return Err(Error::ShapeMismatch(format!(
                "resampler built for {:?}, grid is {:?}",
                self.src,
                grid.dims()
            )));
        }
        let mut out = Vec::with_capacity(self.rows.len() * self.cols.len());
        self.for_each(grid, |_, v| out.push(v));
        Grid::from_vec(self.rows.len(), self.cols.len(), out)
    }
}

/// Bilinear resize with half-pixel centers and border clamping.
pub fn upsample_bilinear(grid: &Grid, height: usize, width: usize) -> Result<Grid> {
    if grid.dims() == (height, width) {
        return Ok(grid.clone());
    }
    Resampler::new(grid.dims(), (height, width))?.apply(grid)
}

/// Dense score of a single prompt from its retained instances and optional
/// dense branch.
pub fn build_concept_score(
    retained: &[&InstanceRecord],
    dense: Option<&Grid>,
    height: usize,
    width: usize,
) -> Result<Grid> {
    if height == 0 || width == 0 {
        return Err(Error::ZeroDimension);
    }
    let mut out = match dense {
        Some(d) => upsample_bilinear(d, height, width)?,
        None => Grid::zeros(height, width),
    };
    let mut cached: Option<Resampler> = None;
    for inst in retained {
        let conf = inst.confidence;
        let acc = out.as_mut_slice();
        if inst.mask.dims() == (height, width) {
            for (o, &m) in acc.iter_mut().zip(inst.mask.as_slice()) {
                *o = o.max(conf * m);
            }
            continue;
        }
        if cached.as_ref().map(|r| r.src) != Some(inst.mask.dims()) {
            cached = Some(Resampler::new(inst.mask.dims(), (height, width))?);
        }
        let resampler = cached.as_ref().expect("resampler cached above");
        resampler.for_each(&inst.mask, |i, m| acc[i] = acc[i].max(conf * m));
    }
    Ok(out)
}

/// `K` per-prompt score maps over one `H × W` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreStack {
    maps: Vec<Grid>,
}

impl ScoreStack {
    pub fn new(maps: Vec<Grid>) -> Result<Self> {
        let first = maps.first().ok_or(Error::EmptyPromptSet)?;
        let dims = first.dims();
        if let Some(bad) = maps.iter().find(|m| m.dims() != dims) {
            return Err(Error::ShapeMismatch(format!(
                "score maps of {:?} and {:?}",
                dims,
                bad.dims()
            )));
        }
        Ok(Self { maps })
    }

    /// Number of prompts `K`.
    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.maps[0].dims()
    }

    pub fn map(&self, k: usize) -> Result<&Grid> {
        self.maps.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            len: self.maps.len(),
        })
    }

    pub fn maps(&self) -> &[Grid] {
        &self.maps
    }
}

/// Score maps for every vocabulary prompt of one date.
pub fn build_score_stack(
    date: &DateBundle,
    height: usize,
    width: usize,
    cfg: &RetentionConfig,
) -> Result<ScoreStack> {
    let maps = date
        .prompts
        .iter()
        .map(|p| {
            let retained = filter_instances(&p.instances, cfg);
            build_concept_score(&retained, p.dense.as_ref(), height, width)
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreStack::new(maps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(conf: f64) -> InstanceRecord {
        InstanceRecord {
            mask: Grid::filled(1, 1, 1.0),
            confidence: conf,
        }
    }

    #[test]
    fn filter_drops_low_confidence_and_sorts() {
        let xs = vec![inst(0.9), inst(0.4), inst(0.7)];
        let kept = filter_instances(&xs, &RetentionConfig::default());
        let confs: Vec<f64> = kept.iter().map(|r| r.confidence).collect();
        assert_eq!(confs, vec![0.9, 0.7]);
    }

    #[test]
    fn filter_empty() {
        assert!(filter_instances(&[], &RetentionConfig::default()).is_empty());
    }

    #[test]
    fn filter_truncates_stably() {
        let xs: Vec<InstanceRecord> = (0..40)
            .map(|i| InstanceRecord {
                mask: Grid::filled(1, 1, i as f64),
                confidence: 0.9,
            })
            .collect();
        let kept = filter_instances(&xs, &RetentionConfig::default());
        assert_eq!(kept.len(), 30);
        for (i, r) in kept.iter().enumerate() {
            assert_eq!(r.mask.get(0, 0), i as f64);
        }
    }

    #[test]
    fn constant_grid_stays_constant() {
        let g = Grid::filled(3, 5, 0.7);
        let up = upsample_bilinear(&g, 17, 11).unwrap();
        assert!(up.as_slice().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn single_cell_broadcasts() {
        let g = Grid::filled(1, 1, 0.42);
        let up = upsample_bilinear(&g, 4, 4).unwrap();
        assert!(up.as_slice().iter().all(|&v| v == 0.42));
    }

    #[test]
    fn half_pixel_ramp() {
        // hand evaluation: src x = (d + 0.5) / 2 - 0.5 -> -0.25, 0.25, 0.75, 1.25
        let g = Grid::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
        let up = upsample_bilinear(&g, 1, 4).unwrap();
        assert_eq!(up.as_slice(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn zero_dimension_is_rejected() {
        let g = Grid::filled(2, 2, 0.0);
        assert!(matches!(upsample_bilinear(&g, 0, 3), Err(Error::ZeroDimension)));
    }

    #[test]
    fn concept_score_scalar_case() {
        let i = InstanceRecord {
            mask: Grid::filled(1, 1, 0.5),
            confidence: 0.9,
        };
        let dense = Grid::filled(1, 1, 0.3);
        let s = build_concept_score(&[&i], Some(&dense), 1, 1).unwrap();
        assert!((s.get(0, 0) - 0.45).abs() < 1e-15);
    }

    #[test]
    fn concept_score_empty_conventions() {
        let s = build_concept_score(&[], None, 3, 3).unwrap();
        assert!(s.as_slice().iter().all(|&v| v == 0.0));
        let dense = Grid::filled(3, 3, 0.6);
        let s = build_concept_score(&[], Some(&dense), 3, 3).unwrap();
        assert!(s.as_slice().iter().all(|&v| v == 0.6));
    }

    #[test]
    fn score_stack_rejects_mixed_dims() {
        assert!(ScoreStack::new(vec![Grid::zeros(2, 2), Grid::zeros(2, 3)]).is_err());
        assert!(ScoreStack::new(vec![]).is_err());
    }
}
