//! Competition-aware calibration and the cross-date posterior delta.
//!
//! The queried prompt's score `S` is rescaled by how clearly it dominates the
//! strongest other prompt `M` at the same pixel:
//!
//! ```text
//! P = S * (S / (S + M + eps))^rho
//! ```
//!
//! The change signal for a class is the per-pixel maximum, over the class's
//! prompt bank, of `|P_a - P_b|`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::score::ScoreStack;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            rho: 1.5,
            epsilon: 1e-6,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidConfig("rho must be a finite value >= 0".into()));
        }
        Ok(())
    }
}

/// Scalar calibration kernel.
#[inline]
pub fn calibrated_posterior(s: f64, m: f64, cfg: &CalibrationConfig) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    s * (s / (s + m + cfg.epsilon)).powf(cfg.rho)
}

/// Which prompts count as competitors when calibrating a prompt of a bank.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompetitorSet {
    /// Every other vocabulary prompt, including the rest of the bank.
    #[default]
    AllOthers,
    /// Only prompts outside the queried class's bank.
    OutsideBank,
}

/// Per-pixel maximum over all prompts except `q`; all-zero when `K = 1`.
pub fn strongest_competitor(stack: &ScoreStack, q: usize) -> Result<Grid> {
    strongest_competitor_excluding(stack, q, &[])
}

/// Like [`strongest_competitor`], additionally skipping the `excluded` prompts.
pub fn strongest_competitor_excluding(
    stack: &ScoreStack,
    q: usize,
    excluded: &[usize],
) -> Result<Grid> {
    check_index(stack, q)?;
    let (h, w) = stack.dims();
    let mut out = Grid::zeros(h, w);
    for (k, map) in stack.maps().iter().enumerate() {
        if k == q || excluded.contains(&k) {
            continue;
        }
        for (o, &v) in out.as_mut_slice().iter_mut().zip(map.as_slice()) {
            *o = o.max(v);
        }
    }
    Ok(out)
}

fn check_index(stack: &ScoreStack, q: usize) -> Result<()> {
    if q >= stack.len() {
        return Err(Error::IndexOutOfRange {
            index: q,
            len: stack.len(),
        });
    }
    Ok(())
}

/// Calibrated posterior of prompt `q` against the rest of the vocabulary.
pub fn calibrate(stack: &ScoreStack, q: usize, cfg: &CalibrationConfig) -> Result<Grid> {
    let competitor = strongest_competitor(stack, q)?;
    stack
        .map(q)?
        .zip_map(&competitor, |s, m| calibrated_posterior(s, m, cfg))
}

/// `|P_a - P_b|` per pixel.
pub fn posterior_delta(p_a: &Grid, p_b: &Grid) -> Result<Grid> {
    p_a.zip_map(p_b, |a, b| (a - b).abs())
}

/// Options for [`aggregate_prompt_deltas_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct DeltaOptions {
    /// `None` compares raw scores (calibration ablated).
    pub calibration: Option<CalibrationConfig>,
    pub competitors: CompetitorSet,
}

/// Prompt-bank change signal with default options: every prompt calibrated
/// against all other vocabulary prompts.
pub fn aggregate_prompt_deltas(
    stack_a: &ScoreStack,
    stack_b: &ScoreStack,
    prompts: &[usize],
    cfg: &CalibrationConfig,
) -> Result<Grid> {
    aggregate_prompt_deltas_with(
        stack_a,
        stack_b,
        prompts,
        &DeltaOptions {
            calibration: Some(*cfg),
            competitors: CompetitorSet::AllOthers,
        },
    )
}

pub fn aggregate_prompt_deltas_with(
    stack_a: &ScoreStack,
    stack_b: &ScoreStack,
    prompts: &[usize],
    opts: &DeltaOptions,
) -> Result<Grid> {
    if prompts.is_empty() {
        return Err(Error::EmptyPromptSet);
    }
    if stack_a.dims() != stack_b.dims() || stack_a.len() != stack_b.len() {
        return Err(Error::ShapeMismatch(format!(
            "score stacks {}x{:?} vs {}x{:?}",
            stack_a.len(),
            stack_a.dims(),
            stack_b.len(),
            stack_b.dims()
        )));
    }
    let excluded: &[usize] = match opts.competitors {
        CompetitorSet::AllOthers => &[],
        CompetitorSet::OutsideBank => prompts,
    };
    let (h, w) = stack_a.dims();
    let mut out = Grid::zeros(h, w);
    for &p in prompts {
        let posterior = |stack: &ScoreStack| -> Result<Grid> {
            match &opts.calibration {
                Some(cfg) => {
                    let m = strongest_competitor_excluding(stack, p, excluded)?;
                    stack.map(p)?.zip_map(&m, |s, m| calibrated_posterior(s, m, cfg))
                }
                None => Ok(stack.map(p)?.clone()),
            }
        };
        let delta = posterior_delta(&posterior(stack_a)?, &posterior(stack_b)?)?;
        for (o, &d) in out.as_mut_slice().iter_mut().zip(delta.as_slice()) {
            *o = o.max(d);
        }
    }
    Ok(out)
}
