//! Training-free open-vocabulary change detection.
//!
//! The engine consumes precomputed per-prompt concept evidence (instance masks
//! with confidences, optional dense maps), per-date geometry-token grids and the
//! two RGB images of a co-registered pair, and produces a binary change mask for
//! a queried concept:
//!
//! 1. [`score`]: per-prompt dense confidence maps from retained instances.
//! 2. [`posterior`]: competition-aware calibration against the strongest rival
//!    prompt, then the cross-date posterior delta pooled over a prompt bank.
//! 3. [`geogate`]: cosine-distance gate between the two token grids.
//! 4. [`consensus`]: gated fusion, clipping and superpixel-mean pooling on the
//!    average image.
//! 5. [`decode`]: 8-bit thresholding and a morphology / component filter.
//!
//! [`pipeline`] wires the stages together, [`eval`] scores predictions against
//! ground truth, [`synth`] generates deterministic fixtures and [`tensorio`]
//! owns the on-disk boundary (NPY tensors plus a JSON pair manifest).

pub mod consensus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod geogate;
pub mod grid;
pub mod pipeline;
pub mod posterior;
pub mod score;
pub mod synth;
pub mod tensorio;

pub use error::{Error, Result};
pub use grid::Grid;
