//! Volume-contrast self-supervised pretraining at desk scale.
//!
//! A volume is tiled into `n` base crops whose embeddings act as positional
//! class assignments; random crops are embedded with the same network and
//! trained to match their overlap proportions with every base through
//! cosine similarity, while a regularizer pushes the bases apart.

// Index loops mirror the formulas; `!(x > eps)` also rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod eval;
pub mod geometry;
pub mod loss;
pub mod model;
pub mod optim;
pub mod real;
pub mod schedule;
pub mod train;
pub mod volume;

pub use geometry::{
    crop_and_resize, make_base_grid, position_label, sample_random_crop, BaseGrid, CropRegion,
    GeometryError, PositionLabel,
};
pub use real::Real;
pub use volume::{Shape3, Volume, VolumeError};
