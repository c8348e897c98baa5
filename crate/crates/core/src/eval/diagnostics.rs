//! Basis similarity and rank of trained embeddings.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::{crop_and_resize, make_base_grid};
use crate::loss::{basis_similarity, mean_abs_offdiag};
use crate::model::Encoder;
use crate::volume::{Shape3, Volume};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeBasisStats {
    pub volume_id: String,
    pub mean_abs_s: f64,
    pub max_abs_s: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSummary {
    pub mean_abs_s: f64,
    pub max_abs_s: f64,
    pub min_rank: usize,
    pub num_bases: usize,
    pub per_volume: Vec<VolumeBasisStats>,
    /// Every off-diagonal `|s_ij|`, `i < j`, for histograms.
    pub abs_s: Vec<f64>,
}

/// Numerical rank of the rows of `q`.
pub fn numerical_rank(q: &[Vec<f64>]) -> usize {
    if q.is_empty() || q[0].is_empty() {
        return 0;
    }
    let m = DMatrix::from_fn(q.len(), q[0].len(), |i, j| q[i][j]);
    let sv = m.singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * top).count()
}

/// Statistics of `q` for one set of bases.
pub fn basis_stats(volume_id: &str, q: &[Vec<f64>]) -> Result<(VolumeBasisStats, Vec<f64>), EvalError> {
    let s = basis_similarity(q)?;
    let mut abs = Vec::new();
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            abs.push(s[i][j].abs());
        }
    }
    Ok((
        VolumeBasisStats {
            volume_id: volume_id.to_string(),
            mean_abs_s: mean_abs_offdiag(&s),
            max_abs_s: abs.iter().cloned().fold(0.0, f64::max),
            rank: numerical_rank(q),
        },
        abs,
    ))
}

/// Embeds the base crops of every volume and summarizes their similarity.
pub fn basis_diagnostics(
    encoder: &Encoder<f32>,
    volumes: &[Volume],
    grid: Shape3,
) -> Result<BasisSummary, EvalError> {
    if volumes.is_empty() {
        return Err(EvalError::EmptyDataset("no volumes for basis diagnostics".into()));
    }
    let input = encoder.config().input_shape;
    let mut per_volume = Vec::with_capacity(volumes.len());
    let mut abs_s = Vec::new();
    let mut num_bases = 0;
    for v in volumes {
        let g = make_base_grid(v.shape(), grid)?;
        num_bases = g.len();
        let mut q = Vec::with_capacity(g.len());
        for cell in g.cells() {
            let crop = crop_and_resize(v, cell, input)?;
            q.push(encoder.embed_crop(&crop)?.iter().map(|&x| f64::from(x)).collect::<Vec<_>>());
        }
        let (stats, abs) = basis_stats(v.id(), &q)?;
        per_volume.push(stats);
        abs_s.extend(abs);
    }
    let m = per_volume.len() as f64;
    Ok(BasisSummary {
        mean_abs_s: per_volume.iter().map(|s| s.mean_abs_s).sum::<f64>() / m,
        max_abs_s: per_volume.iter().map(|s| s.max_abs_s).fold(0.0, f64::max),
        min_rank: per_volume.iter().map(|s| s.rank).min().unwrap_or(0),
        num_bases,
        per_volume,
        abs_s,
    })
}
