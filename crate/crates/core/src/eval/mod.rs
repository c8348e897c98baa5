//! Probing what pretraining encoded: the position linear probe, basis
//! diagnostics and the ablation runner.

mod ablation;
mod diagnostics;
mod plot;
mod probe;

pub use ablation::{loss_window_means, run_ablation, AblationAxis, AblationGrid, AblationRow, AblationValue};
pub use diagnostics::{
    basis_diagnostics, basis_stats, numerical_rank, BasisSummary, VolumeBasisStats, RANK_TOLERANCE,
};
pub use plot::{histogram, render_loss_curve, render_summary, PlotEntry};
pub use probe::{
    assert_disjoint, binomial_interval, draw_probe_crops, fit_and_score, fit_probe, linear_probe,
    probe_volumes, shuffle_labels, standardizer, LinearProbe, ProbeConfig, ProbeCrops, ProbeGeometry,
    ProbeResult, ProbeSample,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryError;
use crate::loss::LossError;
use crate::model::{Encoder, ModelError};
use crate::train::{read_volume_dir, TrainConfig, TrainError, TrainState};
use crate::volume::{resize_volume, PhantomError, Volume, VolumeError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("evaluation volumes also used for pretraining: {0:?}")]
    Leak(Vec<String>),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("plot: {0}")]
    Plot(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Probe and basis statistics of one encoder, with the random-init baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub probe: ProbeResult,
    pub random_init_probe: ProbeResult,
    pub basis: BasisSummary,
    pub random_init_basis_mean_abs_s: f64,
}

pub fn probe_geometry(config: &TrainConfig) -> ProbeGeometry {
    ProbeGeometry {
        working_shape: config.working_shape,
        grid: config.grid,
        crop_size: config.effective_crop_size(),
        input_shape: config.encoder.input_shape,
    }
}

/// Ids of the volumes a config pretrains on.
pub fn pretraining_ids(config: &TrainConfig) -> Result<Vec<String>, EvalError> {
    match &config.data.dir {
        Some(dir) => Ok(read_volume_dir(dir)?.iter().map(|v| v.id().to_string()).collect()),
        None => Ok(config
            .data
            .sample_seeds()
            .map(|s| config.data.phantom.sample_id(s))
            .collect()),
    }
}

/// Held-out volumes for probing: phantoms from the probe seed range, or the
/// `.vol1` files of `dir`, resized to the working shape. Returns the volumes
/// and how many of them (from the front) form the probe's training split.
pub fn held_out_volumes(
    config: &TrainConfig,
    dir: Option<&std::path::Path>,
) -> Result<(Vec<Volume>, usize), EvalError> {
    let p = &config.probe;
    let (volumes, num_train) = match dir {
        None => (
            probe_volumes(&config.data.phantom, config.data.volume_shape, config.working_shape, p)?,
            p.train_volumes,
        ),
        Some(dir) => {
            let raw = read_volume_dir(dir)?;
            let n = raw.len();
            let eval = ((n * p.eval_volumes) as f64 / (p.train_volumes + p.eval_volumes) as f64)
                .round()
                .max(1.0) as usize;
            let resized = raw
                .iter()
                .map(|v| resize_volume(v, config.working_shape))
                .collect::<Result<Vec<_>, _>>()?;
            (resized, n.saturating_sub(eval))
        }
    };
    let ids = pretraining_ids(config)?;
    assert_disjoint(ids.iter().map(String::as_str), volumes.iter().map(Volume::id))?;
    Ok((volumes, num_train))
}

/// Probes `encoder` and a freshly initialized encoder of the same config on
/// identical crops, and summarizes its bases on the evaluation volumes.
pub fn evaluate(
    config: &TrainConfig,
    encoder: &Encoder<f32>,
    dir: Option<&std::path::Path>,
) -> Result<Evaluation, EvalError> {
    let (volumes, num_train) = held_out_volumes(config, dir)?;
    let geometry = probe_geometry(config);
    let crops = draw_probe_crops(volumes, num_train, geometry, &config.probe)?;
    let random = TrainState::new(config)?.encoder;
    let eval_volumes: Vec<Volume> = crops.eval.iter().map(|(v, _)| v.clone()).collect();
    Ok(Evaluation {
        probe: linear_probe(encoder, &crops, geometry, &config.probe)?,
        random_init_probe: linear_probe(&random, &crops, geometry, &config.probe)?,
        basis: basis_diagnostics(encoder, &eval_volumes, config.grid)?,
        random_init_basis_mean_abs_s: basis_diagnostics(&random, &eval_volumes, config.grid)?.mean_abs_s,
    })
}
